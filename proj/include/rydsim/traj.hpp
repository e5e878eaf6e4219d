#pragma once
// Monte Carlo wavefunction simulation of noisy gates with quantum jumps.
//
// Trajectories evolve a set of input columns jointly under one noise/jump
// realization. Jump branches are sampled per step with probabilities derived
// from the column-averaged source populations; the stored map is the raw
// Kraus product (always a contraction) and the sampling probability is kept
// as an importance weight, so ensemble averages of weight * quadratic
// functionals reproduce the channel exactly.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rydsim/core.hpp"
#include "rydsim/noise.hpp"
#include "rydsim/protocols.hpp"

namespace rydsim {

// Monochromatic tone injected on top of a noise channel (delta-PSD probe);
// the tone phase is drawn uniformly per trajectory.
struct MonochromaticTone {
    PsdKind kind = PsdKind::relative_intensity;
    double freq_hz = 0.0;
    double amplitude = 0.0;  // Hz for frequency kind, relative for intensity
};

struct ErrorModelConfig {
    std::optional<PowerSpectralDensity> frequency_psd;  // Hz^2/Hz
    std::optional<PowerSpectralDensity> intensity_psd;  // 1/Hz
    ShotToShotSpec shot_to_shot_intensity;              // relative
    ShotToShotSpec shot_to_shot_detuning;               // Hz
    std::vector<DecayChannel> decay_channels;
    MotionSpec motion;
    std::optional<MonochromaticTone> tone;

    bool enable_frequency_noise = true;
    bool enable_intensity_noise = true;
    bool enable_shot_to_shot = true;
    bool enable_decay = true;
    bool enable_motion = true;

    static ErrorModelConfig all_off() {
        ErrorModelConfig c;
        c.enable_frequency_noise = c.enable_intensity_noise = false;
        c.enable_shot_to_shot = c.enable_decay = c.enable_motion = false;
        return c;
    }
};

struct JumpEvent {
    double time = 0.0;
    int channel = 0;  // index into the expanded (channel x atom) list
    int atom = 0;
};

struct TrajectoryResult {
    MatrixXc map;       // dim x n_ref: Kraus product applied to the reference columns
    double weight = 1.0;
    std::vector<JumpEvent> jumps;
};

struct TrajectoryOptions {
    // reference input columns; default: computational isometry of the scheme
    std::optional<MatrixXc> reference;
    // virtual Z(-phase) applied per atom on the qubit levels after the pulse
    double virtual_z_phase = 0.0;
};

TrajectoryResult run_trajectory(const GateHamiltonian& gate, const ErrorModelConfig& config,
                                std::uint64_t seed, const TrajectoryOptions& opts = {});

enum class FidelityMetric { haar, sym, sss, single_state };

struct FidelityEstimate {
    FidelityMetric metric = FidelityMetric::sym;
    double mean = 0.0;
    double stderr_ = 0.0;
    long long trajectories = 0;
};

// Per-trajectory computational map retained for circuit simulation.
struct GateMapSample {
    Eigen::Matrix4cd map;  // comp block of CZ-frame map (virtual Z applied)
    double weight = 1.0;
    // leakage Gram matrices per class: leak prob for input rho is Tr[L rho] * weight
    std::map<std::string, Eigen::Matrix4cd> leak;
};

struct EnsembleOptions {
    int threads = 1;
    bool store_maps = false;
    TrajectoryOptions traj;
};

// Channel estimate from K trajectories. Fidelity statistics are accumulated
// streaming per metric; leakage is kept as class-resolved Gram matrices on
// the computational inputs so any input ensemble can be queried.
struct ChannelEstimate {
    long long trajectory_count = 0;
    LevelScheme scheme;

    struct Accum {
        double sum = 0.0, sum_sq = 0.0;
    };
    Accum haar, sym, sss;

    std::map<std::string, Eigen::Matrix4cd> leak_gram;  // weighted mean over trajectories

    std::vector<GateMapSample> maps;  // filled when store_maps

    // mean leak probability into a class for inputs drawn uniformly from the
    // symmetric subspace (equivalently the twelve SSS)
    double leakage_sym_average(const std::string& cls) const;
};

ChannelEstimate run_ensemble(const GateHamiltonian& gate, const ErrorModelConfig& config,
                             long long k, std::uint64_t master_seed,
                             const EnsembleOptions& opts = {});

FidelityEstimate fidelity_metric(const ChannelEstimate& ch, FidelityMetric metric);

// Gamma * integral of the total Rydberg population along the noiseless
// trajectory from the given initial state.
double decay_probability(const GateHamiltonian& gate, const VectorXc& initial_state,
                         double gamma);

// classification of a pair level configuration for leakage accounting
std::string classify_pair_levels(const LevelScheme& scheme, int level_a, int level_b);

}  // namespace rydsim
