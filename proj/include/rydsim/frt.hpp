#pragma once
// Fidelity response theory: response functions from the two-time connected
// correlator of Heisenberg-picture noise operators, infidelity integrals
// against PSDs, universal Rabi-frequency scaling, fitted approximate forms,
// and the monochromatic delta-PSD probe.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rydsim/core.hpp"
#include "rydsim/noise.hpp"
#include "rydsim/protocols.hpp"
#include "rydsim/traj.hpp"

namespace rydsim {

enum class NoiseOperatorKind {
    frequency,
    intensity,
    frequency_single_atom,  // detuning of one atom (Doppler response)
    two_photon_freq_arm1,
    two_photon_freq_arm2,
    two_photon_int_arm1,
    two_photon_int_arm2,
    custom,
};

bool is_frequency_kind(NoiseOperatorKind k);

// Per-step table of the (Hermitian) noise operator on the scheme's space.
struct NoiseOperatorSchedule {
    NoiseOperatorKind kind = NoiseOperatorKind::custom;
    LevelScheme scheme;
    TimeGrid grid;
    std::function<MatrixXc(int step)> op_at_step;
};

NoiseOperatorSchedule noise_operator_schedule(const GateHamiltonian& gate,
                                              NoiseOperatorKind kind);

// I(f) on a frequency grid. Units: Hz^-2 for frequency kinds (pairs with
// S_nu in Hz^2/Hz), dimensionless for intensity kinds (pairs with RIN in
// 1/Hz).
struct ResponseFunction {
    std::vector<double> freqs_hz;
    std::vector<double> values;
    FidelityMetric metric = FidelityMetric::haar;
    NoiseOperatorKind kind = NoiseOperatorKind::frequency;
    double omega = 0.0;        // protocol Rabi tag (rad/s)
    bool ideal_protocol = true;

    // linear interpolation; clamps below the grid, zero above it
    double value_at(double f_hz) const;
};

struct ResponseOptions {
    std::optional<VectorXc> psi0;  // required for the single_state metric
    int max_nodes = 1024;          // correlator grid downsampling bound
};

std::vector<double> default_response_grid(double omega_rad, int n_points = 512);

ResponseFunction response_function(const GateHamiltonian& gate, NoiseOperatorKind kind,
                                   FidelityMetric metric, const std::vector<double>& freqs_hz,
                                   const ResponseOptions& opts = {});

// Same correlator for a large system and a single initial state, evaluated
// with forward accumulators (no propagator storage). Used for many-body
// response functions.
ResponseFunction response_single_state(const HamiltonianTable& h,
                                       const std::function<MatrixXc(int)>& op,
                                       const TimeGrid& grid, const VectorXc& psi0,
                                       const std::vector<double>& freqs_hz, int max_nodes = 1024);

struct InfidelityBreakdown {
    double total = 0.0;     // integral + dc
    double integral = 0.0;  // spectral part: int S(f) I(f) df
    double dc = 0.0;        // dc_variance * I(0)
    std::vector<double> band_edges_hz;  // histogram edges (dc excluded)
    std::vector<double> band_values;
};

InfidelityBreakdown infidelity_from_psd(const ResponseFunction& resp,
                                        const PowerSpectralDensity& psd,
                                        double dc_variance = 0.0,
                                        double band_width_hz = 250.0e3);

// g(x) with x = 2 pi f / Omega; frequency responses rescale by Omega^2,
// intensity responses collapse unscaled.
struct UniversalResponse {
    std::vector<double> x;
    std::vector<double> g;
    FidelityMetric metric = FidelityMetric::haar;
    NoiseOperatorKind kind = NoiseOperatorKind::frequency;
    bool collapse_guaranteed = true;  // false for realistic-gate responses

    double value_at(double xq) const;
};

UniversalResponse rescale_to_universal(const ResponseFunction& resp, double omega_rad);
// inverse map back to I(f) at the given Rabi frequency
ResponseFunction universal_to_response(const UniversalResponse& u, double omega_rad);

enum class UniversalForm { double_gaussian_freq, logistic_tanh_int };

struct FitParams6 {
    double a = 0, b = 0, c = 0, d = 0, e = 0, f = 0;
    UniversalForm form = UniversalForm::double_gaussian_freq;
    FidelityMetric metric = FidelityMetric::haar;

    double evaluate(double x) const;
};

// fitted universal-response presets for the ideal phase-modulated gate
enum class UniversalPreset { freq_haar, int_haar, freq_sym, int_sym };
FitParams6 universal_fit_preset(UniversalPreset which);

double approx_universal_form(const FitParams6& params, double x);

// Monte Carlo estimate of I(f0) from monochromatic injections: runs the
// trajectory ensemble at each strength (delta-PSD weight), fits the
// infidelity linearly through the origin.
struct ProbeOptions {
    long long trajectories = 20000;
    std::uint64_t seed = 0;
    FidelityMetric metric = FidelityMetric::haar;
    double virtual_z_phase = 0.0;
    int threads = 1;
};

struct ProbeResult {
    double slope = 0.0;    // estimated I(f0)
    double stderr_ = 0.0;
    bool nonlinear = false;  // quadratic component > 20% of linear at max strength
    std::vector<double> strengths;   // delta-PSD weights
    std::vector<double> infidelity;  // measured 1 - F
    std::vector<double> infid_err;
};

ProbeResult delta_psd_probe(const GateHamiltonian& gate, const ErrorModelConfig& base,
                            PsdKind kind, double f0_hz, const std::vector<double>& strengths,
                            const ProbeOptions& opts = {});

}  // namespace rydsim
