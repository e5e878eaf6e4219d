#pragma once
// Noise power spectral densities, trace synthesis, shot-to-shot distributions,
// decay channels, and atomic motion. PSD frequency axes are in ordinary
// frequency (Hz); frequency-noise values in Hz^2/Hz, relative-intensity values
// in 1/Hz.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rydsim/core.hpp"

namespace rydsim {

enum class PsdKind { frequency, relative_intensity };

// One-sided PSD on a strictly increasing frequency grid; linear interpolation
// between grid points, zero outside the provided range.
struct PowerSpectralDensity {
    std::vector<double> freqs_hz;
    std::vector<double> values;
    PsdKind kind = PsdKind::frequency;

    void validate() const;
    double value_at(double f_hz) const;
    double max_freq() const { return freqs_hz.empty() ? 0.0 : freqs_hz.back(); }
    // trapezoid integral of the PSD over its support
    double total_power() const;
};

PowerSpectralDensity load_psd(const std::string& path, PsdKind kind);
void save_psd(const PowerSpectralDensity& psd, const std::string& path);

struct NoiseTrace {
    TimeGrid grid;
    std::vector<double> values;  // Hz for frequency noise, dimensionless for intensity
};

// Deterministic counter-based RNG seeding: child = derive_seed(master, index).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

// Synthesizes h(t) = sum_f sqrt(2 S(f) df) cos(2 pi f t + phi_f) with
// i.i.d. uniform random phases per frequency bin; the PSD is resampled onto a
// uniform grid with df = 1/(2 T). Requires dt < 1/(4 f_max).
NoiseTrace sample_trace(const PowerSpectralDensity& psd, const TimeGrid& grid,
                        std::uint64_t rng_seed);

struct ShotToShotSpec {
    double sigma = 0.0;  // relative for intensity, Hz for detuning; Gaussian
    void validate() const;
};

double sample_shot_to_shot(const ShotToShotSpec& spec, std::uint64_t rng_seed);

enum class PsdTransformKind { cavity_lorentzian, moving_average };

struct PsdTransform {
    PsdTransformKind kind;
    double parameter_hz;  // cavity linewidth, or moving-average window width
};

PowerSpectralDensity transform_psd(const PowerSpectralDensity& psd, const PsdTransform& t);

// Decay channel source -> target with either a constant rate or a rate
// scaling with the square of the Rabi frequency: rate = (f_rabi/MHz)^2 / tau0.
struct DecayChannel {
    std::string source_level;
    std::string target_level;
    double rate = 0.0;          // 1/s, constant part
    double tau0_rabi_sq = 0.0;  // if > 0: rate = (omega/2pi/1MHz)^2 / tau0_rabi_sq

    double rate_at(double omega_rad) const {
        if (tau0_rabi_sq <= 0.0) return rate;
        const double f_mhz = omega_rad / kTwoPi / 1.0e6;
        return f_mhz * f_mhz / tau0_rabi_sq;
    }
    void validate() const;
};

// Named decay channel presets; "sr88-n61" ships the strontium set of the
// n = 61 Rydberg error model.
std::vector<DecayChannel> decay_preset(const std::string& name);

struct MotionSpec {
    double doppler_sigma_hz = 0.0;  // shot-to-shot detuning st. dev. per atom
    double beam_waist_m = 0.0;      // Gaussian beam 1/e^2 intensity radius
    double position_sigma_m = 0.0;  // transverse position spread (per axis)
    void validate() const;
};

// Per-shot samples: detuning offset (Hz) and relative Rabi factor from beam
// sampling, for one atom.
struct MotionSample {
    double detuning_hz = 0.0;
    double rabi_factor = 1.0;
};
MotionSample sample_motion(const MotionSpec& spec, std::uint64_t rng_seed);

}  // namespace rydsim
