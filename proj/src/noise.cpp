#include "rydsim/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace rydsim {

// ---------------------------------------------------------------------------
// PowerSpectralDensity
// ---------------------------------------------------------------------------

void PowerSpectralDensity::validate() const {
    if (freqs_hz.empty()) throw std::invalid_argument("PSD: empty frequency grid");
    if (freqs_hz.size() != values.size())
        throw std::invalid_argument("PSD: freqs and values must have the same length");
    if (freqs_hz.front() < 0.0) throw std::invalid_argument("PSD must be one-sided (f >= 0)");
    for (size_t i = 0; i < freqs_hz.size(); ++i) {
        if (!std::isfinite(freqs_hz[i]) || !std::isfinite(values[i]))
            throw std::invalid_argument("PSD: non-finite entry at row " + std::to_string(i + 1));
        if (values[i] < 0.0)
            throw std::invalid_argument("PSD: negative value at row " + std::to_string(i + 1));
        if (i > 0 && freqs_hz[i] <= freqs_hz[i - 1])
            throw std::invalid_argument("PSD: frequencies not strictly increasing at row " +
                                        std::to_string(i + 1));
    }
}

double PowerSpectralDensity::value_at(double f) const {
    if (freqs_hz.empty() || f < freqs_hz.front() || f > freqs_hz.back()) return 0.0;
    const auto it = std::upper_bound(freqs_hz.begin(), freqs_hz.end(), f);
    if (it == freqs_hz.begin()) return values.front();
    const size_t hi = static_cast<size_t>(it - freqs_hz.begin());
    if (hi >= freqs_hz.size()) return values.back();
    const size_t lo = hi - 1;
    const double t = (f - freqs_hz[lo]) / (freqs_hz[hi] - freqs_hz[lo]);
    return values[lo] + t * (values[hi] - values[lo]);
}

namespace {

// integral of the piecewise-linear PSD from its lowest grid point to f
double cumulative(const PowerSpectralDensity& psd, double f) {
    const auto& x = psd.freqs_hz;
    const auto& y = psd.values;
    if (f <= x.front()) return 0.0;
    double acc = 0.0;
    for (size_t i = 1; i < x.size(); ++i) {
        if (f >= x[i]) {
            acc += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
        } else {
            const double t = (f - x[i - 1]) / (x[i] - x[i - 1]);
            const double yf = y[i - 1] + t * (y[i] - y[i - 1]);
            acc += 0.5 * (yf + y[i - 1]) * (f - x[i - 1]);
            return acc;
        }
    }
    return acc;
}

// integral over [a, b] of the even extension S(|f|), clipped to the support
double band_power_even(const PowerSpectralDensity& psd, double a, double b) {
    auto one_sided = [&](double lo, double hi) {
        lo = std::max(lo, psd.freqs_hz.front());
        hi = std::min(hi, psd.freqs_hz.back());
        if (hi <= lo) return 0.0;
        return cumulative(psd, hi) - cumulative(psd, lo);
    };
    double total = 0.0;
    if (b > 0.0) total += one_sided(std::max(a, 0.0), b);
    if (a < 0.0) total += one_sided(std::max(-b, 0.0), -a);
    return total;
}

}  // namespace

double PowerSpectralDensity::total_power() const {
    return cumulative(*this, freqs_hz.back());
}

PowerSpectralDensity load_psd(const std::string& path, PsdKind kind) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open PSD file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("empty PSD file: " + path);
    // tolerate whitespace and an optional UTF-8 BOM in the header
    std::string hdr = line;
    if (hdr.size() >= 3 && hdr.compare(0, 3, "\xEF\xBB\xBF") == 0) hdr = hdr.substr(3);
    hdr.erase(std::remove_if(hdr.begin(), hdr.end(), ::isspace), hdr.end());
    if (hdr != "freq_hz,psd")
        throw std::invalid_argument("PSD file must start with header 'freq_hz,psd': " + path);
    PowerSpectralDensity psd;
    psd.kind = kind;
    size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        double f, v;
        if (!(ss >> f >> v))
            throw std::invalid_argument(path + ": unparseable row " + std::to_string(row));
        psd.freqs_hz.push_back(f);
        psd.values.push_back(v);
    }
    if (psd.freqs_hz.empty())
        throw std::invalid_argument(path + ": no data rows");
    psd.validate();
    return psd;
}

void save_psd(const PowerSpectralDensity& psd, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write PSD file: " + path);
    out << "freq_hz,psd\n";
    out.precision(17);
    for (size_t i = 0; i < psd.freqs_hz.size(); ++i)
        out << psd.freqs_hz[i] << "," << psd.values[i] << "\n";
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    // splitmix64 of (master + index * odd constant)
    std::uint64_t z = master + index * 0x9E3779B97F4A7C15ULL + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

NoiseTrace sample_trace(const PowerSpectralDensity& psd, const TimeGrid& grid,
                        std::uint64_t rng_seed) {
    psd.validate();
    grid.validate();
    const double f_max = psd.max_freq();
    if (f_max > 0.0 && grid.dt >= 1.0 / (4.0 * f_max))
        throw std::invalid_argument("sample_trace: grid undersamples the PSD (need dt < 1/(4 f_max))");

    NoiseTrace trace;
    trace.grid = grid;
    trace.values.assign(grid.n_steps, 0.0);

    const double duration = grid.duration();
    const double df = 1.0 / (2.0 * duration);
    const int n_bins = static_cast<int>(std::ceil(f_max / df));
    if (n_bins <= 0) return trace;

    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> uphase(0.0, kTwoPi);
    std::vector<double> amp(n_bins), omega(n_bins), phase(n_bins);
    for (int j = 0; j < n_bins; ++j) {
        const double fj = (j + 1) * df;
        // bin-averaged PSD conserves total power for spiky spectra
        const double s_avg = band_power_even(psd, fj - 0.5 * df, fj + 0.5 * df) / df;
        amp[j] = std::sqrt(2.0 * s_avg * df);
        omega[j] = kTwoPi * fj;
        phase[j] = uphase(rng);
    }
    for (int k = 0; k < grid.n_steps; ++k) {
        const double t = grid.midpoint(k);
        double v = 0.0;
        for (int j = 0; j < n_bins; ++j) v += amp[j] * std::cos(omega[j] * t + phase[j]);
        trace.values[k] = v;
    }
    return trace;
}

void ShotToShotSpec::validate() const {
    if (sigma < 0.0 || !std::isfinite(sigma))
        throw std::invalid_argument("ShotToShotSpec: sigma must be >= 0");
}

double sample_shot_to_shot(const ShotToShotSpec& spec, std::uint64_t rng_seed) {
    spec.validate();
    if (spec.sigma == 0.0) return 0.0;
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> dist(0.0, spec.sigma);
    return dist(rng);
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

PowerSpectralDensity transform_psd(const PowerSpectralDensity& psd, const PsdTransform& t) {
    psd.validate();
    if (t.parameter_hz <= 0.0)
        throw std::invalid_argument("transform_psd: parameter must be positive");
    PowerSpectralDensity out;
    out.kind = psd.kind;
    if (t.kind == PsdTransformKind::cavity_lorentzian) {
        out.freqs_hz = psd.freqs_hz;
        out.values.resize(psd.values.size());
        const double gamma = t.parameter_hz;
        for (size_t i = 0; i < psd.values.size(); ++i) {
            const double x = 2.0 * psd.freqs_hz[i] / gamma;
            out.values[i] = psd.values[i] / (1.0 + x * x);
        }
        return out;
    }
    // moving average: boxcar convolution of width w on the even extension
    const double w = t.parameter_hz;
    double min_spacing = w / 8.0;
    for (size_t i = 1; i < psd.freqs_hz.size(); ++i)
        min_spacing = std::min(min_spacing, psd.freqs_hz[i] - psd.freqs_hz[i - 1]);
    const double f_hi = psd.max_freq() + 0.5 * w;
    const int n = std::min(200000, static_cast<int>(std::ceil(f_hi / min_spacing)) + 1);
    const double step = f_hi / n;
    out.freqs_hz.resize(n + 1);
    out.values.resize(n + 1);
    for (int i = 0; i <= n; ++i) {
        const double f = i * step;
        out.freqs_hz[i] = f;
        out.values[i] = band_power_even(psd, f - 0.5 * w, f + 0.5 * w) / w;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decay channels and motion
// ---------------------------------------------------------------------------

void DecayChannel::validate() const {
    if (rate < 0.0 || tau0_rabi_sq < 0.0)
        throw std::invalid_argument("DecayChannel: rates must be nonnegative");
    if (source_level == target_level)
        throw std::invalid_argument("DecayChannel: source must differ from target");
}

std::vector<DecayChannel> decay_preset(const std::string& name) {
    if (name != "sr88-n61") throw std::invalid_argument("unknown decay preset: " + name);
    const double us = 1.0e-6;
    std::vector<DecayChannel> set;
    set.push_back({"r", "dark", 1.0 / (78.0 * us), 0.0});
    set.push_back({"r", "1", 0.10 / (166.0 * us), 0.0});   // to 3P0 (qubit |1>)
    set.push_back({"r", "p1", 0.30 / (166.0 * us), 0.0});  // to 3P1
    set.push_back({"r", "p2", 0.60 / (166.0 * us), 0.0});  // to 3P2 (bright)
    set.push_back({"p1", "0", 1.0 / (21.0 * us), 0.0});    // 3P1 -> 1S0
    set.push_back({"p1", "dark", 0.0, 320.0 * us});        // laser-induced ionization
    set.push_back({"p2", "dark", 0.0, 320.0 * us});
    return set;
}

void MotionSpec::validate() const {
    if (doppler_sigma_hz < 0.0 || beam_waist_m < 0.0 || position_sigma_m < 0.0)
        throw std::invalid_argument("MotionSpec: parameters must be nonnegative");
}

MotionSample sample_motion(const MotionSpec& spec, std::uint64_t rng_seed) {
    spec.validate();
    MotionSample s;
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    if (spec.doppler_sigma_hz > 0.0) s.detuning_hz = spec.doppler_sigma_hz * unit(rng);
    if (spec.position_sigma_m > 0.0 && spec.beam_waist_m > 0.0) {
        const double x = spec.position_sigma_m * unit(rng);
        const double y = spec.position_sigma_m * unit(rng);
        const double w2 = spec.beam_waist_m * spec.beam_waist_m;
        s.rabi_factor = std::exp(-(x * x + y * y) / w2);
    }
    return s;
}

}  // namespace rydsim
