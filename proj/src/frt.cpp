#include "rydsim/frt.hpp"

#include <algorithm>
#include <cmath>

namespace rydsim {

bool is_frequency_kind(NoiseOperatorKind k) {
    switch (k) {
        case NoiseOperatorKind::frequency:
        case NoiseOperatorKind::frequency_single_atom:
        case NoiseOperatorKind::two_photon_freq_arm1:
        case NoiseOperatorKind::two_photon_freq_arm2:
            return true;
        default:
            return false;
    }
}

namespace {

MatrixXc embed_total(const LevelScheme& s, const MatrixXc& op1) {
    MatrixXc out = s.embed(op1, 0);
    if (s.n_atoms == 2) out += s.embed(op1, 1);
    return out;
}

MatrixXc level_diag(const LevelScheme& s, std::initializer_list<const char*> names,
                    double value) {
    MatrixXc m = MatrixXc::Zero(s.n_levels(), s.n_levels());
    for (const char* n : names) {
        const int i = s.level_index(n);
        m(i, i) = value;
    }
    return m;
}

}  // namespace

NoiseOperatorSchedule noise_operator_schedule(const GateHamiltonian& gate,
                                              NoiseOperatorKind kind) {
    NoiseOperatorSchedule sched;
    sched.kind = kind;
    sched.scheme = gate.scheme;
    sched.grid = gate.grid;
    const LevelScheme scheme = gate.scheme;
    const bool two_photon_scheme = gate.two_photon.has_value();

    switch (kind) {
        case NoiseOperatorKind::frequency: {
            if (two_photon_scheme)
                throw std::invalid_argument(
                    "two-photon protocols use the per-arm frequency noise kinds");
            if (scheme.rydberg_index() < 0)
                throw std::invalid_argument("frequency noise needs a Rydberg level");
            const MatrixXc op = -kTwoPi * embed_total(scheme, level_diag(scheme, {"r"}, 1.0));
            sched.op_at_step = [op](int) { return op; };
            break;
        }
        case NoiseOperatorKind::frequency_single_atom: {
            if (scheme.rydberg_index() < 0)
                throw std::invalid_argument("frequency noise needs a Rydberg level");
            const MatrixXc op = -kTwoPi * scheme.embed(level_diag(scheme, {"r"}, 1.0), 0);
            sched.op_at_step = [op](int) { return op; };
            break;
        }
        case NoiseOperatorKind::intensity: {
            if (two_photon_scheme)
                throw std::invalid_argument(
                    "two-photon protocols use the per-arm intensity noise kinds");
            const GateHamiltonian* g = &gate;
            sched.op_at_step = [g](int k) {
                return embed_total(g->scheme, MatrixXc(0.5 * g->drive1[k] + g->shift1[k]));
            };
            break;
        }
        case NoiseOperatorKind::two_photon_freq_arm1: {
            if (!two_photon_scheme)
                throw std::invalid_argument("arm kinds need a two-photon protocol");
            MatrixXc op1;
            if (gate.two_photon_mode == TwoPhotonMode::four_level)
                op1 = level_diag(scheme, {"e", "r"}, 1.0);
            else
                op1 = level_diag(scheme, {"r"}, 1.0);
            const MatrixXc op = -kTwoPi * embed_total(scheme, op1);
            sched.op_at_step = [op](int) { return op; };
            break;
        }
        case NoiseOperatorKind::two_photon_freq_arm2: {
            if (!two_photon_scheme)
                throw std::invalid_argument("arm kinds need a two-photon protocol");
            const MatrixXc op = -kTwoPi * embed_total(scheme, level_diag(scheme, {"r"}, 1.0));
            sched.op_at_step = [op](int) { return op; };
            break;
        }
        case NoiseOperatorKind::two_photon_int_arm1:
        case NoiseOperatorKind::two_photon_int_arm2: {
            if (!two_photon_scheme)
                throw std::invalid_argument("arm kinds need a two-photon protocol");
            const TwoPhotonParams p = *gate.two_photon;
            const bool arm1 = kind == NoiseOperatorKind::two_photon_int_arm1;
            const int nl = scheme.n_levels();
            MatrixXc op1 = MatrixXc::Zero(nl, nl);
            if (gate.two_photon_mode == TwoPhotonMode::four_level) {
                const int i0 = scheme.level_index("0"), i1 = scheme.level_index("1");
                const int ie = scheme.level_index("e"), ir = scheme.level_index("r");
                const double om = arm1 ? p.omega1 : p.omega2;
                const double om2 = om * om;
                if (arm1) {
                    op1(i1, ie) = op1(ie, i1) = 0.25 * p.omega1;
                } else {
                    op1(ie, ir) = op1(ir, ie) = 0.25 * p.omega2;
                }
                const int j = arm1 ? 0 : 1;
                op1(i0, i0) += p.kappa0[j] * om2;
                op1(i1, i1) += p.kappa1[j] * om2;
                op1(ir, ir) += p.kappar[j] * om2;
            } else {
                const int i0 = scheme.level_index("0"), i1 = scheme.level_index("1");
                const int ir = scheme.level_index("r");
                const int j = arm1 ? 0 : 1;
                const double om2 = (arm1 ? p.omega1 : p.omega2) * (arm1 ? p.omega1 : p.omega2);
                const double kt0 = p.kappa0[j] - p.kappa1[j];
                const double ktr = p.kappar[j] - p.kappa1[j];
                op1(i1, ir) = op1(ir, i1) = p.omega1 * p.omega2 / (8.0 * p.delta_intermediate);
                op1(i0, i0) += kt0 * om2;
                op1(ir, ir) += (ktr + (arm1 ? -1.0 : 1.0) / (4.0 * p.delta_intermediate)) * om2;
            }
            const MatrixXc op = embed_total(scheme, op1);
            sched.op_at_step = [op](int) { return op; };
            break;
        }
        case NoiseOperatorKind::custom:
            throw std::invalid_argument("custom noise operators are constructed directly");
    }
    return sched;
}

double ResponseFunction::value_at(double f) const {
    if (freqs_hz.empty()) return 0.0;
    if (f <= freqs_hz.front()) return values.front();
    if (f > freqs_hz.back()) return 0.0;
    const auto it = std::upper_bound(freqs_hz.begin(), freqs_hz.end(), f);
    const size_t hi = static_cast<size_t>(it - freqs_hz.begin());
    const size_t lo = hi - 1;
    const double t = (f - freqs_hz[lo]) / (freqs_hz[hi] - freqs_hz[lo]);
    return values[lo] + t * (values[hi] - values[lo]);
}

std::vector<double> default_response_grid(double omega_rad, int n_points) {
    if (n_points < 2) throw std::invalid_argument("default_response_grid: need >= 2 points");
    const double f_lo = 1.0e3;
    const double f_hi = 4.0 * omega_rad / kTwoPi;
    std::vector<double> f(n_points);
    const double r = std::log(f_hi / f_lo) / (n_points - 1);
    for (int i = 0; i < n_points; ++i) f[i] = f_lo * std::exp(r * i);
    return f;
}

namespace {

// quadrature nodes: step boundaries 0, s, 2s, ..., n (trapezoid weights on
// the possibly nonuniform downsampled grid)
struct Nodes {
    std::vector<int> idx;      // boundary index 0..n_steps
    std::vector<double> time;  // node times
    std::vector<double> wt;    // trapezoid weights
};

Nodes make_nodes(const TimeGrid& grid, int max_nodes) {
    Nodes n;
    const int stride = std::max(1, (grid.n_steps + max_nodes - 1) / max_nodes);
    for (int k = 0; k <= grid.n_steps; k += stride) n.idx.push_back(k);
    if (n.idx.back() != grid.n_steps) n.idx.push_back(grid.n_steps);
    const size_t m = n.idx.size();
    n.time.resize(m);
    n.wt.resize(m);
    for (size_t i = 0; i < m; ++i) n.time[i] = grid.t_start + n.idx[i] * grid.dt;
    for (size_t i = 0; i < m; ++i) {
        const double lo = i == 0 ? n.time[0] : n.time[i - 1];
        const double hi = i + 1 == m ? n.time[m - 1] : n.time[i + 1];
        n.wt[i] = 0.5 * (hi - lo);
    }
    return n;
}

// noise operator at a step boundary: mean of the adjacent midpoint samples
MatrixXc op_at_boundary(const std::function<MatrixXc(int)>& op, int k, int n_steps) {
    if (k <= 0) return op(0);
    if (k >= n_steps) return op(n_steps - 1);
    return 0.5 * (op(k - 1) + op(k));
}

}  // namespace

ResponseFunction response_function(const GateHamiltonian& gate, NoiseOperatorKind kind,
                                   FidelityMetric metric, const std::vector<double>& freqs_hz,
                                   const ResponseOptions& opts) {
    const NoiseOperatorSchedule sched = noise_operator_schedule(gate, kind);
    const LevelScheme& scheme = gate.scheme;
    const int dim = scheme.dim();
    if (dim > 64)
        throw std::invalid_argument("response_function: use response_single_state for dim > 64");

    MatrixXc r;  // isometry onto the averaging subspace
    switch (metric) {
        case FidelityMetric::haar: r = scheme.computational_isometry(); break;
        case FidelityMetric::sym: r = scheme.symmetric_isometry(); break;
        case FidelityMetric::single_state: {
            if (!opts.psi0) throw std::invalid_argument("single_state metric needs psi0");
            r = *opts.psi0;
            if (r.rows() != dim) throw std::invalid_argument("psi0 dimension mismatch");
            break;
        }
        default: throw std::invalid_argument("sss metric is per-trajectory; use haar/sym here");
    }
    const int d_sub = static_cast<int>(r.cols());
    const bool single = metric == FidelityMetric::single_state;

    // hermiticity spot check
    {
        const MatrixXc o0 = sched.op_at_step(0);
        require_hermitian(o0, 1e-9);
    }

    const Nodes nodes = make_nodes(gate.grid, opts.max_nodes);
    const size_t m = nodes.idx.size();

    // march the propagator; store per-node X = O_H R (dim x D), W = R^dag O_H R
    std::vector<MatrixXc> xs(m);
    std::vector<MatrixXc> ws(m);
    std::vector<double> trw(m);
    MatrixXc u = MatrixXc::Identity(dim, dim);
    const HamiltonianTable h = gate.table();
    size_t node_i = 0;
    for (int k = 0; k <= gate.grid.n_steps; ++k) {
        if (node_i < m && nodes.idx[node_i] == k) {
            const MatrixXc o = op_at_boundary(sched.op_at_step, k, gate.grid.n_steps);
            const MatrixXc ur = u * r;
            xs[node_i] = u.adjoint() * (o * ur);
            ws[node_i] = ur.adjoint() * (o * ur);
            trw[node_i] = std::real(ws[node_i].trace());
            ++node_i;
        }
        if (k < gate.grid.n_steps) u = step_unitary(h(k), gate.grid.dt) * u;
    }

    ResponseFunction resp;
    resp.freqs_hz = freqs_hz;
    resp.values.resize(freqs_hz.size());
    resp.metric = metric;
    resp.kind = kind;
    resp.omega = gate.omega;
    resp.ideal_protocol = gate.ideal_pulse;

    const double dd = static_cast<double>(d_sub);
    MatrixXc vc(dim, d_sub), vs(dim, d_sub), wc(d_sub, d_sub), wsn(d_sub, d_sub);
    for (size_t fi = 0; fi < freqs_hz.size(); ++fi) {
        const double w2pi = kTwoPi * freqs_hz[fi];
        vc.setZero();
        vs.setZero();
        wc.setZero();
        wsn.setZero();
        double tc = 0.0, ts = 0.0;
        for (size_t i = 0; i < m; ++i) {
            const double c = std::cos(w2pi * nodes.time[i]) * nodes.wt[i];
            const double s = std::sin(w2pi * nodes.time[i]) * nodes.wt[i];
            vc += c * xs[i];
            vs += s * xs[i];
            if (!single) {
                wc += c * ws[i];
                wsn += s * ws[i];
            }
            tc += c * trw[i];
            ts += s * trw[i];
        }
        double val;
        if (single) {
            // <psi| picks the mean; xs columns are O_H |psi0>
            val = vc.squaredNorm() + vs.squaredNorm() - tc * tc - ts * ts;
        } else {
            val = (vc.squaredNorm() + vs.squaredNorm()) / dd -
                  (wc.squaredNorm() + wsn.squaredNorm() + tc * tc + ts * ts) / (dd * (dd + 1.0));
        }
        resp.values[fi] = val;
    }
    return resp;
}

ResponseFunction response_single_state(const HamiltonianTable& h,
                                       const std::function<MatrixXc(int)>& op,
                                       const TimeGrid& grid, const VectorXc& psi0,
                                       const std::vector<double>& freqs_hz, int max_nodes) {
    grid.validate();
    const Eigen::Index dim = psi0.size();
    const Nodes nodes = make_nodes(grid, max_nodes);
    const size_t m = nodes.idx.size();
    const size_t nf = freqs_hz.size();

    // forward accumulators: for each frequency keep a_c = sum_j c_j U(t,t_j) w_j
    // where w_j = O(t_j) U(t_j) psi0; norms are unitary-invariant so the final
    // values equal those of U^dag O U psi0 sums.
    MatrixXc acc(dim, 2 * nf);
    acc.setZero();
    VectorXc u_psi = psi0;
    std::vector<double> mc(nf, 0.0), ms(nf, 0.0);

    size_t node_i = 0;
    for (int k = 0; k <= grid.n_steps; ++k) {
        if (node_i < m && nodes.idx[node_i] == k) {
            const MatrixXc o = op_at_boundary(op, k, grid.n_steps);
            const VectorXc w = o * u_psi;
            const double mean = std::real(u_psi.dot(w));
            for (size_t fi = 0; fi < nf; ++fi) {
                const double ph = kTwoPi * freqs_hz[fi] * nodes.time[node_i];
                const double c = std::cos(ph) * nodes.wt[node_i];
                const double s = std::sin(ph) * nodes.wt[node_i];
                acc.col(2 * fi) += c * w;
                acc.col(2 * fi + 1) += s * w;
                mc[fi] += c * mean;
                ms[fi] += s * mean;
            }
            ++node_i;
        }
        if (k < grid.n_steps) {
            const MatrixXc u_step = step_unitary(h(k), grid.dt);
            acc = u_step * acc;
            u_psi = u_step * u_psi;
        }
    }

    ResponseFunction resp;
    resp.freqs_hz = freqs_hz;
    resp.values.resize(nf);
    resp.metric = FidelityMetric::single_state;
    resp.kind = NoiseOperatorKind::custom;
    resp.ideal_protocol = false;
    for (size_t fi = 0; fi < nf; ++fi)
        resp.values[fi] = acc.col(2 * fi).squaredNorm() + acc.col(2 * fi + 1).squaredNorm() -
                          mc[fi] * mc[fi] - ms[fi] * ms[fi];
    return resp;
}

InfidelityBreakdown infidelity_from_psd(const ResponseFunction& resp,
                                        const PowerSpectralDensity& psd, double dc_variance,
                                        double band_width_hz) {
    const bool fk = is_frequency_kind(resp.kind);
    if (fk != (psd.kind == PsdKind::frequency))
        throw std::invalid_argument("infidelity_from_psd: PSD kind does not match the response");
    psd.validate();
    if (band_width_hz <= 0.0) throw std::invalid_argument("band width must be positive");

    // merged grid over the overlap of both supports
    std::vector<double> grid;
    for (double f : psd.freqs_hz) grid.push_back(f);
    for (double f : resp.freqs_hz)
        if (f >= psd.freqs_hz.front() && f <= psd.freqs_hz.back()) grid.push_back(f);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    InfidelityBreakdown out;
    const double f_max = grid.empty() ? 0.0 : grid.back();
    const int n_bands = std::max(1, static_cast<int>(std::ceil(f_max / band_width_hz)));
    out.band_edges_hz.resize(n_bands + 1);
    for (int i = 0; i <= n_bands; ++i) out.band_edges_hz[i] = i * band_width_hz;
    out.band_values.assign(n_bands, 0.0);

    for (size_t i = 0; i + 1 < grid.size(); ++i) {
        const double f0 = grid[i], f1 = grid[i + 1];
        const double y0 = psd.value_at(f0) * resp.value_at(f0);
        const double y1 = psd.value_at(f1) * resp.value_at(f1);
        const double seg = 0.5 * (y0 + y1) * (f1 - f0);
        out.integral += seg;
        // assign to the band of the segment midpoint
        const int band = std::min(n_bands - 1,
                                  static_cast<int>(0.5 * (f0 + f1) / band_width_hz));
        out.band_values[static_cast<size_t>(band)] += seg;
    }
    out.dc = dc_variance * (resp.freqs_hz.empty() ? 0.0 : resp.value_at(0.0));
    out.total = out.integral + out.dc;
    return out;
}

UniversalResponse rescale_to_universal(const ResponseFunction& resp, double omega_rad) {
    if (omega_rad <= 0.0) throw std::invalid_argument("rescale_to_universal: Omega must be > 0");
    UniversalResponse u;
    u.metric = resp.metric;
    u.kind = resp.kind;
    u.collapse_guaranteed = resp.ideal_protocol;
    const bool fk = is_frequency_kind(resp.kind);
    u.x.resize(resp.freqs_hz.size());
    u.g.resize(resp.values.size());
    for (size_t i = 0; i < resp.freqs_hz.size(); ++i) {
        u.x[i] = kTwoPi * resp.freqs_hz[i] / omega_rad;
        u.g[i] = fk ? omega_rad * omega_rad * resp.values[i] : resp.values[i];
    }
    return u;
}

ResponseFunction universal_to_response(const UniversalResponse& u, double omega_rad) {
    if (omega_rad <= 0.0) throw std::invalid_argument("universal_to_response: Omega must be > 0");
    ResponseFunction r;
    r.metric = u.metric;
    r.kind = u.kind;
    r.omega = omega_rad;
    r.ideal_protocol = u.collapse_guaranteed;
    const bool fk = is_frequency_kind(u.kind);
    r.freqs_hz.resize(u.x.size());
    r.values.resize(u.g.size());
    for (size_t i = 0; i < u.x.size(); ++i) {
        r.freqs_hz[i] = u.x[i] * omega_rad / kTwoPi;
        r.values[i] = fk ? u.g[i] / (omega_rad * omega_rad) : u.g[i];
    }
    return r;
}

double UniversalResponse::value_at(double xq) const {
    if (x.empty()) return 0.0;
    if (xq <= x.front()) return g.front();
    if (xq > x.back()) return 0.0;
    const auto it = std::upper_bound(x.begin(), x.end(), xq);
    const size_t hi = static_cast<size_t>(it - x.begin());
    const size_t lo = hi - 1;
    const double t = (xq - x[lo]) / (x[hi] - x[lo]);
    return g[lo] + t * (g[hi] - g[lo]);
}

double FitParams6::evaluate(double x) const {
    if (form == UniversalForm::double_gaussian_freq) {
        const double g1 = (x - b) / c, g2 = (x - e) / f;
        return kTwoPi * kTwoPi * (a * std::exp(-g1 * g1) + d * std::exp(-g2 * g2));
    }
    return a * (1.0 + d * std::tanh(e * (x - f))) / (1.0 + std::exp(b * (x - c)));
}

FitParams6 universal_fit_preset(UniversalPreset which) {
    FitParams6 p;
    switch (which) {
        case UniversalPreset::freq_haar:
            p = {2.910, -0.02715, 0.5874, 3.022, 1.179, 0.5337,
                 UniversalForm::double_gaussian_freq, FidelityMetric::haar};
            break;
        case UniversalPreset::int_haar:
            p = {1.187, 6.423, 0.7670, 0.07678, 5.528, 0.2381,
                 UniversalForm::logistic_tanh_int, FidelityMetric::haar};
            break;
        case UniversalPreset::freq_sym:
            p = {3.062, -0.01507, 0.5588, 2.843, 1.232, 0.5339,
                 UniversalForm::double_gaussian_freq, FidelityMetric::sym};
            break;
        case UniversalPreset::int_sym:
            p = {1.218, 5.790, 0.7580, 0.03630, 5.647, 0.2054,
                 UniversalForm::logistic_tanh_int, FidelityMetric::sym};
            break;
    }
    return p;
}

double approx_universal_form(const FitParams6& params, double x) {
    return params.evaluate(x);
}

ProbeResult delta_psd_probe(const GateHamiltonian& gate, const ErrorModelConfig& base,
                            PsdKind kind, double f0_hz, const std::vector<double>& strengths,
                            const ProbeOptions& opts) {
    if (strengths.empty()) throw std::invalid_argument("delta_psd_probe: empty strength list");
    for (double s : strengths)
        if (s <= 0.0) throw std::invalid_argument("delta_psd_probe: strengths must be positive");

    ProbeResult res;
    res.strengths = strengths;
    EnsembleOptions eo;
    eo.threads = opts.threads;
    eo.traj.virtual_z_phase = opts.virtual_z_phase;
    std::uint64_t sub = 0;
    for (double eps : strengths) {
        ErrorModelConfig cfg = base;
        // delta-PSD weight eps -> tone amplitude sqrt(2 eps)
        cfg.tone = MonochromaticTone{kind, f0_hz, std::sqrt(2.0 * eps)};
        ChannelEstimate ch =
            run_ensemble(gate, cfg, opts.trajectories, derive_seed(opts.seed, sub++), eo);
        FidelityEstimate fe = fidelity_metric(ch, opts.metric);
        res.infidelity.push_back(1.0 - fe.mean);
        res.infid_err.push_back(fe.stderr_);
        if (1.0 - fe.mean > 0.05)
            throw std::invalid_argument("delta_psd_probe: strength too large (infidelity > 0.05)");
    }

    // weighted linear fit through the origin
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < strengths.size(); ++i) {
        const double var = std::max(res.infid_err[i] * res.infid_err[i], 1e-30);
        sxx += strengths[i] * strengths[i] / var;
        sxy += strengths[i] * res.infidelity[i] / var;
    }
    res.slope = sxy / sxx;
    res.stderr_ = 1.0 / std::sqrt(sxx);

    // nonlinearity: quadratic term against the linear one at max strength
    if (strengths.size() >= 2) {
        double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
        for (size_t i = 0; i < strengths.size(); ++i) {
            const double var = std::max(res.infid_err[i] * res.infid_err[i], 1e-30);
            const double x = strengths[i], x2 = x * x;
            a11 += x * x / var;
            a12 += x * x2 / var;
            a22 += x2 * x2 / var;
            b1 += x * res.infidelity[i] / var;
            b2 += x2 * res.infidelity[i] / var;
        }
        const double det = a11 * a22 - a12 * a12;
        if (std::abs(det) > 1e-30) {
            const double lin = (a22 * b1 - a12 * b2) / det;
            const double quad = (a11 * b2 - a12 * b1) / det;
            const double xm = *std::max_element(strengths.begin(), strengths.end());
            if (std::abs(quad * xm) > 0.2 * std::abs(lin)) res.nonlinear = true;
        }
    }
    return res;
}

}  // namespace rydsim
