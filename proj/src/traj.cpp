#include "rydsim/traj.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "rydsim/sss.hpp"

namespace rydsim {

namespace {

struct AtomChannel {
    int atom = 0;
    int src = 0;
    int tgt = 0;
    double rate = 0.0;
};

// A dynamically decoupled set of rows evolving under a small dense
// Hamiltonian. Pair blocks assemble their matrix from both atoms' noisy
// single-atom Hamiltonians; single-atom blocks (one atom leaked) from the
// surviving atom's.
struct EvoBlock {
    std::vector<int> rows;  // global compact row indices
    // entries: h_local(i, j) += h_atom[atom](li, lj)
    struct Entry {
        int i, j, atom, li, lj;
    };
    std::vector<Entry> entries;
    double diag_extra = 0.0;  // blockade on |rr>
    int diag_extra_pos = -1;
    bool passive_sector = false;  // belongs to a leaked-atom sector
};

struct Engine {
    const GateHamiltonian* gate = nullptr;
    LevelScheme scheme;
    int dim = 0;
    int nl = 0;
    int natoms = 1;

    std::vector<int> coh_levels;
    std::vector<int> coh_sub;  // level -> coherent sub-index or -1
    int nc = 0;
    int ryd_sub = -1;
    int rydberg_level = -1;

    std::vector<std::array<int, 2>> row_levels;

    std::vector<MatrixXc> drive_c, shift_c;  // per-step single-atom (nc x nc)
    MatrixXc static_c;

    std::vector<EvoBlock> blocks;
    std::vector<int> row_block;  // row -> block index or -1 (frozen row)

    std::vector<AtomChannel> chans;
    std::vector<double> row_hazard;
    std::vector<double> row_nojump_factor;
    std::vector<int> hazard_rows;

    std::vector<int> comp_rows;

    double dt = 0.0;
    int n_steps = 0;
    int max_block = 0;
};

Engine build_engine(const GateHamiltonian& gate, const ErrorModelConfig& config) {
    Engine e;
    e.gate = &gate;
    e.scheme = gate.scheme;
    e.dim = e.scheme.dim();
    e.nl = e.scheme.n_levels();
    e.natoms = e.scheme.n_atoms;
    e.dt = gate.grid.dt;
    e.n_steps = gate.grid.n_steps;

    // coherent levels = support of the single-atom pieces plus qubit levels
    std::vector<bool> coh(e.nl, false);
    auto mark = [&](const MatrixXc& m) {
        for (int i = 0; i < e.nl; ++i)
            for (int j = 0; j < e.nl; ++j)
                if (std::abs(m(i, j)) > 0.0) coh[i] = coh[j] = true;
    };
    mark(gate.static1);
    for (const auto& m : gate.drive1) mark(m);
    for (const auto& m : gate.shift1) mark(m);
    for (int i = 0; i < e.nl; ++i)
        if (e.scheme.levels[i] == "0" || e.scheme.levels[i] == "1") coh[i] = true;
    e.coh_sub.assign(e.nl, -1);
    for (int i = 0; i < e.nl; ++i)
        if (coh[i]) {
            e.coh_sub[i] = static_cast<int>(e.coh_levels.size());
            e.coh_levels.push_back(i);
        }
    e.nc = static_cast<int>(e.coh_levels.size());
    e.rydberg_level = e.scheme.rydberg_index();
    e.ryd_sub = e.rydberg_level >= 0 ? e.coh_sub[e.rydberg_level] : -1;

    e.row_levels.resize(e.dim);
    if (e.natoms == 1) {
        for (int a = 0; a < e.nl; ++a) e.row_levels[a] = {a, -1};
    } else {
        for (int a = 0; a < e.nl; ++a)
            for (int b = 0; b < e.nl; ++b) {
                const int idx = e.scheme.pair_index(a, b);
                if (idx >= 0) e.row_levels[idx] = {a, b};
            }
    }

    auto restrict1 = [&](const MatrixXc& m) {
        MatrixXc out(e.nc, e.nc);
        for (int i = 0; i < e.nc; ++i)
            for (int j = 0; j < e.nc; ++j) out(i, j) = m(e.coh_levels[i], e.coh_levels[j]);
        return out;
    };
    e.drive_c.reserve(e.n_steps);
    e.shift_c.reserve(e.n_steps);
    for (int k = 0; k < e.n_steps; ++k) {
        e.drive_c.push_back(restrict1(gate.drive1[k]));
        e.shift_c.push_back(restrict1(gate.shift1[k]));
    }
    e.static_c = restrict1(gate.static1);

    // single-atom coupling graph on coherent levels (union over steps; the
    // frequency-noise diagonal never connects levels)
    std::vector<std::vector<bool>> adj1(e.nc, std::vector<bool>(e.nc, false));
    for (int i = 0; i < e.nc; ++i) adj1[i][i] = true;
    auto mark1c = [&](const MatrixXc& m) {
        for (int i = 0; i < e.nc; ++i)
            for (int j = 0; j < e.nc; ++j)
                if (std::abs(m(i, j)) > 0.0) adj1[i][j] = adj1[j][i] = true;
    };
    for (const auto& m : e.drive_c) mark1c(m);
    for (const auto& m : e.shift_c) mark1c(m);
    mark1c(e.static_c);

    // single-atom components
    std::vector<int> comp1(e.nc, -1);
    int n_comp1 = 0;
    for (int s = 0; s < e.nc; ++s) {
        if (comp1[s] >= 0) continue;
        std::vector<int> stack{s};
        comp1[s] = n_comp1;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (int v = 0; v < e.nc; ++v)
                if (adj1[u][v] && comp1[v] < 0) {
                    comp1[v] = n_comp1;
                    stack.push_back(v);
                }
        }
        ++n_comp1;
    }

    e.row_block.assign(e.dim, -1);
    if (e.natoms == 1) {
        // one block per single-atom component
        for (int c = 0; c < n_comp1; ++c) {
            EvoBlock b;
            for (int s = 0; s < e.nc; ++s) {
                if (comp1[s] != c) continue;
                b.rows.push_back(e.coh_levels[s]);
            }
            for (size_t i = 0; i < b.rows.size(); ++i)
                for (size_t j = 0; j < b.rows.size(); ++j) {
                    const int li = e.coh_sub[e.row_levels[b.rows[i]][0]];
                    const int lj = e.coh_sub[e.row_levels[b.rows[j]][0]];
                    b.entries.push_back({static_cast<int>(i), static_cast<int>(j), 0, li, lj});
                }
            for (int r : b.rows) e.row_block[r] = static_cast<int>(e.blocks.size());
            e.blocks.push_back(std::move(b));
        }
    } else {
        // pair coherent blocks: components of the pair coupling graph
        std::vector<int> coh_rows;
        std::vector<int> pos(e.dim, -1);
        for (int sa = 0; sa < e.nc; ++sa)
            for (int sb = 0; sb < e.nc; ++sb) {
                const int pi = e.scheme.pair_index(e.coh_levels[sa], e.coh_levels[sb]);
                if (pi < 0) continue;
                pos[pi] = static_cast<int>(coh_rows.size());
                coh_rows.push_back(pi);
            }
        const int np = static_cast<int>(coh_rows.size());
        std::vector<std::vector<int>> nbr(np);
        for (int p = 0; p < np; ++p) {
            const auto [la, lb] = e.row_levels[coh_rows[p]];
            const int sa = e.coh_sub[la], sb = e.coh_sub[lb];
            for (int sp = 0; sp < e.nc; ++sp) {
                if (adj1[sp][sa]) {
                    const int q = e.scheme.pair_index(e.coh_levels[sp], lb);
                    if (q >= 0 && pos[q] >= 0) nbr[p].push_back(pos[q]);
                }
                if (adj1[sp][sb]) {
                    const int q = e.scheme.pair_index(la, e.coh_levels[sp]);
                    if (q >= 0 && pos[q] >= 0) nbr[p].push_back(pos[q]);
                }
            }
        }
        std::vector<int> compp(np, -1);
        int ncp = 0;
        for (int p = 0; p < np; ++p) {
            if (compp[p] >= 0) continue;
            std::vector<int> stack{p};
            compp[p] = ncp;
            while (!stack.empty()) {
                const int u = stack.back();
                stack.pop_back();
                for (int v : nbr[u])
                    if (compp[v] < 0) {
                        compp[v] = ncp;
                        stack.push_back(v);
                    }
            }
            ++ncp;
        }
        const int rr_row = (e.scheme.blockade == Blockade::finite && e.rydberg_level >= 0)
                               ? e.scheme.pair_index(e.rydberg_level, e.rydberg_level)
                               : -1;
        for (int c = 0; c < ncp; ++c) {
            EvoBlock b;
            for (int p = 0; p < np; ++p)
                if (compp[p] == c) b.rows.push_back(coh_rows[p]);
            for (size_t i = 0; i < b.rows.size(); ++i) {
                const auto [lia, lib] = e.row_levels[b.rows[i]];
                if (b.rows[i] == rr_row) {
                    b.diag_extra = e.scheme.blockade_rad;
                    b.diag_extra_pos = static_cast<int>(i);
                }
                for (size_t j = 0; j < b.rows.size(); ++j) {
                    const auto [lja, ljb] = e.row_levels[b.rows[j]];
                    if (lib == ljb)
                        b.entries.push_back({static_cast<int>(i), static_cast<int>(j), 0,
                                             e.coh_sub[lia], e.coh_sub[lja]});
                    if (lia == lja)
                        b.entries.push_back({static_cast<int>(i), static_cast<int>(j), 1,
                                             e.coh_sub[lib], e.coh_sub[ljb]});
                }
            }
            for (int r : b.rows) e.row_block[r] = static_cast<int>(e.blocks.size());
            e.blocks.push_back(std::move(b));
        }
        // semi-passive sectors: passive level on one atom, coherent dynamics
        // on the other; one block per (atom, passive level, component)
        for (int atom = 0; atom < 2; ++atom)
            for (int lvl = 0; lvl < e.nl; ++lvl) {
                if (e.coh_sub[lvl] >= 0) continue;  // coherent level
                for (int c = 0; c < n_comp1; ++c) {
                    EvoBlock b;
                    b.passive_sector = true;
                    std::vector<int> subs;
                    for (int s = 0; s < e.nc; ++s)
                        if (comp1[s] == c) subs.push_back(s);
                    for (int s : subs)
                        b.rows.push_back(atom == 0
                                             ? e.scheme.pair_index(lvl, e.coh_levels[s])
                                             : e.scheme.pair_index(e.coh_levels[s], lvl));
                    // the surviving atom is the other one
                    const int h_atom = atom == 0 ? 1 : 0;
                    for (size_t i = 0; i < subs.size(); ++i)
                        for (size_t j = 0; j < subs.size(); ++j)
                            b.entries.push_back({static_cast<int>(i), static_cast<int>(j),
                                                 h_atom, subs[i], subs[j]});
                    for (int r : b.rows) e.row_block[r] = static_cast<int>(e.blocks.size());
                    e.blocks.push_back(std::move(b));
                }
            }
        // double-passive rows stay frozen (row_block = -1)
    }
    for (const auto& b : e.blocks)
        e.max_block = std::max(e.max_block, static_cast<int>(b.rows.size()));

    if (config.enable_decay) {
        for (const auto& ch : config.decay_channels) {
            ch.validate();
            const double rate = ch.rate_at(gate.omega);
            if (rate <= 0.0) continue;
            if (rate * e.dt >= 0.01)
                throw std::invalid_argument("run_trajectory: Gamma*dt >= 0.01; reduce dt below " +
                                            std::to_string(0.01 / rate) + " s");
            const int src = e.scheme.level_index(ch.source_level);
            const int tgt = e.scheme.level_index(ch.target_level);
            for (int atom = 0; atom < e.natoms; ++atom)
                e.chans.push_back({atom, src, tgt, rate});
        }
    }
    e.row_hazard.assign(e.dim, 0.0);
    e.row_nojump_factor.assign(e.dim, 1.0);
    for (int r = 0; r < e.dim; ++r) {
        double h = 0.0;
        for (const auto& c : e.chans) {
            const int lvl = c.atom == 0 ? e.row_levels[r][0] : e.row_levels[r][1];
            if (lvl == c.src) h += c.rate;
        }
        e.row_hazard[r] = h;
        e.row_nojump_factor[r] = std::exp(-0.5 * h * e.dt);
        if (h > 0.0) e.hazard_rows.push_back(r);
    }

    if (e.natoms == 2) {
        const int i0 = e.scheme.level_index("0"), i1 = e.scheme.level_index("1");
        const int idx[4][2] = {{i0, i0}, {i0, i1}, {i1, i0}, {i1, i1}};
        for (auto& p : idx) e.comp_rows.push_back(e.scheme.pair_index(p[0], p[1]));
    }
    return e;
}



// v <- exp(-i h dt) v for an m x m Hamiltonian given in column-major order;
// machine-precision scaled Taylor series.
inline void apply_exp_vec(const Complex* h, int m, double dt, Complex* v, Complex* w,
                          Complex* u) {
    double hmax = 0.0;
    for (int j = 0; j < m; ++j) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += std::abs(h[j * m + i]);
        hmax = std::max(hmax, s);
    }
    double scale = hmax * std::abs(dt);
    int halvings = 0;
    while (scale > 0.5 && halvings < 40) {
        scale *= 0.5;
        ++halvings;
    }
    const double dts = dt / static_cast<double>(1ULL << halvings);
    for (long long rep = 0; rep < (1LL << halvings); ++rep) {
        for (int i = 0; i < m; ++i) w[i] = v[i];
        for (int n = 1; n <= 24; ++n) {
            // u = h * w
            for (int i = 0; i < m; ++i) u[i] = Complex(0.0, 0.0);
            for (int j = 0; j < m; ++j) {
                const Complex c = w[j];
                if (c == Complex(0.0, 0.0)) continue;
                const Complex* hc = h + j * m;
                for (int i = 0; i < m; ++i) u[i] += hc[i] * c;
            }
            const Complex f = Complex(0.0, -dts / n);
            double mx = 0.0;
            for (int i = 0; i < m; ++i) {
                w[i] = f * u[i];
                v[i] += w[i];
                mx = std::max(mx, std::abs(w[i].real()) + std::abs(w[i].imag()));
            }
            if (mx < 1e-17) break;
        }
    }
}

TrajectoryResult run_on_engine(const Engine& e, const ErrorModelConfig& config,
                               std::uint64_t seed, const TrajectoryOptions& opts) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const TimeGrid& grid = e.gate->grid;

    // noise realization; the draw order is part of the determinism contract
    std::vector<double> dnu, eps;
    if (config.enable_frequency_noise && config.frequency_psd) {
        NoiseTrace tr = sample_trace(*config.frequency_psd, grid, rng());
        dnu = std::move(tr.values);
    }
    if (config.enable_intensity_noise && config.intensity_psd) {
        NoiseTrace tr = sample_trace(*config.intensity_psd, grid, rng());
        eps = std::move(tr.values);
    }
    double dc_eps = 0.0, dc_nu = 0.0;
    if (config.enable_shot_to_shot) {
        dc_eps = sample_shot_to_shot(config.shot_to_shot_intensity, rng());
        dc_nu = sample_shot_to_shot(config.shot_to_shot_detuning, rng());
    }
    double dop[2] = {0.0, 0.0};
    double beam[2] = {1.0, 1.0};
    if (config.enable_motion) {
        for (int a = 0; a < e.natoms; ++a) {
            MotionSample m = sample_motion(config.motion, rng());
            dop[a] = m.detuning_hz;
            beam[a] = m.rabi_factor;
        }
    }
    double tone_amp = 0.0, tone_omega = 0.0, tone_phase = 0.0;
    bool tone_freq_kind = false;
    if (config.tone && config.tone->amplitude != 0.0) {
        tone_amp = config.tone->amplitude;
        tone_omega = kTwoPi * config.tone->freq_hz;
        tone_phase = unif(rng) * kTwoPi;
        tone_freq_kind = config.tone->kind == PsdKind::frequency;
    }

    MatrixXc a = opts.reference ? *opts.reference
                                : (e.natoms == 2 ? e.scheme.computational_isometry()
                                                 : MatrixXc(MatrixXc::Identity(e.dim, e.dim)));
    if (a.rows() != e.dim) throw std::invalid_argument("run_trajectory: reference dim mismatch");
    const int ncols = static_cast<int>(a.cols());

    TrajectoryResult res;
    const bool has_decay = !e.chans.empty();
    const bool symmetric_atoms = dop[0] == dop[1] && beam[0] == beam[1];

    // per-(block, column) activity flags
    const int nblocks = static_cast<int>(e.blocks.size());
    std::vector<std::uint8_t> active(static_cast<size_t>(nblocks) * ncols, 0);
    auto refresh_active = [&]() {
        std::fill(active.begin(), active.end(), 0);
        for (int r = 0; r < e.dim; ++r) {
            const int b = e.row_block[r];
            if (b < 0) continue;
            for (int j = 0; j < ncols; ++j)
                if (a(r, j) != Complex(0.0, 0.0)) active[static_cast<size_t>(b) * ncols + j] = 1;
        }
    };
    refresh_active();

    MatrixXc h1[2];  // per-atom noisy single-atom Hamiltonians (nc x nc)
    h1[0].resize(e.nc, e.nc);
    h1[1].resize(e.nc, e.nc);
    const int mb = std::max(e.max_block, 1);
    std::vector<Complex> hbuf_v(static_cast<size_t>(mb) * mb);
    std::vector<Complex> vbuf_v(mb), wbuf_v(mb), ubuf_v(mb);
    Complex* hbuf = hbuf_v.data();
    Complex* vbuf = vbuf_v.data();
    Complex* wbuf = wbuf_v.data();
    Complex* ubuf = ubuf_v.data();

    for (int k = 0; k < e.n_steps; ++k) {
        const double t = grid.midpoint(k);
        double ek = (eps.empty() ? 0.0 : eps[k]) + dc_eps;
        double nuk = (dnu.empty() ? 0.0 : dnu[k]) + dc_nu;
        if (tone_amp != 0.0) {
            const double mod = tone_amp * std::cos(tone_omega * t + tone_phase);
            if (tone_freq_kind)
                nuk += mod;
            else
                ek += mod;
        }
        for (int atom = 0; atom < e.natoms; ++atom) {
            if (atom == 1 && symmetric_atoms) {
                h1[1] = h1[0];
                break;
            }
            const double f = beam[atom] * (1.0 + 0.5 * ek);
            const double g = beam[atom] * beam[atom] * (1.0 + ek);
            h1[atom] = e.drive_c[k] * f + e.shift_c[k] * g + e.static_c;
            if (e.ryd_sub >= 0)
                h1[atom](e.ryd_sub, e.ryd_sub) += -kTwoPi * (nuk + dop[atom]);
        }

        for (int b = 0; b < nblocks; ++b) {
            const EvoBlock& blk = e.blocks[b];
            const int m = static_cast<int>(blk.rows.size());
            const std::uint8_t* act = active.data() + static_cast<size_t>(b) * ncols;
            bool any = false;
            for (int j = 0; j < ncols; ++j) any = any || act[j];
            if (!any) continue;
            // assemble local Hamiltonian (column-major m x m)
            for (int i = 0; i < m * m; ++i) hbuf[i] = Complex(0.0, 0.0);
            for (const auto& en : blk.entries)
                hbuf[en.j * m + en.i] += h1[en.atom](en.li, en.lj);
            if (blk.diag_extra_pos >= 0)
                hbuf[blk.diag_extra_pos * m + blk.diag_extra_pos] += blk.diag_extra;
            for (int j = 0; j < ncols; ++j) {
                if (!act[j]) continue;
                for (int i = 0; i < m; ++i) vbuf[i] = a(blk.rows[i], j);
                apply_exp_vec(hbuf, m, e.dt, vbuf, wbuf, ubuf);
                for (int i = 0; i < m; ++i) a(blk.rows[i], j) = vbuf[i];
            }
        }

        if (!has_decay) continue;

        const double total = a.squaredNorm();
        if (total <= 0.0) continue;
        double hazard = 0.0;
        for (const int r : e.hazard_rows) hazard += e.row_hazard[r] * a.row(r).squaredNorm();
        if (hazard <= 0.0) continue;
        const double p_any = hazard / total * e.dt;
        const double u01 = unif(rng);
        if (u01 < p_any) {
            double acc = 0.0;
            int hit = -1;
            double p_hit = 0.0;
            for (size_t ci = 0; ci < e.chans.size(); ++ci) {
                const auto& c = e.chans[ci];
                double nsrc = 0.0;
                for (const int r : e.hazard_rows) {
                    const int lvl = c.atom == 0 ? e.row_levels[r][0] : e.row_levels[r][1];
                    if (lvl == c.src) nsrc += a.row(r).squaredNorm();
                }
                const double pc = c.rate * nsrc / total * e.dt;
                acc += pc;
                if (u01 < acc) {
                    hit = static_cast<int>(ci);
                    p_hit = pc;
                    break;
                }
            }
            if (hit < 0) {
                for (const int r : e.hazard_rows) a.row(r) *= e.row_nojump_factor[r];
                res.weight /= (1.0 - p_any);
                continue;
            }
            const auto& c = e.chans[static_cast<size_t>(hit)];
            MatrixXc anew = MatrixXc::Zero(e.dim, ncols);
            for (const int r : e.hazard_rows) {
                const auto [la, lb] = e.row_levels[r];
                const int lvl = c.atom == 0 ? la : lb;
                if (lvl != c.src) continue;
                const int rowt = c.atom == 0 ? e.scheme.pair_index(c.tgt, lb)
                                             : e.scheme.pair_index(la, c.tgt);
                if (rowt >= 0) anew.row(rowt) = a.row(r);
            }
            a = std::sqrt(c.rate * e.dt) * anew;
            res.weight /= p_hit;
            res.jumps.push_back({grid.t_start + (k + 1) * e.dt, hit, c.atom});
            refresh_active();
        } else {
            for (const int r : e.hazard_rows) a.row(r) *= e.row_nojump_factor[r];
            res.weight /= (1.0 - p_any);
        }
    }

    if (opts.virtual_z_phase != 0.0) {
        const int lvl1 = e.scheme.level_index("1");
        for (int r = 0; r < e.dim; ++r) {
            int m = 0;
            if (e.row_levels[r][0] == lvl1) ++m;
            if (e.natoms == 2 && e.row_levels[r][1] == lvl1) ++m;
            if (m) a.row(r) *= std::polar(1.0, -opts.virtual_z_phase * m);
        }
    }

    res.map = std::move(a);
    return res;
}

}  // namespace

TrajectoryResult run_trajectory(const GateHamiltonian& gate, const ErrorModelConfig& config,
                                std::uint64_t seed, const TrajectoryOptions& opts) {
    const Engine e = build_engine(gate, config);
    return run_on_engine(e, config, seed, opts);
}

std::string classify_pair_levels(const LevelScheme& scheme, int level_a, int level_b) {
    auto name = [&](int l) { return l >= 0 ? scheme.levels[l] : std::string("0"); };
    const std::string na = name(level_a), nb = name(level_b);
    auto is_comp = [](const std::string& s) { return s == "0" || s == "1"; };
    if (is_comp(na) && is_comp(nb)) return "comp";
    if (na == "dark" || nb == "dark") return "dark";
    if (na == "p2" || nb == "p2") return "p2";
    if (na == "p1" || nb == "p1") return "p1";
    return "r";
}

namespace {

constexpr long long kReduceBlock = 1024;  // fixed reduction granularity

struct BlockAccum {
    double haar = 0.0, haar2 = 0.0;
    double sym = 0.0, sym2 = 0.0;
    double sss = 0.0, sss2 = 0.0;
    std::vector<Eigen::Matrix4cd> leak;
};

}  // namespace

ChannelEstimate run_ensemble(const GateHamiltonian& gate, const ErrorModelConfig& config,
                             long long k, std::uint64_t master_seed,
                             const EnsembleOptions& opts) {
    if (k < 1) throw std::invalid_argument("run_ensemble: K must be >= 1");
    if (gate.scheme.n_atoms != 2)
        throw std::invalid_argument("run_ensemble: pair schemes only (use run_trajectory)");
    const Engine engine = build_engine(gate, config);
    const LevelScheme& scheme = gate.scheme;

    std::vector<std::string> row_class(engine.dim);
    for (int r = 0; r < engine.dim; ++r)
        row_class[r] =
            classify_pair_levels(scheme, engine.row_levels[r][0], engine.row_levels[r][1]);
    std::vector<std::string> classes;
    for (const auto& c : row_class)
        if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
    std::sort(classes.begin(), classes.end());
    std::vector<size_t> row_class_idx(engine.dim);
    for (int r = 0; r < engine.dim; ++r)
        row_class_idx[r] = static_cast<size_t>(
            std::find(classes.begin(), classes.end(), row_class[r]) - classes.begin());

    const MatrixXc cz = cz_ideal();
    MatrixXc sym_iso_comp = MatrixXc::Zero(4, 3);
    sym_iso_comp(0, 0) = 1.0;
    sym_iso_comp(1, 1) = sym_iso_comp(2, 1) = 1.0 / std::sqrt(2.0);
    sym_iso_comp(3, 2) = 1.0;
    const auto& sss = sss_table();

    const long long n_blocks = (k + kReduceBlock - 1) / kReduceBlock;
    std::vector<BlockAccum> blocks(static_cast<size_t>(n_blocks));
    for (auto& b : blocks) b.leak.assign(classes.size(), Eigen::Matrix4cd::Zero());
    std::vector<GateMapSample> maps;
    if (opts.store_maps) maps.resize(static_cast<size_t>(k));

    const TrajectoryOptions& topt = opts.traj;
    if (topt.reference)
        throw std::invalid_argument("run_ensemble: custom references are per-trajectory only");

    auto run_block = [&](long long bi) {
        BlockAccum& acc = blocks[static_cast<size_t>(bi)];
        const long long lo = bi * kReduceBlock;
        const long long hi = std::min(k, lo + kReduceBlock);
        std::vector<Eigen::Matrix4cd> leak_tmp(classes.size());
        for (long long i = lo; i < hi; ++i) {
            TrajectoryResult tr = run_on_engine(
                engine, config, derive_seed(master_seed, static_cast<std::uint64_t>(i)), topt);
            Eigen::Matrix4cd b;
            for (int col = 0; col < 4; ++col)
                for (int row = 0; row < 4; ++row) b(row, col) = tr.map(engine.comp_rows[row], col);
            const Eigen::Matrix4cd m = cz * b;  // CZ^dag = CZ
            const double w = tr.weight;
            const double fh = w * haar_average_fidelity(m);
            const MatrixXc m3 = sym_iso_comp.adjoint() * m * sym_iso_comp;
            const double fy = w * haar_average_fidelity(m3);
            double fs = 0.0;
            for (const auto& st : sss) fs += std::norm(st.amplitudes.dot(m * st.amplitudes));
            fs *= w / 12.0;
            acc.haar += fh;
            acc.haar2 += fh * fh;
            acc.sym += fy;
            acc.sym2 += fy * fy;
            acc.sss += fs;
            acc.sss2 += fs * fs;

            for (auto& lt : leak_tmp) lt.setZero();
            for (int r = 0; r < engine.dim; ++r) {
                Eigen::RowVector4cd rowv;
                bool nz = false;
                for (int col = 0; col < 4; ++col) {
                    rowv(col) = tr.map(r, col);
                    nz = nz || rowv(col) != Complex(0.0, 0.0);
                }
                if (!nz) continue;
                leak_tmp[row_class_idx[r]] += w * (rowv.adjoint() * rowv);
            }
            for (size_t ci = 0; ci < classes.size(); ++ci) acc.leak[ci] += leak_tmp[ci];

            if (opts.store_maps) {
                GateMapSample& gm = maps[static_cast<size_t>(i)];
                gm.map = b;
                gm.weight = w;
                for (size_t ci = 0; ci < classes.size(); ++ci)
                    if (classes[ci] != "comp") gm.leak[classes[ci]] = leak_tmp[ci] / w;
            }
        }
    };

    const int nthreads = std::max(1, opts.threads);
    if (nthreads == 1) {
        for (long long bi = 0; bi < n_blocks; ++bi) run_block(bi);
    } else {
        std::atomic<long long> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    const long long bi = next.fetch_add(1);
                    if (bi >= n_blocks) break;
                    run_block(bi);
                }
            });
        for (auto& th : pool) th.join();
    }

    ChannelEstimate ch;
    ch.trajectory_count = k;
    ch.scheme = scheme;
    for (const auto& c : classes) ch.leak_gram[c] = Eigen::Matrix4cd::Zero();
    for (long long bi = 0; bi < n_blocks; ++bi) {
        const BlockAccum& b = blocks[static_cast<size_t>(bi)];
        ch.haar.sum += b.haar;
        ch.haar.sum_sq += b.haar2;
        ch.sym.sum += b.sym;
        ch.sym.sum_sq += b.sym2;
        ch.sss.sum += b.sss;
        ch.sss.sum_sq += b.sss2;
        for (size_t ci = 0; ci < classes.size(); ++ci)
            ch.leak_gram[classes[ci]] += b.leak[ci] / static_cast<double>(k);
    }
    if (opts.store_maps) ch.maps = std::move(maps);
    return ch;
}

double ChannelEstimate::leakage_sym_average(const std::string& cls) const {
    const auto it = leak_gram.find(cls);
    if (it == leak_gram.end()) return 0.0;
    Eigen::Matrix4cd rho_sym = Eigen::Matrix4cd::Zero();
    rho_sym(0, 0) = 1.0 / 3.0;
    rho_sym(3, 3) = 1.0 / 3.0;
    rho_sym(1, 1) = rho_sym(2, 2) = rho_sym(1, 2) = rho_sym(2, 1) = 1.0 / 6.0;
    return std::real((it->second * rho_sym).trace());
}

FidelityEstimate fidelity_metric(const ChannelEstimate& ch, FidelityMetric metric) {
    if (ch.trajectory_count < 1) throw std::invalid_argument("fidelity_metric: empty ensemble");
    const ChannelEstimate::Accum* acc = nullptr;
    switch (metric) {
        case FidelityMetric::haar: acc = &ch.haar; break;
        case FidelityMetric::sym: acc = &ch.sym; break;
        case FidelityMetric::sss: acc = &ch.sss; break;
        default:
            throw std::invalid_argument("fidelity_metric: unsupported metric for ensembles");
    }
    const double n = static_cast<double>(ch.trajectory_count);
    FidelityEstimate est;
    est.metric = metric;
    est.trajectories = ch.trajectory_count;
    est.mean = acc->sum / n;
    if (ch.trajectory_count > 1) {
        const double var = std::max(0.0, (acc->sum_sq - n * est.mean * est.mean) / (n - 1.0));
        est.stderr_ = std::sqrt(var / n);
    }
    return est;
}

double decay_probability(const GateHamiltonian& gate, const VectorXc& initial_state,
                         double gamma) {
    if (gamma < 0.0) throw std::invalid_argument("decay_probability: Gamma must be >= 0");
    if (gate.scheme.rydberg_index() < 0)
        throw std::invalid_argument("decay_probability: scheme has no Rydberg level");
    const MatrixXc nr = gate.scheme.level_projector_total(gate.scheme.rydberg_index());
    VectorXc psi = initial_state;
    if (std::abs(psi.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("decay_probability: state must be normalized");
    double integral = 0.0;
    for (int k = 0; k < gate.grid.n_steps; ++k) {
        psi = step_unitary(gate.pair_h0(k), gate.grid.dt) * psi;
        integral += std::real(psi.dot(nr * psi)) * gate.grid.dt;
    }
    return gamma * integral;
}

}  // namespace rydsim
