#pragma once
// Gate Hamiltonians (ideal time-optimal, realistic, two-photon) and pulse
// calibration. The phase ansatz is phi(t) = A cos(w_m t + offset) + Delta t
// with constant (or enveloped) Rabi drive; calibration tunes the free
// parameters until the noiseless propagator realizes CZ up to a single-atom
// phase compensated by a virtual Z.

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rydsim/core.hpp"

namespace rydsim {

enum class Blockade { infinite, finite };

// Per-atom level structure plus the two-atom tensor index map. In infinite
// blockade mode the |rr> basis state is removed from the pair space.
struct LevelScheme {
    std::vector<std::string> levels;  // per-atom labels, e.g. {"0","1","r"}
    int n_atoms = 2;                  // 1 or 2
    Blockade blockade = Blockade::infinite;
    double blockade_rad = 0.0;        // B (rad/s), finite mode only

    int n_levels() const { return static_cast<int>(levels.size()); }
    int level_index(const std::string& name) const;
    // index of the Rydberg level, or -1 when the scheme has none
    int rydberg_index() const {
        for (int i = 0; i < n_levels(); ++i)
            if (levels[i] == "r") return i;
        return -1;
    }

    // dimension of the (possibly blockade-reduced) state space
    int dim() const;
    // compact index of pair state |a b>, or -1 if excluded by blockade
    int pair_index(int a, int b) const;
    // single-atom schemes: pair_index(a) == a

    // embed a single-atom operator acting on the given atom (0 or 1)
    MatrixXc embed(const MatrixXc& op1, int atom) const;
    // sum over atoms of |lvl_i><lvl_i|
    MatrixXc level_projector_total(int lvl) const;
    // |lvl_i><lvl_i| for one atom
    MatrixXc level_projector_atom(int lvl, int atom) const;
    // blockade term (zero matrix in infinite mode; B|rr><rr| in finite mode)
    MatrixXc blockade_term() const;

    // isometry onto the computational subspace {00,01,10,11} (columns in that
    // order); for single-atom schemes the {0,1} subspace
    MatrixXc computational_isometry() const;
    // isometry onto {|00>, (|01>+|10>)/sqrt(2), |11>}
    MatrixXc symmetric_isometry() const;

    static LevelScheme ideal_pair(Blockade b = Blockade::infinite, double blockade_rad = 0.0);
    static LevelScheme decay_resolved_pair(Blockade b = Blockade::infinite,
                                           double blockade_rad = 0.0);
    static LevelScheme two_photon_pair(Blockade b = Blockade::infinite, double blockade_rad = 0.0);
};

struct TwoPhotonParams {
    double omega1 = 0.0, omega2 = 0.0;      // rad/s
    double delta_intermediate = 0.0;        // rad/s
    std::optional<ControlSchedule> delta1, delta2;  // extra detunings (rad/s)
    // polarizabilities kappa_{s,j}, s in {0,1,r}, j in {1,2} (rad/s per (rad/s)^2)
    double kappa0[2] = {0.0, 0.0};
    double kappa1[2] = {0.0, 0.0};
    double kappar[2] = {0.0, 0.0};
    double blockade_rad = 0.0;  // 0 means infinite
    double duration = 0.0;
};

enum class TwoPhotonMode { four_level, effective_three_level };

// A gate Hamiltonian in factored form. Single-atom pieces are stored per
// step; the pair Hamiltonian is their embedding plus the blockade term.
// Noise enters multiplicatively on the drive and quadratically on the
// light-shift part (see traj module).
struct GateHamiltonian {
    LevelScheme scheme;
    TimeGrid grid;
    double omega = 0.0;  // nominal Rabi frequency (rad/s)

    std::vector<MatrixXc> drive1;  // per-step single-atom drive (prop. to Omega)
    std::vector<MatrixXc> shift1;  // per-step single-atom light shifts (prop. to Omega^2)
    MatrixXc static1;              // time-independent single-atom part

    bool ideal_pulse = false;  // zero rise time, infinite blockade, no light shifts
    std::optional<TwoPhotonParams> two_photon;  // set by the two-photon builder
    TwoPhotonMode two_photon_mode = TwoPhotonMode::four_level;

    MatrixXc single_atom_h0(int k) const { return drive1[k] + shift1[k] + static1; }
    MatrixXc pair_h0(int k) const;
    // noiseless Hamiltonian table on the scheme's state space
    HamiltonianTable table() const;
    MatrixXc propagator(std::vector<MatrixXc>* table = nullptr) const;
};

struct TimeOptimalParams {
    double omega = 0.0;        // rad/s
    double amp = 0.0;          // A (rad)
    double mod_freq = 0.0;     // w_m (rad/s)
    double offset = 0.0;       // rad
    double detuning = 0.0;     // Delta (rad/s), linear phase-ramp slope
    double duration = 0.0;     // T (s)
    double single_atom_phase = 0.0;  // phi (rad), set by calibration

    double phase(double t) const {
        return amp * std::cos(mod_freq * t + offset) + detuning * t;
    }
    std::array<double, 4> dimensionless() const {
        return {amp, mod_freq / omega, detuning / omega, omega * duration};
    }
};

struct RealisticGateParams {
    TimeOptimalParams pulse;   // same ansatz; duration includes the ramps
    double rise_time = 0.0;    // t_r (s), raised-cosine ramp at each end
    double kappa_r = 0.0;      // rad/s per (rad/s)^2
    double kappa_g = 0.0;
    double blockade_rad = 0.0;       // 0 means infinite
    // drive envelope shape factor in [0,1]; plateau value 1
    double envelope(double t) const;
};

GateHamiltonian build_ideal_hamiltonian(const TimeOptimalParams& p, const LevelScheme& scheme,
                                        int n_steps = 0);
GateHamiltonian build_realistic_hamiltonian(const RealisticGateParams& p,
                                            const LevelScheme& scheme, int n_steps = 0);
GateHamiltonian build_two_photon_hamiltonian(const TwoPhotonParams& p, TwoPhotonMode mode,
                                             int n_steps = 0);

// Constant-drive lock: H = (Omega/2) sigma_x on {g,r}; used by spin-lock.
GateHamiltonian build_lock_hamiltonian(double omega, double duration, int n_steps = 0,
                                       bool with_dark_level = false);

// ideal CZ on the computational basis {00,01,10,11}
MatrixXc cz_ideal();

// [Tr(M^dag M) + |Tr M|^2] / (D (D+1)), the Haar second-moment average of
// |<psi|M|psi>|^2 over a D-dimensional subspace.
double haar_average_fidelity(const MatrixXc& m);

// phi = arg<01|u|01> - arg<00|u|00> of a computational-subspace propagator;
// throws if off-block leakage exceeds leak_tol.
double extract_single_atom_phase(const MatrixXc& u_full, const LevelScheme& scheme,
                                 double leak_tol = 1e-6);

// CZ infidelity of the pair propagator after the optimal virtual Z(phi) x
// Z(phi), averaged over the symmetric subspace (D = 3); also returns phi.
struct VirtualZResult {
    double phase = 0.0;
    double infidelity = 0.0;
};
VirtualZResult best_virtual_z(const MatrixXc& u_full, const LevelScheme& scheme);

struct CalibrationOptions {
    int coarse_steps = 700;    // grid steps during search
    int fine_steps = 4000;     // grid steps for the final polish/report
    double target_residual = 1e-7;
    int max_iterations = 4000;
    bool failed = false;       // set on non-convergence (result still best-effort)
};

// Calibrates (A, w_m, offset, Delta, T) for the given Rabi frequency so the
// noiseless gate is a CZ after virtual-Z compensation. Deterministic: the
// optimization runs in dimensionless units from a fixed simplex, so the
// dimensionless parameters are independent of omega.
TimeOptimalParams calibrate_time_optimal(double omega, CalibrationOptions* opts = nullptr);

// Recalibrates the phase ansatz with the realistic envelope/shifts in place.
RealisticGateParams calibrate_realistic(const RealisticGateParams& initial,
                                        CalibrationOptions* opts = nullptr);

// Generic Nelder-Mead minimizer (deterministic; fixed initial simplex built
// from the start point and per-coordinate scales).
struct NelderMeadResult {
    std::vector<double> x;
    double fval = 0.0;
    int iterations = 0;
    bool converged = false;
};
NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             const std::vector<double>& x0, const std::vector<double>& scales,
                             double ftol, int max_iter);

}  // namespace rydsim
