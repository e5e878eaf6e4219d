#pragma once
// Dense time evolution of small quantum systems under piecewise-constant
// time-dependent Hamiltonians. All Hamiltonian entries are angular
// frequencies (rad/s); time is in seconds.

#include <complex>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace rydsim {

using Complex = std::complex<double>;
using VectorXc = Eigen::VectorXcd;
using MatrixXc = Eigen::MatrixXcd;

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// Uniform time grid: steps k = 0..n_steps-1 cover [t_start + k*dt, t_start + (k+1)*dt).
struct TimeGrid {
    double t_start = 0.0;
    double dt = 0.0;
    int n_steps = 0;

    double duration() const { return dt * n_steps; }
    // midpoint of step k, where piecewise-constant Hamiltonians are sampled
    double midpoint(int k) const { return t_start + (k + 0.5) * dt; }

    void validate() const {
        if (dt <= 0.0 || n_steps <= 0)
            throw std::invalid_argument("TimeGrid: dt and n_steps must be positive");
    }
};

// Sampled control values, one per grid step.
struct ControlSchedule {
    TimeGrid grid;
    std::vector<double> samples;

    void validate() const;
};

// A Hamiltonian evaluated on a grid: H(k) returns the step-k matrix (rad/s).
using HamiltonianTable = std::function<MatrixXc(int step)>;

// Unitary exp(-i H dt) for Hermitian H via eigendecomposition.
MatrixXc expm_unitary_eig(const MatrixXc& h, double dt);

// Same map computed by a machine-precision Taylor series when ||H dt|| is
// small, falling back to the eigendecomposition otherwise. Used in hot loops;
// agrees with expm_unitary_eig to ~1e-15.
MatrixXc step_unitary(const MatrixXc& h, double dt);

double hermiticity_defect(const MatrixXc& h);
double unitarity_defect(const MatrixXc& u);

void require_hermitian(const MatrixXc& h, double tol = 1e-9);

// psi(T) under piecewise-constant propagation. psi0 must be normalized.
VectorXc evolve_state(const HamiltonianTable& h, const VectorXc& psi0, const TimeGrid& grid);

// U(T); when table != nullptr also fills {U(t_k)} for k = 0..n_steps (table
// front is the identity, back is U(T)).
MatrixXc evolve_propagator(const HamiltonianTable& h, const TimeGrid& grid,
                           std::vector<MatrixXc>* table = nullptr);

Complex expectation(const MatrixXc& op, const VectorXc& psi);

// Default step count for a protocol of duration t_total and spectral scale
// h_max = max |H| (rad/s): dt = min(T/2000, 1/(50 h_max)).
int default_steps(double t_total, double h_max);

}  // namespace rydsim
