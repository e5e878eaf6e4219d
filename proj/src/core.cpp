#include "rydsim/core.hpp"

#include <cmath>

namespace rydsim {

void ControlSchedule::validate() const {
    grid.validate();
    if (static_cast<int>(samples.size()) != grid.n_steps)
        throw std::invalid_argument("ControlSchedule: sample count must equal n_steps");
    for (double v : samples)
        if (!std::isfinite(v)) throw std::invalid_argument("ControlSchedule: non-finite sample");
}

double hermiticity_defect(const MatrixXc& h) {
    return (h - h.adjoint()).cwiseAbs().maxCoeff();
}

double unitarity_defect(const MatrixXc& u) {
    MatrixXc g = u.adjoint() * u;
    g.diagonal().array() -= 1.0;
    return g.cwiseAbs().maxCoeff();
}

void require_hermitian(const MatrixXc& h, double tol) {
    if (hermiticity_defect(h) > tol)
        throw std::invalid_argument("Hamiltonian step matrix is not Hermitian");
}

MatrixXc expm_unitary_eig(const MatrixXc& h, double dt) {
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(h);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("eigendecomposition failed in expm_unitary_eig");
    const auto& v = es.eigenvectors();
    VectorXc phases(h.rows());
    for (Eigen::Index i = 0; i < h.rows(); ++i)
        phases(i) = std::polar(1.0, -es.eigenvalues()(i) * dt);
    return v * phases.asDiagonal() * v.adjoint();
}

MatrixXc step_unitary(const MatrixXc& h, double dt) {
    // scaled Taylor series of exp(-i H dt); for ||H dt|| <= 1/2 the 12-term
    // series is below double roundoff (1/2^13/13! ~ 2e-14 before scaling)
    const double scale = h.cwiseAbs().rowwise().sum().maxCoeff() * std::abs(dt);
    if (!std::isfinite(scale)) throw std::runtime_error("non-finite Hamiltonian");
    int squarings = 0;
    double s = scale;
    while (s > 0.5 && squarings < 30) {
        s *= 0.5;
        ++squarings;
    }
    if (squarings >= 30) return expm_unitary_eig(h, dt);

    const double step = dt / static_cast<double>(1 << squarings);
    MatrixXc a = Complex(0.0, -step) * h;
    MatrixXc u = MatrixXc::Identity(h.rows(), h.cols());
    MatrixXc term = a;
    u += term;
    for (int n = 2; n <= 12; ++n) {
        term = (term * a) / static_cast<double>(n);
        u += term;
    }
    for (int i = 0; i < squarings; ++i) u = u * u;
    return u;
}

VectorXc evolve_state(const HamiltonianTable& h, const VectorXc& psi0, const TimeGrid& grid) {
    grid.validate();
    if (std::abs(psi0.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("evolve_state: psi0 must be normalized");
    VectorXc psi = psi0;
    for (int k = 0; k < grid.n_steps; ++k) {
        MatrixXc hk = h(k);
        require_hermitian(hk);
        psi = step_unitary(hk, grid.dt) * psi;
        if (!psi.allFinite()) throw std::runtime_error("evolve_state: non-finite amplitude");
    }
    return psi;
}

MatrixXc evolve_propagator(const HamiltonianTable& h, const TimeGrid& grid,
                           std::vector<MatrixXc>* table) {
    grid.validate();
    MatrixXc u;
    for (int k = 0; k < grid.n_steps; ++k) {
        MatrixXc hk = h(k);
        require_hermitian(hk);
        if (k == 0) {
            u = MatrixXc::Identity(hk.rows(), hk.cols());
            if (table) {
                table->clear();
                table->reserve(grid.n_steps + 1);
                table->push_back(u);
            }
        }
        u = step_unitary(hk, grid.dt) * u;
        if (!u.allFinite()) throw std::runtime_error("evolve_propagator: non-finite amplitude");
        if (table) table->push_back(u);
    }
    if (u.size() == 0) throw std::invalid_argument("evolve_propagator: empty grid");
    return u;
}

Complex expectation(const MatrixXc& op, const VectorXc& psi) {
    if (op.rows() != psi.size() || op.cols() != psi.size())
        throw std::invalid_argument("expectation: dimension mismatch");
    return psi.dot(op * psi);
}

int default_steps(double t_total, double h_max) {
    if (t_total <= 0.0) throw std::invalid_argument("default_steps: nonpositive duration");
    double dt = t_total / 2000.0;
    if (h_max > 0.0) dt = std::min(dt, 1.0 / (50.0 * h_max));
    return std::max(1, static_cast<int>(std::ceil(t_total / dt - 1e-9)));
}

}  // namespace rydsim
