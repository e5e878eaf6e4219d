#pragma once
// The twelve symmetric stabilizer states (SSS): two-qubit stabilizer states
// invariant under qubit exchange. They form a 2-design on the symmetric
// subspace, so the gate fidelity averaged over them equals the symmetric
// Haar average.

#include <array>
#include <string>
#include <vector>

#include "rydsim/core.hpp"

namespace rydsim {

struct SymmetricStabilizerState {
    int id = 0;                 // 0..11
    std::string stabilizers;    // e.g. "IX,XI"
    Eigen::Vector4cd amplitudes;  // on {00,01,10,11}
};

const std::vector<SymmetricStabilizerState>& sss_table();

// (1/N^2) sum_ij |<psi_i|psi_j>|^(2t)
double frame_potential(const std::vector<SymmetricStabilizerState>& states, int t);

}  // namespace rydsim
