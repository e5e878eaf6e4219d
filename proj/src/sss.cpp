#include "rydsim/sss.hpp"

#include <cmath>

namespace rydsim {

const std::vector<SymmetricStabilizerState>& sss_table() {
    static const std::vector<SymmetricStabilizerState> table = [] {
        const Complex i(0.0, 1.0);
        const double h = 0.5;
        const double s = 1.0 / std::sqrt(2.0);
        std::vector<SymmetricStabilizerState> t;
        auto add = [&](const std::string& stab, Complex a00, Complex a01, Complex a10,
                       Complex a11) {
            SymmetricStabilizerState st;
            st.id = static_cast<int>(t.size());
            st.stabilizers = stab;
            st.amplitudes << a00, a01, a10, a11;
            t.push_back(st);
        };
        add("IX,XI", h, h, h, h);
        add("-IX,-XI", h, -h, -h, h);
        add("IY,YI", h, i * h, i * h, -h);
        add("-IY,-YI", h, -i * h, -i * h, -h);
        add("IZ,ZI", 1, 0, 0, 0);
        add("-IZ,-ZI", 0, 0, 0, 1);
        add("XZ,ZX", h, h, h, -h);
        add("-XZ,-ZX", h, -h, -h, -h);
        add("YZ,ZY", h, i * h, i * h, h);
        add("-YZ,-ZY", h, -i * h, -i * h, h);
        add("XY,YX", s, 0, 0, i * s);
        add("-XY,-YX", s, 0, 0, -i * s);
        return t;
    }();
    return table;
}

double frame_potential(const std::vector<SymmetricStabilizerState>& states, int t) {
    if (t != 1 && t != 2) throw std::invalid_argument("frame_potential: t must be 1 or 2");
    const size_t n = states.size();
    if (n == 0) throw std::invalid_argument("frame_potential: empty state set");
    double acc = 0.0;
    for (const auto& a : states)
        for (const auto& b : states) {
            const double ov = std::norm(a.amplitudes.dot(b.amplitudes));
            acc += t == 1 ? ov : ov * ov;
        }
    return acc / static_cast<double>(n * n);
}

}  // namespace rydsim
