#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "pfission/diffmath.hpp"

namespace pft {

inline pf::Vec gauss_vec(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    pf::Vec v(d);
    for (double& x : v) x = scale * g(rng);
    return v;
}

inline pf::Vec unit_vec(std::mt19937_64& rng, std::size_t d) { return pf::normalize(gauss_vec(rng, d)); }

inline pf::Vec random_distribution(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    pf::Vec p(n);
    double s = 0.0;
    for (double& x : p) s += (x = u(rng));
    for (double& x : p) x /= s;
    return p;
}

inline double max_abs_diff(pf::CSpan a, pf::CSpan b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace pft
