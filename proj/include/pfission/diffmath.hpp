#pragma once

// Small differentiable numeric kernels over double vectors. Each forward
// function has a matching *_vjp that contracts its Jacobian with an upstream
// sensitivity. There is no tape: callers compose VJPs by hand.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pfission/errors.hpp"

namespace pf {

using Vec = std::vector<double>;
using CSpan = std::span<const double>;

/// Norms at or below this are rejected by normalize/cosine_sim.
inline constexpr double kEpsNorm = 1e-9;
/// Probability floor used inside logarithms (KL, -log inner products).
inline constexpr double kEpsProb = 1e-12;

inline double dot(CSpan a, CSpan b) {
    if (a.size() != b.size()) throw ShapeMismatch("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(CSpan v) { return std::sqrt(dot(v, v)); }

// y += alpha * x
inline void axpy(double alpha, CSpan x, std::span<double> y) {
    if (x.size() != y.size()) throw ShapeMismatch("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double checked_norm(CSpan v, const char* what) {
    const double n = norm2(v);
    if (!(n > kEpsNorm)) {
        throw DegenerateNorm(std::string(what) + ": norm " + std::to_string(n) +
                             " is at or below eps_norm");
    }
    return n;
}

// ---------------------------------------------------------------------------
// normalize

inline Vec normalize(CSpan v) {
    const double n = checked_norm(v, "normalize");
    Vec out(v.begin(), v.end());
    for (double& x : out) x /= n;
    return out;
}

/// d(v/|v|)^T u = (u - v̂ <v̂,u>) / |v|
inline Vec normalize_vjp(CSpan v, CSpan upstream) {
    const double n = checked_norm(v, "normalize_vjp");
    Vec out(v.size());
    double proj = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) proj += v[i] * upstream[i];
    proj /= n;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (upstream[i] - (v[i] / n) * proj) / n;
    return out;
}

// ---------------------------------------------------------------------------
// cosine similarity

inline double cosine_sim(CSpan a, CSpan b) {
    const double na = checked_norm(a, "cosine_sim");
    const double nb = checked_norm(b, "cosine_sim");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Returns (d/da, d/db) scaled by `upstream`.
inline std::pair<Vec, Vec> cosine_sim_vjp(CSpan a, CSpan b, double upstream) {
    const double na = checked_norm(a, "cosine_sim_vjp");
    const double nb = checked_norm(b, "cosine_sim_vjp");
    const double c = dot(a, b) / (na * nb);
    Vec ga(a.size()), gb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ga[i] = upstream * (b[i] / (na * nb) - c * a[i] / (na * na));
        gb[i] = upstream * (a[i] / (na * nb) - c * b[i] / (nb * nb));
    }
    return {std::move(ga), std::move(gb)};
}

// ---------------------------------------------------------------------------
// softmax with temperature: softmax(T * z)

inline Vec softmax(CSpan z, double temperature) {
    if (!(temperature > 0.0)) throw NumericError("softmax: temperature must be positive");
    if (z.empty()) return {};
    const double zmax = *std::max_element(z.begin(), z.end());
    Vec out(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(temperature * (z[i] - zmax));
        total += out[i];
    }
    for (double& x : out) x /= total;
    return out;
}

/// VJP expressed through the softmax output y: returns w = y ⊙ (u - <u,y>),
/// the sensitivity of the tempered logits T*z. dz = T*w, dT = <w, z>.
inline Vec softmax_logit_vjp(CSpan y, CSpan upstream) {
    const double uy = dot(upstream, y);
    Vec w(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) w[i] = y[i] * (upstream[i] - uy);
    return w;
}

inline Vec softmax_vjp(CSpan z, double temperature, CSpan upstream) {
    const Vec y = softmax(z, temperature);
    Vec w = softmax_logit_vjp(y, upstream);
    for (double& x : w) x *= temperature;
    return w;
}

// ---------------------------------------------------------------------------
// KL divergence

inline void check_distribution(CSpan p, const char* what) {
    double s = 0.0;
    for (double x : p) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
            throw InvalidDistribution(std::string(what) + ": negative or non-finite entry");
        }
        s += x;
    }
    if (std::abs(s - 1.0) > 1e-6) {
        throw InvalidDistribution(std::string(what) + ": entries sum to " + std::to_string(s));
    }
}

/// KL(p || q) with 0*log0 = 0 and q floored at kEpsProb.
inline double kl_div(CSpan p, CSpan q) {
    if (p.size() != q.size()) throw ShapeMismatch("kl_div: length mismatch");
    check_distribution(p, "kl_div p");
    check_distribution(q, "kl_div q");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / std::max(q[i], kEpsProb));
    }
    return std::max(s, 0.0);
}

/// Unconstrained partials of kl_div w.r.t. p and q, scaled by `upstream`.
inline std::pair<Vec, Vec> kl_div_vjp(CSpan p, CSpan q, double upstream) {
    if (p.size() != q.size()) throw ShapeMismatch("kl_div_vjp: length mismatch");
    Vec gp(p.size()), gq(q.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double qf = std::max(q[i], kEpsProb);
        const double pf = std::max(p[i], kEpsProb);
        gp[i] = upstream * (std::log(pf / qf) + 1.0);
        gq[i] = q[i] > kEpsProb ? -upstream * p[i] / qf : 0.0;
    }
    return {std::move(gp), std::move(gq)};
}

// ---------------------------------------------------------------------------
// scalar activations

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// 1 / (1 + exp(-(T*z - b)))
inline double tempered_sigmoid(double z, double temperature, double offset) {
    return sigmoid(temperature * z - offset);
}

struct TemperedSigmoidGrad {
    double dz;
    double dtemperature;
    double doffset;
};

inline TemperedSigmoidGrad tempered_sigmoid_vjp(double z, double temperature, double offset,
                                                double upstream) {
    const double s = tempered_sigmoid(z, temperature, offset);
    const double ds = s * (1.0 - s) * upstream;
    return {ds * temperature, ds * z, -ds};
}

inline double tanh_vjp(double x, double upstream) {
    const double t = std::tanh(x);
    return (1.0 - t * t) * upstream;
}

/// log(max(x, eps_prob))
inline double safe_log(double x) { return std::log(std::max(x, kEpsProb)); }

inline double safe_log_vjp(double x, double upstream) { return x > kEpsProb ? upstream / x : 0.0; }

// ---------------------------------------------------------------------------
// Tag-dispatched VJP. Scalars travel as length-1 vectors; the result holds one
// gradient per input, in input order.

enum class OpTag { normalize, cosine_sim, softmax, kl_div, tempered_sigmoid, tanh, log };

inline OpTag parse_op_tag(std::string_view name) {
    if (name == "normalize") return OpTag::normalize;
    if (name == "cosine_sim") return OpTag::cosine_sim;
    if (name == "softmax") return OpTag::softmax;
    if (name == "kl_div") return OpTag::kl_div;
    if (name == "tempered_sigmoid") return OpTag::tempered_sigmoid;
    if (name == "tanh") return OpTag::tanh;
    if (name == "log") return OpTag::log;
    throw UnknownOp("unknown op tag '" + std::string(name) + "'");
}

namespace detail {
inline void expect_arity(std::span<const Vec> inputs, std::size_t n, const char* op) {
    if (inputs.size() != n) {
        throw ShapeMismatch(std::string(op) + ": expected " + std::to_string(n) + " inputs");
    }
}
inline double scalar_of(const Vec& v, const char* op) {
    if (v.size() != 1) throw ShapeMismatch(std::string(op) + ": expected scalar input");
    return v[0];
}
}  // namespace detail

inline std::vector<Vec> vjp(OpTag op, std::span<const Vec> inputs, CSpan upstream) {
    using detail::expect_arity;
    using detail::scalar_of;
    switch (op) {
        case OpTag::normalize:
            expect_arity(inputs, 1, "normalize");
            return {normalize_vjp(inputs[0], upstream)};
        case OpTag::cosine_sim: {
            expect_arity(inputs, 2, "cosine_sim");
            auto [ga, gb] = cosine_sim_vjp(inputs[0], inputs[1], upstream[0]);
            return {std::move(ga), std::move(gb)};
        }
        case OpTag::softmax: {
            expect_arity(inputs, 2, "softmax");
            const double t = scalar_of(inputs[1], "softmax");
            const Vec y = softmax(inputs[0], t);
            Vec w = softmax_logit_vjp(y, upstream);
            const double dt = dot(w, inputs[0]);
            for (double& x : w) x *= t;
            return {std::move(w), Vec{dt}};
        }
        case OpTag::kl_div: {
            expect_arity(inputs, 2, "kl_div");
            auto [gp, gq] = kl_div_vjp(inputs[0], inputs[1], upstream[0]);
            return {std::move(gp), std::move(gq)};
        }
        case OpTag::tempered_sigmoid: {
            expect_arity(inputs, 3, "tempered_sigmoid");
            const auto g = tempered_sigmoid_vjp(scalar_of(inputs[0], "tempered_sigmoid"),
                                                scalar_of(inputs[1], "tempered_sigmoid"),
                                                scalar_of(inputs[2], "tempered_sigmoid"), upstream[0]);
            return {Vec{g.dz}, Vec{g.dtemperature}, Vec{g.doffset}};
        }
        case OpTag::tanh:
            expect_arity(inputs, 1, "tanh");
            return {Vec{tanh_vjp(scalar_of(inputs[0], "tanh"), upstream[0])}};
        case OpTag::log:
            expect_arity(inputs, 1, "log");
            return {Vec{safe_log_vjp(scalar_of(inputs[0], "log"), upstream[0])}};
    }
    throw UnknownOp("unhandled op tag");
}

inline std::vector<Vec> vjp(std::string_view op, std::span<const Vec> inputs, CSpan upstream) {
    return vjp(parse_op_tag(op), inputs, upstream);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps coordinates
/// whose true gradient is ~0 from reporting huge ratios of rounding noise.
inline constexpr double kGradCheckFloor = 1e-6;

inline double relative_error(double analytic, double numeric, double floor = kGradCheckFloor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// A named contiguous slice of the flat parameter vector.
struct ParamGroup {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

struct GroupError {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;  // absolute index into the parameter vector
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::vector<GroupError> groups;

    bool passed(double tol) const { return max_rel_err < tol; }

    const GroupError* worst_group() const {
        const GroupError* best = nullptr;
        for (const auto& g : groups) {
            if (!best || g.max_rel_err > best->max_rel_err) best = &g;
        }
        return best;
    }
};

/// Compares `analytic` against central differences (f(p+h) - f(p-h)) / 2h for
/// every coordinate. `f` must be pure. When `groups` is empty a single group
/// named "params" spans the whole vector.
template <class F>
GradCheckReport finite_diff_check(F&& f, CSpan params, CSpan analytic, double h = 1e-5,
                                  std::span<const ParamGroup> groups = {}) {
    if (params.size() != analytic.size()) {
        throw ShapeMismatch("finite_diff_check: analytic gradient length mismatch");
    }
    if (!(h > 0.0)) throw NumericError("finite_diff_check: step must be positive");

    std::vector<ParamGroup> owned;
    if (groups.empty()) {
        owned.push_back({"params", 0, params.size()});
        groups = owned;
    }

    GradCheckReport report;
    Vec work(params.begin(), params.end());
    for (const auto& g : groups) {
        if (g.offset + g.size > params.size()) throw ShapeMismatch("finite_diff_check: group out of range");
        GroupError ge{g.name, 0.0, g.offset};
        for (std::size_t k = g.offset; k < g.offset + g.size; ++k) {
            const double orig = work[k];
            work[k] = orig + h;
            const double fp = f(CSpan(work));
            work[k] = orig - h;
            const double fm = f(CSpan(work));
            work[k] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = relative_error(analytic[k], numeric);
            if (err > ge.max_rel_err) {
                ge.max_rel_err = err;
                ge.worst_index = k;
            }
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_index = k;
                report.worst_analytic = analytic[k];
                report.worst_numeric = numeric;
            }
        }
        report.groups.push_back(std::move(ge));
    }
    return report;
}

}  // namespace pf
