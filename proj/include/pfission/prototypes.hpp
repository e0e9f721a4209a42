#pragma once

// Learnable multi-prototype bank. Each class c owns a global component g[c],
// V local components l[c][i] and V mixing reparameters delta[c][i]; slot i of
// class c is the prototype
//
//     p[c][i] = (1 - lambda) * g[c]/|g[c]| + lambda * l[c][i]/|l[c][i]|,
//     lambda  = (tanh(delta[c][i]) + 1) / 2.
//
// Flat parameter order (checkpoints, optimizer, gradcheck):
//     g by class, then l by class-then-slot, then delta by class-then-slot.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pfission/binary_io.hpp"
#include "pfission/diffmath.hpp"
#include "pfission/errors.hpp"

namespace pf {

struct BankShape {
    std::size_t classes = 0;
    std::size_t slots = 0;
    std::size_t dim = 0;

    std::size_t size() const { return classes * dim + classes * slots * dim + classes * slots; }
    std::size_t g_offset(std::size_t c) const { return c * dim; }
    std::size_t l_offset(std::size_t c, std::size_t i) const {
        return classes * dim + (c * slots + i) * dim;
    }
    std::size_t delta_offset(std::size_t c, std::size_t i) const {
        return classes * dim + classes * slots * dim + c * slots + i;
    }

    friend bool operator==(const BankShape&, const BankShape&) = default;
};

/// Flat storage shaped like a prototype bank. Tagged so parameters and
/// gradients do not mix silently.
template <class Tag>
class BankBuffer {
public:
    BankBuffer() = default;

    explicit BankBuffer(BankShape shape) : shape_(shape), data_(shape.size(), 0.0) {
        if (shape.classes == 0 || shape.slots == 0 || shape.dim == 0) {
            throw ShapeMismatch("bank dimensions must be positive");
        }
    }

    BankBuffer(BankShape shape, Vec flat) : shape_(shape), data_(std::move(flat)) {
        if (data_.size() != shape_.size()) {
            throw ShapeMismatch("flat parameter vector has length " + std::to_string(data_.size()) +
                                ", expected " + std::to_string(shape_.size()));
        }
    }

    const BankShape& shape() const { return shape_; }
    std::size_t classes() const { return shape_.classes; }
    std::size_t slots() const { return shape_.slots; }
    std::size_t dim() const { return shape_.dim; }

    std::span<double> g(std::size_t c) { return {data_.data() + shape_.g_offset(c), shape_.dim}; }
    std::span<const double> g(std::size_t c) const {
        return {data_.data() + shape_.g_offset(c), shape_.dim};
    }
    std::span<double> l(std::size_t c, std::size_t i) {
        return {data_.data() + shape_.l_offset(c, i), shape_.dim};
    }
    std::span<const double> l(std::size_t c, std::size_t i) const {
        return {data_.data() + shape_.l_offset(c, i), shape_.dim};
    }
    double& delta(std::size_t c, std::size_t i) { return data_[shape_.delta_offset(c, i)]; }
    double delta(std::size_t c, std::size_t i) const { return data_[shape_.delta_offset(c, i)]; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    BankBuffer& operator+=(const BankBuffer& o) {
        if (!(shape_ == o.shape_)) throw ShapeMismatch("bank buffer shape mismatch");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }

    BankBuffer& operator*=(double s) {
        for (double& x : data_) x *= s;
        return *this;
    }

    friend bool operator==(const BankBuffer&, const BankBuffer&) = default;

private:
    BankShape shape_{};
    Vec data_;
};

struct ParamsTag {};
struct GradTag {};

using PrototypeBank = BankBuffer<ParamsTag>;
using BankGrad = BankBuffer<GradTag>;

inline double lambda_of(double delta) { return 0.5 * (std::tanh(delta) + 1.0); }

/// dλ/dδ = (1 - tanh²δ) / 2
inline double lambda_grad(double delta) { return 0.5 * tanh_vjp(delta, 1.0); }

/// Gaussian directions normalized to the unit sphere; delta = 0 (lambda = 0.5).
inline PrototypeBank init_bank(std::size_t classes, std::size_t slots, std::size_t dim,
                               std::uint64_t seed) {
    PrototypeBank bank(BankShape{classes, slots, dim});
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto fill_unit = [&](std::span<double> v) {
        double n = 0.0;
        do {
            for (double& x : v) x = gauss(rng);
            n = norm2(v);
        } while (!(n > kEpsNorm));
        for (double& x : v) x /= n;
    };
    for (std::size_t c = 0; c < classes; ++c) fill_unit(bank.g(c));
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < slots; ++i) fill_unit(bank.l(c, i));
    }
    return bank;
}

struct ComposedPrototype {
    Vec p;
    std::size_t c = 0;
    std::size_t i = 0;
    double lambda = 0.5;
};

inline void check_index(const PrototypeBank& bank, std::size_t c, std::size_t i) {
    if (c >= bank.classes() || i >= bank.slots()) {
        throw ShapeMismatch("prototype index (" + std::to_string(c) + ", " + std::to_string(i) +
                            ") out of range");
    }
}

inline ComposedPrototype compose(const PrototypeBank& bank, std::size_t c, std::size_t i) {
    check_index(bank, c, i);
    const Vec gh = normalize(bank.g(c));
    const Vec lh = normalize(bank.l(c, i));
    const double lam = lambda_of(bank.delta(c, i));
    ComposedPrototype out{Vec(bank.dim()), c, i, lam};
    for (std::size_t k = 0; k < bank.dim(); ++k) out.p[k] = (1.0 - lam) * gh[k] + lam * lh[k];
    return out;
}

/// Every composed prototype of a bank plus the intermediates needed for
/// backpropagation. Built once per step and shared by all per-sample terms.
class ComposedBank {
public:
    explicit ComposedBank(const PrototypeBank& bank)
        : shape_(bank.shape()),
          ghat_(shape_.classes * shape_.dim),
          gnorm_(shape_.classes),
          lhat_(shape_.classes * shape_.slots * shape_.dim),
          lnorm_(shape_.classes * shape_.slots),
          lambda_(shape_.classes * shape_.slots),
          delta_(shape_.classes * shape_.slots),
          p_(shape_.classes * shape_.slots * shape_.dim),
          pnorm_(shape_.classes * shape_.slots) {
        const std::size_t d = shape_.dim;
        for (std::size_t c = 0; c < shape_.classes; ++c) {
            gnorm_[c] = checked_norm(bank.g(c), "compose g");
            for (std::size_t k = 0; k < d; ++k) ghat_[c * d + k] = bank.g(c)[k] / gnorm_[c];
            for (std::size_t i = 0; i < shape_.slots; ++i) {
                const std::size_t s = c * shape_.slots + i;
                lnorm_[s] = checked_norm(bank.l(c, i), "compose l");
                delta_[s] = bank.delta(c, i);
                lambda_[s] = lambda_of(delta_[s]);
                for (std::size_t k = 0; k < d; ++k) {
                    lhat_[s * d + k] = bank.l(c, i)[k] / lnorm_[s];
                    p_[s * d + k] = (1.0 - lambda_[s]) * ghat_[c * d + k] + lambda_[s] * lhat_[s * d + k];
                }
                pnorm_[s] = checked_norm(prototype(c, i), "composed prototype");
            }
        }
    }

    const BankShape& shape() const { return shape_; }
    std::size_t classes() const { return shape_.classes; }
    std::size_t slots() const { return shape_.slots; }
    std::size_t dim() const { return shape_.dim; }

    CSpan prototype(std::size_t c, std::size_t i) const {
        return {p_.data() + (c * shape_.slots + i) * shape_.dim, shape_.dim};
    }
    double prototype_norm(std::size_t c, std::size_t i) const { return pnorm_[c * shape_.slots + i]; }
    double lambda(std::size_t c, std::size_t i) const { return lambda_[c * shape_.slots + i]; }
    CSpan ghat(std::size_t c) const { return {ghat_.data() + c * shape_.dim, shape_.dim}; }
    CSpan lhat(std::size_t c, std::size_t i) const {
        return {lhat_.data() + (c * shape_.slots + i) * shape_.dim, shape_.dim};
    }

    /// Maps a sensitivity w.r.t. every composed prototype (N*V*d, slot-major
    /// like p) back onto g, l and delta.
    BankGrad backprop(CSpan dprototypes) const {
        const std::size_t d = shape_.dim;
        if (dprototypes.size() != shape_.classes * shape_.slots * d) {
            throw ShapeMismatch("prototype sensitivity has wrong length");
        }
        BankGrad grad(shape_);
        Vec dghat(d);
        for (std::size_t c = 0; c < shape_.classes; ++c) {
            std::fill(dghat.begin(), dghat.end(), 0.0);
            for (std::size_t i = 0; i < shape_.slots; ++i) {
                const std::size_t s = c * shape_.slots + i;
                const double* u = dprototypes.data() + s * d;
                const double lam = lambda_[s];
                const double* lh = lhat_.data() + s * d;
                const double* gh = ghat_.data() + c * d;
                double dlam = 0.0;
                double proj = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    dghat[k] += (1.0 - lam) * u[k];
                    dlam += u[k] * (lh[k] - gh[k]);
                    proj += lh[k] * lam * u[k];
                }
                auto dl = grad.l(c, i);
                for (std::size_t k = 0; k < d; ++k) dl[k] = (lam * u[k] - lh[k] * proj) / lnorm_[s];
                grad.delta(c, i) = dlam * lambda_grad(delta_[s]);
            }
            const double* gh = ghat_.data() + c * d;
            double proj = 0.0;
            for (std::size_t k = 0; k < d; ++k) proj += gh[k] * dghat[k];
            auto dg = grad.g(c);
            for (std::size_t k = 0; k < d; ++k) dg[k] = (dghat[k] - gh[k] * proj) / gnorm_[c];
        }
        return grad;
    }

private:
    BankShape shape_;
    Vec ghat_, gnorm_, lhat_, lnorm_, lambda_, delta_, p_, pnorm_;
};

/// Cosine similarities of one feature against the V slots of one class.
struct SimilarityRow {
    Vec sims;
    double per_class_max = 0.0;
    std::size_t argmax_slot = 0;
};

/// Lowest index wins ties.
inline std::size_t argmax(CSpan v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
        if (v[k] > v[best]) best = k;
    }
    return best;
}

/// N×V matrix of feature-to-prototype cosine similarities, row per class.
class SimilarityMatrix {
public:
    SimilarityMatrix() = default;

    /// `feat` need not be normalized; the unit feature is kept for backprop.
    SimilarityMatrix(const ComposedBank& bank, CSpan feat)
        : classes_(bank.classes()), slots_(bank.slots()), sims_(classes_ * slots_),
          fhat_(normalize(feat)), argmax_(classes_) {
        if (feat.size() != bank.dim()) throw ShapeMismatch("feature dimension does not match bank");
        for (std::size_t c = 0; c < classes_; ++c) {
            for (std::size_t i = 0; i < slots_; ++i) {
                const double s = dot(fhat_, bank.prototype(c, i)) / bank.prototype_norm(c, i);
                sims_[c * slots_ + i] = std::clamp(s, -1.0, 1.0);
            }
            argmax_[c] = pf::argmax(row(c));
        }
    }

    std::size_t classes() const { return classes_; }
    std::size_t slots() const { return slots_; }
    double operator()(std::size_t c, std::size_t i) const { return sims_[c * slots_ + i]; }
    CSpan row(std::size_t c) const { return {sims_.data() + c * slots_, slots_}; }
    CSpan values() const { return sims_; }
    CSpan unit_feature() const { return fhat_; }

    std::size_t argmax_slot(std::size_t c) const { return argmax_[c]; }
    double class_max(std::size_t c) const { return sims_[c * slots_ + argmax_[c]]; }

    /// Per-class max-logits: logit(x) for every class.
    Vec class_maxes() const {
        Vec out(classes_);
        for (std::size_t c = 0; c < classes_; ++c) out[c] = class_max(c);
        return out;
    }

    /// Slot-v logit of every class.
    Vec slot_column(std::size_t v) const {
        Vec out(classes_);
        for (std::size_t c = 0; c < classes_; ++c) out[c] = sims_[c * slots_ + v];
        return out;
    }

    /// Smallest gap between a class's best and runner-up slot; +inf when V=1.
    double min_tie_gap() const {
        double gap = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes_; ++c) {
            for (std::size_t i = 0; i < slots_; ++i) {
                if (i != argmax_[c]) gap = std::min(gap, class_max(c) - (*this)(c, i));
            }
        }
        return gap;
    }

private:
    std::size_t classes_ = 0;
    std::size_t slots_ = 0;
    Vec sims_;
    Vec fhat_;
    std::vector<std::size_t> argmax_;
};

/// Adds dL/dp for all prototypes given dL/dS for one sample's similarity matrix.
/// d cos(f, p)/dp = f̂/|p| - cos * p/|p|².
inline void accumulate_similarity_grad(const ComposedBank& bank, const SimilarityMatrix& sims,
                                       CSpan dsims, std::span<double> dprototypes) {
    const std::size_t d = bank.dim();
    const CSpan fhat = sims.unit_feature();
    for (std::size_t c = 0; c < bank.classes(); ++c) {
        for (std::size_t i = 0; i < bank.slots(); ++i) {
            const double up = dsims[c * bank.slots() + i];
            if (up == 0.0) continue;
            const double pn = bank.prototype_norm(c, i);
            const double s = sims(c, i);
            const CSpan p = bank.prototype(c, i);
            double* out = dprototypes.data() + (c * bank.slots() + i) * d;
            for (std::size_t k = 0; k < d; ++k) out[k] += up * (fhat[k] / pn - s * p[k] / (pn * pn));
        }
    }
}

inline SimilarityRow class_similarities(const PrototypeBank& bank, CSpan feat, std::size_t c) {
    check_index(bank, c, 0);
    SimilarityRow row;
    row.sims.resize(bank.slots());
    for (std::size_t i = 0; i < bank.slots(); ++i) row.sims[i] = cosine_sim(feat, compose(bank, c, i).p);
    row.argmax_slot = argmax(row.sims);
    row.per_class_max = row.sims[row.argmax_slot];
    return row;
}

inline SimilarityMatrix all_logits(const PrototypeBank& bank, CSpan feat) {
    return SimilarityMatrix(ComposedBank(bank), feat);
}

inline Vec flatten_params(const PrototypeBank& bank) {
    return Vec(bank.flat().begin(), bank.flat().end());
}

inline PrototypeBank unflatten_params(const BankShape& shape, Vec flat) {
    return PrototypeBank(shape, std::move(flat));
}

/// Named slices of the flat vector, in flatten order.
inline std::vector<ParamGroup> param_groups(const BankShape& s) {
    std::vector<ParamGroup> out;
    for (std::size_t c = 0; c < s.classes; ++c) {
        out.push_back({"g[" + std::to_string(c) + "]", s.g_offset(c), s.dim});
    }
    for (std::size_t c = 0; c < s.classes; ++c) {
        for (std::size_t i = 0; i < s.slots; ++i) {
            out.push_back({"l[" + std::to_string(c) + "][" + std::to_string(i) + "]", s.l_offset(c, i), s.dim});
        }
    }
    for (std::size_t c = 0; c < s.classes; ++c) {
        out.push_back({"delta[" + std::to_string(c) + "]", s.delta_offset(c, 0), s.slots});
    }
    return out;
}

inline constexpr double kReprojectNorm = 1e-6;

/// Lifts g and l vectors whose norm fell below 1e-6 back to norm 1e-6 along
/// the same direction; exactly-zero vectors get a fresh deterministic direction.
inline void reproject(PrototypeBank& bank) {
    auto fix = [](std::span<double> v, std::uint64_t salt) {
        double n = norm2(v);
        if (n >= kReprojectNorm) return;
        if (n == 0.0) {
            std::mt19937_64 rng(0x5eed'0000'0000ULL ^ salt);
            std::normal_distribution<double> gauss(0.0, 1.0);
            while (!(n > 0.0)) {
                for (double& x : v) x = gauss(rng);
                n = norm2(v);
            }
        }
        for (double& x : v) x *= kReprojectNorm / n;
    };
    const auto& s = bank.shape();
    for (std::size_t c = 0; c < s.classes; ++c) fix(bank.g(c), s.g_offset(c));
    for (std::size_t c = 0; c < s.classes; ++c) {
        for (std::size_t i = 0; i < s.slots; ++i) fix(bank.l(c, i), s.l_offset(c, i));
    }
}

// ---------------------------------------------------------------------------
// Checkpoint: "PFBK", version u32, N u32, V u32, d u32, then f64 parameters.

inline constexpr std::uint32_t kBankFormatVersion = 1;

inline void write_bank(std::ostream& os, const PrototypeBank& bank) {
    io::write_magic(os, "PFBK");
    io::write_le<std::uint32_t>(os, kBankFormatVersion);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(bank.classes()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(bank.slots()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(bank.dim()));
    for (double x : bank.flat()) io::write_le<double>(os, x);
}

inline PrototypeBank read_bank(std::istream& is) {
    io::expect_magic(is, "PFBK", "bank checkpoint");
    const auto version = io::read_le<std::uint32_t>(is, "bank checkpoint");
    if (version != kBankFormatVersion) {
        throw DataError("bank checkpoint: unsupported version " + std::to_string(version));
    }
    BankShape shape;
    shape.classes = io::read_le<std::uint32_t>(is, "bank checkpoint");
    shape.slots = io::read_le<std::uint32_t>(is, "bank checkpoint");
    shape.dim = io::read_le<std::uint32_t>(is, "bank checkpoint");
    if (shape.classes == 0 || shape.slots == 0 || shape.dim == 0) {
        throw DataError("bank checkpoint: zero dimension in header");
    }
    Vec flat(shape.size());
    for (double& x : flat) x = io::read_le<double>(is, "bank checkpoint");
    return PrototypeBank(shape, std::move(flat));
}

inline void save_bank(const std::string& path, const PrototypeBank& bank) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_bank(os, bank);
    if (!os) throw DataError("write failed for '" + path + "'");
}

inline PrototypeBank load_bank(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    return read_bank(is);
}

}  // namespace pf
