#pragma once

// Training objectives over a prototype bank. Every per-sample kernel works on
// a SimilarityMatrix S (N classes × V slots) and returns its value together
// with dL/dS; ComposedBank::backprop turns accumulated prototype sensitivities
// into parameter gradients.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pfission/diffmath.hpp"
#include "pfission/errors.hpp"
#include "pfission/prototypes.hpp"

namespace pf {

// ---------------------------------------------------------------------------
// Activations

enum class ActivationKind { tempered_sigmoid, tempered_softmax };

struct Activation {
    ActivationKind kind = ActivationKind::tempered_sigmoid;
    double temperature = 10.0;
    double offset = 5.0;  // sigmoid only

    static Activation sigmoid(double temperature, double offset) {
        return checked({ActivationKind::tempered_sigmoid, temperature, offset});
    }
    static Activation softmax(double temperature) {
        return checked({ActivationKind::tempered_softmax, temperature, 0.0});
    }

private:
    static Activation checked(Activation a) {
        if (!(a.temperature > 0.0)) throw NumericError("activation temperature must be positive");
        return a;
    }
};

/// Class probabilities from per-class logits: independent tempered sigmoids,
/// or a tempered softmax across classes.
inline Vec activate(CSpan logits, const Activation& act) {
    if (act.kind == ActivationKind::tempered_softmax) return softmax(logits, act.temperature);
    Vec out(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = tempered_sigmoid(logits[k], act.temperature, act.offset);
    }
    return out;
}

struct RiskValue {
    double value = 0.0;
    Vec dlogits;
};

/// Empirical risk of per-class logits against class `target`.
///   sigmoid: one-vs-all BCE averaged over classes (target 1 for `target`,
///            0 elsewhere);
///   softmax: cross-entropy of the tempered softmax.
inline RiskValue empirical_risk(CSpan logits, std::size_t target, const Activation& act) {
    const std::size_t n = logits.size();
    if (target >= n) throw ShapeMismatch("risk target class out of range");
    RiskValue r{0.0, Vec(n)};
    const double t = act.temperature;
    if (act.kind == ActivationKind::tempered_sigmoid) {
        for (std::size_t k = 0; k < n; ++k) {
            const double z = t * logits[k] - act.offset;
            const double y = k == target ? 1.0 : 0.0;
            r.value += k == target ? softplus(-z) : softplus(z);
            r.dlogits[k] = t * (sigmoid(z) - y) / static_cast<double>(n);
        }
        r.value /= static_cast<double>(n);
    } else {
        const Vec p = softmax(logits, t);
        double zmax = logits[0];
        for (double x : logits) zmax = std::max(zmax, x);
        double lse = 0.0;
        for (double x : logits) lse += std::exp(t * (x - zmax));
        r.value = std::log(lse) - t * (logits[target] - zmax);
        for (std::size_t k = 0; k < n; ++k) r.dlogits[k] = t * (p[k] - (k == target ? 1.0 : 0.0));
    }
    return r;
}

/// Per-sample loss value with dL/dS laid out like SimilarityMatrix::values().
struct SampleLoss {
    double value = 0.0;
    Vec dsims;
};

namespace detail {
inline void route_to_argmax(const SimilarityMatrix& s, CSpan dlogits, double scale, Vec& dsims) {
    for (std::size_t k = 0; k < s.classes(); ++k) {
        dsims[k * s.slots() + s.argmax_slot(k)] += scale * dlogits[k];
    }
}
inline void check_class(const SimilarityMatrix& s, std::size_t c) {
    if (c >= s.classes()) throw ShapeMismatch("class label " + std::to_string(c) + " out of range");
}
}  // namespace detail

/// Max-based loss: risk of the per-class max-logits.
inline SampleLoss sample_loss_max(const SimilarityMatrix& s, std::size_t c, const Activation& act) {
    detail::check_class(s, c);
    const RiskValue r = empirical_risk(s.class_maxes(), c, act);
    SampleLoss out{r.value, Vec(s.classes() * s.slots(), 0.0)};
    detail::route_to_argmax(s, r.dlogits, 1.0, out.dsims);
    return out;
}

/// Average-based consistency loss: class c's max-logit is replaced by each of
/// its V slot logits in turn and the risks are averaged.
inline SampleLoss sample_loss_cst(const SimilarityMatrix& s, std::size_t c, const Activation& act) {
    detail::check_class(s, c);
    const std::size_t v = s.slots();
    SampleLoss out{0.0, Vec(s.classes() * v, 0.0)};
    Vec logits = s.class_maxes();
    const double inv_v = 1.0 / static_cast<double>(v);
    for (std::size_t i = 0; i < v; ++i) {
        logits[c] = s(c, i);
        const RiskValue r = empirical_risk(logits, c, act);
        out.value += inv_v * r.value;
        for (std::size_t k = 0; k < s.classes(); ++k) {
            const std::size_t slot = k == c ? i : s.argmax_slot(k);
            out.dsims[k * v + slot] += inv_v * r.dlogits[k];
        }
    }
    return out;
}

/// BCE of every class's tempered-sigmoid max-logit against 0, summed over classes.
inline SampleLoss sample_loss_ood(const SimilarityMatrix& s, const Activation& act) {
    if (act.kind != ActivationKind::tempered_sigmoid) {
        throw NumericError("loss_ood requires a tempered sigmoid activation");
    }
    SampleLoss out{0.0, Vec(s.classes() * s.slots(), 0.0)};
    Vec dlogits(s.classes());
    for (std::size_t k = 0; k < s.classes(); ++k) {
        const double z = act.temperature * s.class_max(k) - act.offset;
        out.value += softplus(z);
        dlogits[k] = act.temperature * sigmoid(z);
    }
    detail::route_to_argmax(s, dlogits, 1.0, out.dsims);
    return out;
}

// ---------------------------------------------------------------------------
// Diversity: assignment vectors and KL balancing

/// Temperature-T softmax over class c's slot similarities.
inline Vec assignment(const SimilarityMatrix& s, std::size_t c, double temperature) {
    detail::check_class(s, c);
    return softmax(s.row(c), temperature);
}

struct DivLoss {
    double value = 0.0;
    std::vector<Vec> dassign;  // one per input assignment
};

/// KL(mean of assignments || prior).
inline DivLoss loss_div(const std::vector<Vec>& assignments, CSpan prior) {
    if (assignments.empty()) throw EmptySubset("loss_div needs at least one assignment");
    const std::size_t v = prior.size();
    Vec mean(v, 0.0);
    for (const auto& a : assignments) {
        if (a.size() != v) throw ShapeMismatch("assignment width does not match prior");
        check_distribution(a, "assignment");
        for (std::size_t k = 0; k < v; ++k) mean[k] += a[k];
    }
    const double inv_m = 1.0 / static_cast<double>(assignments.size());
    for (double& x : mean) x *= inv_m;
    DivLoss out;
    out.value = kl_div(mean, prior);
    const Vec gmean = kl_div_vjp(mean, prior, 1.0).first;
    Vec per(v);
    for (std::size_t k = 0; k < v; ++k) per[k] = gmean[k] * inv_m;
    out.dassign.assign(assignments.size(), per);
    return out;
}

inline Vec uniform_prior(std::size_t v) { return Vec(v, 1.0 / static_cast<double>(v)); }

/// Sum of cosine similarities over ordered pairs i != j of class c's locals.
/// Gradient goes straight to the raw l vectors.
inline double loss_ldiv(const PrototypeBank& bank, std::size_t c, BankGrad* grad) {
    check_index(bank, c, 0);
    double value = 0.0;
    for (std::size_t i = 0; i < bank.slots(); ++i) {
        for (std::size_t j = 0; j < bank.slots(); ++j) {
            if (i == j) continue;
            value += cosine_sim(bank.l(c, i), bank.l(c, j));
            if (grad) {
                auto [gi, gj] = cosine_sim_vjp(bank.l(c, i), bank.l(c, j), 1.0);
                axpy(1.0, gi, grad->l(c, i));
                axpy(1.0, gj, grad->l(c, j));
            }
        }
    }
    return value;
}

// ---------------------------------------------------------------------------
// Pairwise objectives for unlabeled data

struct PairSet {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t size() const { return pairs.size(); }
};

/// For each i, pairs it with argmax_{k != i} cosine_sim(v_i, v_k), lowest
/// index on ties.
inline PairSet make_pairs(const std::vector<Vec>& vectors) {
    const std::size_t m = vectors.size();
    if (m < 2) throw BatchTooSmall("make_pairs needs at least two samples");
    std::vector<Vec> unit;
    unit.reserve(m);
    for (const auto& v : vectors) unit.push_back(normalize(v));
    PairSet out;
    out.pairs.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = i == 0 ? 1 : 0;
        double best_sim = dot(unit[i], unit[best]);
        for (std::size_t k = best + 1; k < m; ++k) {
            if (k == i) continue;
            const double s = dot(unit[i], unit[k]);
            if (s > best_sim) {
                best_sim = s;
                best = k;
            }
        }
        out.pairs.emplace_back(i, best);
    }
    return out;
}

enum class PairVariant { max, cst };

struct PairLoss {
    double value = 0.0;
    Vec dsims_i;
    Vec dsims_j;
};

namespace detail {
/// -log max(<a, b>, eps); zero gradient once floored.
inline double neg_log_inner(CSpan a, CSpan b, Vec& da, Vec& db) {
    const double ip = dot(a, b);
    da.assign(a.size(), 0.0);
    db.assign(b.size(), 0.0);
    if (!(ip > kEpsProb)) return -std::log(kEpsProb);
    for (std::size_t k = 0; k < a.size(); ++k) {
        da[k] = -b[k] / ip;
        db[k] = -a[k] / ip;
    }
    return -std::log(ip);
}
}  // namespace detail

/// -log <σ(logit(x_i)), σ(logit(x_j))> with σ the tempered softmax over
/// per-class max-logits. The cst variant swaps x_i's max-logits for its slot-v
/// logits of every class and averages over v.
inline PairLoss sample_loss_pair(const SimilarityMatrix& si, const SimilarityMatrix& sj,
                                 const Activation& act, PairVariant variant) {
    if (act.kind != ActivationKind::tempered_softmax) {
        throw NumericError("pairwise loss requires a tempered softmax activation");
    }
    const std::size_t n = si.classes();
    const std::size_t v = si.slots();
    const double t = act.temperature;
    PairLoss out{0.0, Vec(n * v, 0.0), Vec(n * v, 0.0)};
    const Vec pj = softmax(sj.class_maxes(), t);
    Vec dpi, dpj;
    Vec dpj_total(n, 0.0);
    if (variant == PairVariant::max) {
        const Vec pi = softmax(si.class_maxes(), t);
        out.value = detail::neg_log_inner(pi, pj, dpi, dpj);
        Vec dzi = softmax_logit_vjp(pi, dpi);
        for (double& x : dzi) x *= t;
        detail::route_to_argmax(si, dzi, 1.0, out.dsims_i);
        dpj_total = dpj;
    } else {
        const double inv_v = 1.0 / static_cast<double>(v);
        for (std::size_t slot = 0; slot < v; ++slot) {
            const Vec pi = softmax(si.slot_column(slot), t);
            out.value += inv_v * detail::neg_log_inner(pi, pj, dpi, dpj);
            const Vec dzi = softmax_logit_vjp(pi, dpi);
            for (std::size_t k = 0; k < n; ++k) out.dsims_i[k * v + slot] += inv_v * t * dzi[k];
            for (std::size_t k = 0; k < n; ++k) dpj_total[k] += inv_v * dpj[k];
        }
    }
    Vec dzj = softmax_logit_vjp(pj, dpj_total);
    for (double& x : dzj) x *= t;
    detail::route_to_argmax(sj, dzj, 1.0, out.dsims_j);
    return out;
}

// ---------------------------------------------------------------------------
// Bank-level single-sample entry points

struct LossValue {
    double value = 0.0;
    BankGrad grad;
};

namespace detail {
inline LossValue to_bank(const ComposedBank& cb, const SimilarityMatrix& s, const SampleLoss& l) {
    Vec dp(cb.classes() * cb.slots() * cb.dim(), 0.0);
    accumulate_similarity_grad(cb, s, l.dsims, dp);
    return {l.value, cb.backprop(dp)};
}
}  // namespace detail

inline LossValue loss_max(const PrototypeBank& bank, CSpan feat, std::size_t c, const Activation& act) {
    const ComposedBank cb(bank);
    const SimilarityMatrix s(cb, feat);
    return detail::to_bank(cb, s, sample_loss_max(s, c, act));
}

inline LossValue loss_cst(const PrototypeBank& bank, CSpan feat, std::size_t c, const Activation& act) {
    const ComposedBank cb(bank);
    const SimilarityMatrix s(cb, feat);
    return detail::to_bank(cb, s, sample_loss_cst(s, c, act));
}

inline LossValue loss_ood(const PrototypeBank& bank, CSpan feat, const Activation& act) {
    const ComposedBank cb(bank);
    const SimilarityMatrix s(cb, feat);
    return detail::to_bank(cb, s, sample_loss_ood(s, act));
}

inline Vec assignment(const PrototypeBank& bank, CSpan feat, std::size_t c, double temperature) {
    return assignment(all_logits(bank, feat), c, temperature);
}

inline LossValue loss_ldiv(const PrototypeBank& bank, std::size_t c) {
    LossValue out{0.0, BankGrad(bank.shape())};
    out.value = loss_ldiv(bank, c, &out.grad);
    return out;
}

/// Mean pairwise loss over `pairs` (indices into `feats`).
inline LossValue loss_pairwise(const PrototypeBank& bank, const std::vector<Vec>& feats,
                               const PairSet& pairs, const Activation& act, PairVariant variant) {
    const ComposedBank cb(bank);
    std::vector<SimilarityMatrix> sims;
    sims.reserve(feats.size());
    for (const auto& f : feats) sims.emplace_back(cb, f);
    Vec dp(cb.classes() * cb.slots() * cb.dim(), 0.0);
    double value = 0.0;
    const double inv_p = pairs.size() ? 1.0 / static_cast<double>(pairs.size()) : 0.0;
    for (const auto& [i, j] : pairs.pairs) {
        PairLoss pl = sample_loss_pair(sims.at(i), sims.at(j), act, variant);
        value += inv_p * pl.value;
        for (double& x : pl.dsims_i) x *= inv_p;
        for (double& x : pl.dsims_j) x *= inv_p;
        accumulate_similarity_grad(cb, sims[i], pl.dsims_i, dp);
        accumulate_similarity_grad(cb, sims[j], pl.dsims_j, dp);
    }
    return {value, cb.backprop(dp)};
}

// ---------------------------------------------------------------------------
// Combined objective

struct LossWeights {
    double div = 0.001;
    double cst = 0.6;
    double ldiv = 0.01;
    /// ORCA's batch-entropy regularizer; only computed when > 0.
    double ent = 0.0;
};

/// Unweighted loss terms of one batch with their parameter gradients.
struct LossParts {
    double l_max = 0.0, l_div = 0.0, l_cst = 0.0, l_ldiv = 0.0, l_ood = 0.0, l_ent = 0.0;
    BankGrad g_max, g_div, g_cst, g_ldiv, g_ood, g_ent;
    bool has_ood = false;
};

struct LossBreakdown {
    double l_max = 0.0, l_div = 0.0, l_cst = 0.0, l_ldiv = 0.0, l_ood = 0.0, l_ent = 0.0;
    double total = 0.0;
    BankGrad grad;
};

/// total = l_max + w.div*l_div + w.cst*l_cst + w.ldiv*l_ldiv (+ l_ood)
///         + w.ent*l_ent;
/// the gradient is the same weighted sum.
inline LossBreakdown combine(const LossParts& parts, const LossWeights& w) {
    LossBreakdown out;
    out.l_max = parts.l_max;
    out.l_div = parts.l_div;
    out.l_cst = parts.l_cst;
    out.l_ldiv = parts.l_ldiv;
    out.l_ood = parts.l_ood;
    out.l_ent = parts.l_ent;
    out.total = parts.l_max + w.div * parts.l_div + w.cst * parts.l_cst + w.ldiv * parts.l_ldiv + w.ent * parts.l_ent;
    if (parts.has_ood) out.total += parts.l_ood;

    out.grad = BankGrad(parts.g_max.shape());
    auto acc = [&](const BankGrad& g, double weight) {
        if (weight == 0.0 || g.flat().empty()) return;
        const auto src = g.flat();
        auto dst = out.grad.flat();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += weight * src[k];
    };
    acc(parts.g_max, 1.0);
    acc(parts.g_div, w.div);
    acc(parts.g_cst, w.cst);
    acc(parts.g_ldiv, w.ldiv);
    if (parts.has_ood) acc(parts.g_ood, 1.0);
    acc(parts.g_ent, w.ent);
    return out;
}

/// One mixed batch with per-sample roles already decided by the caller.
struct LossBatch {
    std::vector<CSpan> feats;
    /// Class for L_max/L_cst, or -1 when the sample does not take part.
    std::vector<std::int64_t> fit_label;
    /// Class whose assignment vector feeds L_div, or -1.
    std::vector<std::int64_t> div_label;
    /// Nonzero: sample is treated as OOD and contributes loss_ood.
    std::vector<char> ood;
    /// Unlabeled pairs (indices into feats) for the pairwise objectives.
    PairSet pairs;

    std::size_t size() const { return feats.size(); }

    void add(CSpan feat, std::int64_t fit, std::int64_t div, bool is_ood) {
        feats.push_back(feat);
        fit_label.push_back(fit);
        div_label.push_back(div);
        ood.push_back(is_ood ? 1 : 0);
    }
};

struct LossSettings {
    Activation fit_activation = Activation::sigmoid(10.0, 5.0);
    /// Temperature of the assignment softmax over a class's slots.
    double assign_temperature = 10.0;
    /// Softmax temperature used by the pairwise objectives.
    double pair_temperature = 10.0;
    bool compute_ldiv = true;
    /// KL(batch-mean tempered softmax over all classes || uniform), taken
    /// over every sample in the batch (ORCA's entropy regularizer).
    bool compute_entropy = false;
};

/// Per-term means over a batch:
///   l_max, l_cst: mean over fit-labeled samples, plus the mean pairwise
///                 max / cst terms when pairs are present;
///   l_div:        mean over classes with at least one div sample of
///                 KL(batch-mean assignment || uniform);
///   l_ldiv:       mean over classes of the local-divergence penalty;
///   l_ood:        mean over OOD-flagged samples;
///   l_ent:        entropy regularizer, when enabled.
inline LossParts compute_loss_parts(const PrototypeBank& bank, const LossBatch& batch,
                                    const LossSettings& settings) {
    const ComposedBank cb(bank);
    const std::size_t n = cb.classes();
    const std::size_t v = cb.slots();
    const std::size_t psize = n * v * cb.dim();

    std::vector<SimilarityMatrix> sims;
    sims.reserve(batch.size());
    for (const auto& f : batch.feats) sims.emplace_back(cb, f);

    Vec dp_max(psize, 0.0), dp_cst(psize, 0.0), dp_div(psize, 0.0), dp_ood(psize, 0.0);
    LossParts parts;

    std::size_t n_fit = 0, n_ood = 0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        if (batch.fit_label[k] >= 0) ++n_fit;
        if (batch.ood[k]) ++n_ood;
    }

    if (n_fit > 0) {
        const double inv = 1.0 / static_cast<double>(n_fit);
        for (std::size_t k = 0; k < batch.size(); ++k) {
            if (batch.fit_label[k] < 0) continue;
            const auto c = static_cast<std::size_t>(batch.fit_label[k]);
            SampleLoss lm = sample_loss_max(sims[k], c, settings.fit_activation);
            parts.l_max += inv * lm.value;
            for (double& x : lm.dsims) x *= inv;
            accumulate_similarity_grad(cb, sims[k], lm.dsims, dp_max);
            SampleLoss lc = sample_loss_cst(sims[k], c, settings.fit_activation);
            parts.l_cst += inv * lc.value;
            for (double& x : lc.dsims) x *= inv;
            accumulate_similarity_grad(cb, sims[k], lc.dsims, dp_cst);
        }
    }

    if (n_ood > 0) {
        parts.has_ood = true;
        const double inv = 1.0 / static_cast<double>(n_ood);
        for (std::size_t k = 0; k < batch.size(); ++k) {
            if (!batch.ood[k]) continue;
            SampleLoss lo = sample_loss_ood(sims[k], settings.fit_activation);
            parts.l_ood += inv * lo.value;
            for (double& x : lo.dsims) x *= inv;
            accumulate_similarity_grad(cb, sims[k], lo.dsims, dp_ood);
        }
    }

    if (!batch.pairs.pairs.empty()) {
        const Activation pact = Activation::softmax(settings.pair_temperature);
        const double inv = 1.0 / static_cast<double>(batch.pairs.size());
        for (const auto& [i, j] : batch.pairs.pairs) {
            if (i >= batch.size() || j >= batch.size()) throw ShapeMismatch("pair index out of range");
            for (PairVariant variant : {PairVariant::max, PairVariant::cst}) {
                PairLoss pl = sample_loss_pair(sims[i], sims[j], pact, variant);
                Vec& dp = variant == PairVariant::max ? dp_max : dp_cst;
                (variant == PairVariant::max ? parts.l_max : parts.l_cst) += inv * pl.value;
                for (double& x : pl.dsims_i) x *= inv;
                for (double& x : pl.dsims_j) x *= inv;
                accumulate_similarity_grad(cb, sims[i], pl.dsims_i, dp);
                accumulate_similarity_grad(cb, sims[j], pl.dsims_j, dp);
            }
        }
    }

    if (v > 1) {
        std::vector<std::vector<std::size_t>> members(n);
        for (std::size_t k = 0; k < batch.size(); ++k) {
            if (batch.div_label[k] < 0) continue;
            const auto c = static_cast<std::size_t>(batch.div_label[k]);
            if (c >= n) throw ShapeMismatch("div label out of range");
            members[c].push_back(k);
        }
        std::size_t active = 0;
        for (const auto& m : members) active += m.empty() ? 0 : 1;
        if (active > 0) {
            const Vec prior = uniform_prior(v);
            const double inv_c = 1.0 / static_cast<double>(active);
            const double t = settings.assign_temperature;
            for (std::size_t c = 0; c < n; ++c) {
                if (members[c].empty()) continue;
                std::vector<Vec> assigns;
                assigns.reserve(members[c].size());
                for (std::size_t k : members[c]) assigns.push_back(assignment(sims[k], c, t));
                const DivLoss dl = loss_div(assigns, prior);
                parts.l_div += inv_c * dl.value;
                for (std::size_t m = 0; m < members[c].size(); ++m) {
                    const std::size_t k = members[c][m];
                    const Vec w = softmax_logit_vjp(assigns[m], dl.dassign[m]);
                    Vec dsims(n * v, 0.0);
                    for (std::size_t i = 0; i < v; ++i) dsims[c * v + i] = inv_c * t * w[i];
                    accumulate_similarity_grad(cb, sims[k], dsims, dp_div);
                }
            }
        }
    }

    Vec dp_ent(settings.compute_entropy ? psize : 0, 0.0);
    if (settings.compute_entropy && batch.size() > 0) {
        const double t = settings.pair_temperature;
        std::vector<Vec> probs;
        probs.reserve(batch.size());
        for (const auto& s : sims) probs.push_back(softmax(s.class_maxes(), t));
        const DivLoss dl = loss_div(probs, uniform_prior(n));
        parts.l_ent = dl.value;
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const Vec dz = softmax_logit_vjp(probs[k], dl.dassign[k]);
            Vec dsims(n * v, 0.0);
            detail::route_to_argmax(sims[k], dz, t, dsims);
            accumulate_similarity_grad(cb, sims[k], dsims, dp_ent);
        }
    }

    parts.g_max = cb.backprop(dp_max);
    parts.g_ent = settings.compute_entropy ? cb.backprop(dp_ent) : BankGrad(bank.shape());
    parts.g_cst = cb.backprop(dp_cst);
    parts.g_div = cb.backprop(dp_div);
    parts.g_ood = cb.backprop(dp_ood);
    parts.g_ldiv = BankGrad(bank.shape());
    if (settings.compute_ldiv && v > 1) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c) parts.l_ldiv += inv_n * loss_ldiv(bank, c, &parts.g_ldiv);
        parts.g_ldiv *= inv_n;
    }
    return parts;
}

inline LossBreakdown compute_batch_loss(const PrototypeBank& bank, const LossBatch& batch,
                                        const LossSettings& settings, const LossWeights& weights) {
    return combine(compute_loss_parts(bank, batch, settings), weights);
}

}  // namespace pf
