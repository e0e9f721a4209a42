#pragma once

// Finite-difference checks of every loss term on random micro-configurations.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pfission/diffmath.hpp"
#include "pfission/errors.hpp"
#include "pfission/losses.hpp"
#include "pfission/prototypes.hpp"

namespace pf {

struct GradCheckOptions {
    std::size_t trials = 50;
    std::uint64_t seed = 0;
    double tol = 1e-4;
    double step = 1e-5;
    /// Samples per micro-batch.
    std::size_t batch = 8;
    /// Resample a configuration when any class's top-2 slot gap is below this.
    double min_tie_gap = 1e-4;
    /// Negative control: perturb one analytic component before comparing.
    bool corrupt = false;
};

struct GradCheckCase {
    std::size_t trial = 0;
    std::string loss;
    BankShape shape;
    GradCheckReport report;
};

struct GradCheckSummary {
    std::vector<GradCheckCase> cases;
    double max_rel_err = 0.0;
    std::size_t worst = 0;  // index into cases

    bool passed(double tol) const { return max_rel_err < tol; }
};

/// "g[c][k]", "l[c][i][k]" or "delta[c][i]" for a flat parameter index.
inline std::string param_path(const BankShape& s, std::size_t index) {
    std::ostringstream os;
    const std::size_t l_begin = s.l_offset(0, 0);
    const std::size_t d_begin = s.delta_offset(0, 0);
    if (index < l_begin) {
        os << "g[" << index / s.dim << "][" << index % s.dim << "]";
    } else if (index < d_begin) {
        const std::size_t r = index - l_begin;
        os << "l[" << r / (s.slots * s.dim) << "][" << (r / s.dim) % s.slots << "][" << r % s.dim << "]";
    } else {
        const std::size_t r = index - d_begin;
        os << "delta[" << r / s.slots << "][" << r % s.slots << "]";
    }
    return os.str();
}

namespace detail {

struct MicroConfig {
    PrototypeBank bank;
    std::vector<Vec> feats;
    LossBatch sigmoid_batch;
    LossBatch softmax_batch;
    LossSettings sigmoid_settings;
    LossSettings softmax_settings;
};

inline Vec random_vec(std::mt19937_64& rng, std::size_t d, double scale) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec v(d);
    for (double& x : v) x = scale * gauss(rng);
    return v;
}

/// Random bank with non-unit g/l norms and nonzero delta so every VJP path is
/// exercised; features on the unit sphere.
inline MicroConfig draw_micro_config(std::mt19937_64& rng, std::size_t n, std::size_t v, std::size_t d,
                                     std::size_t m, double min_gap) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    MicroConfig mc;
    for (;;) {
        mc.bank = PrototypeBank(BankShape{n, v, d});
        for (std::size_t c = 0; c < n; ++c) {
            const Vec g = random_vec(rng, d, 0.5 + 1.5 * unif(rng));
            std::copy(g.begin(), g.end(), mc.bank.g(c).begin());
            for (std::size_t i = 0; i < v; ++i) {
                const Vec l = random_vec(rng, d, 0.5 + 1.5 * unif(rng));
                std::copy(l.begin(), l.end(), mc.bank.l(c, i).begin());
                mc.bank.delta(c, i) = 2.0 * unif(rng) - 1.0;
            }
        }
        mc.feats.clear();
        for (std::size_t k = 0; k < m; ++k) mc.feats.push_back(normalize(random_vec(rng, d, 1.0)));
        const ComposedBank cb(mc.bank);
        double gap = 1.0;
        for (const auto& f : mc.feats) gap = std::min(gap, SimilarityMatrix(cb, f).min_tie_gap());
        if (v == 1 || gap >= min_gap) break;
    }

    const double t = 2.0 + 8.0 * unif(rng);
    const double b = 1.0 + 4.0 * unif(rng);
    mc.sigmoid_settings.fit_activation = Activation::sigmoid(t, b);
    mc.sigmoid_settings.assign_temperature = t;
    mc.softmax_settings.fit_activation = Activation::softmax(t);
    mc.softmax_settings.assign_temperature = t;
    mc.softmax_settings.pair_temperature = t;
    mc.softmax_settings.compute_entropy = true;

    std::uniform_int_distribution<std::int64_t> cls(0, static_cast<std::int64_t>(n) - 1);
    // sigmoid batch: labeled, OOD-flagged, and div-only samples
    for (std::size_t k = 0; k < m; ++k) {
        const std::int64_t c = cls(rng);
        if (k % 4 == 3) mc.sigmoid_batch.add(mc.feats[k], -1, -1, true);
        else if (k % 4 == 2) mc.sigmoid_batch.add(mc.feats[k], -1, c, false);
        else mc.sigmoid_batch.add(mc.feats[k], c, c, false);
    }
    // softmax batch: first half labeled, second half unlabeled with pairs
    const std::size_t half = m / 2;
    std::vector<Vec> probs;
    const ComposedBank cb(mc.bank);
    for (std::size_t k = 0; k < m; ++k) {
        if (k < half) {
            const std::int64_t c = cls(rng);
            mc.softmax_batch.add(mc.feats[k], c, c, false);
        } else {
            mc.softmax_batch.add(mc.feats[k], -1, k % 2 ? cls(rng) : -1, false);
            probs.push_back(softmax(SimilarityMatrix(cb, mc.feats[k]).class_maxes(), t));
        }
    }
    for (const auto& [i, j] : make_pairs(probs).pairs) mc.softmax_batch.pairs.pairs.emplace_back(half + i, half + j);
    return mc;
}

using PartGetter = std::function<double(const LossParts&)>;
using GradGetter = std::function<const BankGrad&(const LossParts&)>;

}  // namespace detail

inline GradCheckSummary run_gradcheck(const GradCheckOptions& opt) {
    GradCheckSummary summary;
    std::mt19937_64 rng(opt.seed);
    const std::size_t ns[] = {2, 3};
    const std::size_t vs[] = {1, 2, 3};
    const std::size_t ds[] = {4, 8};
    std::uniform_int_distribution<std::size_t> pick2(0, 1), pick3(0, 2);

    struct Term {
        const char* name;
        detail::PartGetter value;
        detail::GradGetter grad;
    };
    const Term terms[] = {
        {"l_max", [](const LossParts& p) { return p.l_max; }, [](const LossParts& p) -> const BankGrad& { return p.g_max; }},
        {"l_cst", [](const LossParts& p) { return p.l_cst; }, [](const LossParts& p) -> const BankGrad& { return p.g_cst; }},
        {"l_div", [](const LossParts& p) { return p.l_div; }, [](const LossParts& p) -> const BankGrad& { return p.g_div; }},
        {"l_ldiv", [](const LossParts& p) { return p.l_ldiv; }, [](const LossParts& p) -> const BankGrad& { return p.g_ldiv; }},
        {"l_ood", [](const LossParts& p) { return p.l_ood; }, [](const LossParts& p) -> const BankGrad& { return p.g_ood; }},
        {"l_ent", [](const LossParts& p) { return p.l_ent; }, [](const LossParts& p) -> const BankGrad& { return p.g_ent; }},
    };

    for (std::size_t trial = 0; trial < opt.trials; ++trial) {
        const std::size_t n = ns[pick2(rng)];
        const std::size_t v = vs[pick3(rng)];
        const std::size_t d = ds[pick2(rng)];
        const detail::MicroConfig mc = detail::draw_micro_config(rng, n, v, d, opt.batch, opt.min_tie_gap);
        const BankShape shape = mc.bank.shape();
        const Vec params = flatten_params(mc.bank);
        const auto groups = param_groups(shape);
        const LossWeights weights{0.3, 0.6, 0.2, 0.5};

        for (int mode = 0; mode < 2; ++mode) {
            const LossBatch& batch = mode == 0 ? mc.sigmoid_batch : mc.softmax_batch;
            const LossSettings& settings = mode == 0 ? mc.sigmoid_settings : mc.softmax_settings;
            const std::string suffix = mode == 0 ? " (sigmoid)" : " (softmax, pairwise)";
            const LossParts parts = compute_loss_parts(mc.bank, batch, settings);

            auto check = [&](const std::string& name, const std::function<double(CSpan)>& f, Vec analytic) {
                if (opt.corrupt && !analytic.empty()) analytic[trial % analytic.size()] += 1e-2 + 1e-2 * std::abs(analytic[trial % analytic.size()]);
                GradCheckCase gc{trial, name + suffix, shape, finite_diff_check(f, params, analytic, opt.step, groups)};
                if (gc.report.max_rel_err > summary.max_rel_err || summary.cases.empty()) {
                    summary.max_rel_err = std::max(summary.max_rel_err, gc.report.max_rel_err);
                    summary.worst = summary.cases.size();
                }
                summary.cases.push_back(std::move(gc));
            };

            for (const Term& term : terms) {
                if (mode == 0 && std::string(term.name) == "l_ent") continue;
                if (mode == 1 && std::string(term.name) == "l_ood") continue;
                const BankGrad& g = term.grad(parts);
                Vec analytic(g.flat().begin(), g.flat().end());
                if (analytic.empty()) analytic.assign(params.size(), 0.0);
                auto f = [&](CSpan p) {
                    return term.value(compute_loss_parts(unflatten_params(shape, Vec(p.begin(), p.end())), batch, settings));
                };
                check(term.name, f, std::move(analytic));
            }
            const LossBreakdown combined = combine(parts, weights);
            auto ftotal = [&](CSpan p) {
                return combine(compute_loss_parts(unflatten_params(shape, Vec(p.begin(), p.end())), batch, settings), weights)
                    .total;
            };
            check("total", ftotal, Vec(combined.grad.flat().begin(), combined.grad.flat().end()));
        }
    }
    return summary;
}

inline std::string describe(const GradCheckCase& c) {
    std::ostringstream os;
    os << c.loss << " trial " << c.trial << " [N=" << c.shape.classes << " V=" << c.shape.slots << " d=" << c.shape.dim
       << "] param " << param_path(c.shape, c.report.worst_index) << ": relative error " << c.report.max_rel_err
       << " (analytic " << c.report.worst_analytic << ", numeric " << c.report.worst_numeric << ")";
    return os.str();
}

/// Throws GradMismatch naming the worst case when the summary fails.
inline void require_gradients(const GradCheckSummary& s, double tol) {
    if (s.cases.empty() || s.passed(tol)) return;
    throw GradMismatch(describe(s.cases[s.worst]));
}

}  // namespace pf
