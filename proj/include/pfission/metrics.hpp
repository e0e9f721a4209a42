#pragma once

// Evaluation metrics: Hungarian-matched clustering accuracy, seen/novel/all
// accuracy, rank-based ID-OOD AUC and prototype usage diagnostics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "pfission/errors.hpp"

namespace pf {

/// Dense row-major square matrix.
class CostMatrix {
public:
    CostMatrix() = default;
    CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static CostMatrix from_rows(const std::vector<std::vector<double>>& rows) {
        CostMatrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != m.cols_) throw NonSquare("ragged cost matrix");
            std::copy(rows[r].begin(), rows[r].end(), m.data_.begin() + static_cast<std::ptrdiff_t>(r * m.cols_));
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool square() const { return rows_ == cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    /// Zero-pads to max(rows, cols) square.
    CostMatrix padded() const {
        const std::size_t n = std::max(rows_, cols_);
        CostMatrix out(n, n);
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t c = 0; c < cols_; ++c) out(r, c) = (*this)(r, c);
        }
        return out;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct Assignment {
    std::vector<std::size_t> row_to_col;
    double objective = 0.0;
};

/// Kuhn-Munkres with row/column potentials, O(n^3). Minimizes the total cost
/// unless `maximize` is set.
inline Assignment hungarian(const CostMatrix& cost, bool maximize = false) {
    if (!cost.square()) throw NonSquare("hungarian: matrix is " + std::to_string(cost.rows()) + "x" +
                                        std::to_string(cost.cols()));
    const std::size_t n = cost.rows();
    Assignment out;
    if (n == 0) return out;
    const double sign = maximize ? -1.0 : 1.0;
    const double inf = std::numeric_limits<double>::infinity();

    // 1-based potentials; p[j] is the row matched to column j.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = sign * cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    out.row_to_col.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) out.row_to_col[p[j] - 1] = j - 1;
    for (std::size_t r = 0; r < n; ++r) out.objective += cost(r, out.row_to_col[r]);
    return out;
}

/// Fraction of samples correctly labeled after the best one-to-one matching
/// of predicted cluster ids to true labels.
inline double cluster_accuracy(const std::vector<std::int64_t>& preds, const std::vector<std::int64_t>& labels) {
    if (preds.size() != labels.size()) throw ShapeMismatch("preds/labels length mismatch");
    if (preds.empty()) throw EmptySubset("cluster_accuracy on empty subset");
    std::map<std::int64_t, std::size_t> prow, lcol;
    for (auto p : preds) prow.emplace(p, prow.size());
    for (auto l : labels) lcol.emplace(l, lcol.size());
    CostMatrix counts(prow.size(), lcol.size());
    for (std::size_t k = 0; k < preds.size(); ++k) counts(prow[preds[k]], lcol[labels[k]]) += 1.0;
    const Assignment a = hungarian(counts.padded(), true);
    return a.objective / static_cast<double>(preds.size());
}

namespace detail {
template <class Pred>
void subset(const std::vector<std::int64_t>& preds, const std::vector<std::int64_t>& labels, Pred keep,
            std::vector<std::int64_t>& sp, std::vector<std::int64_t>& sl) {
    if (preds.size() != labels.size()) throw ShapeMismatch("preds/labels length mismatch");
    for (std::size_t k = 0; k < preds.size(); ++k) {
        if (keep(labels[k])) {
            sp.push_back(preds[k]);
            sl.push_back(labels[k]);
        }
    }
}
}  // namespace detail

/// Plain accuracy over samples whose true label is in `seen`.
inline double seen_acc(const std::vector<std::int64_t>& preds, const std::vector<std::int64_t>& labels,
                       const std::set<std::int64_t>& seen) {
    std::vector<std::int64_t> sp, sl;
    detail::subset(preds, labels, [&](std::int64_t l) { return seen.count(l) > 0; }, sp, sl);
    if (sp.empty()) throw EmptySubset("seen_acc: no samples from seen classes");
    std::size_t hit = 0;
    for (std::size_t k = 0; k < sp.size(); ++k) hit += sp[k] == sl[k] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(sp.size());
}

/// Hungarian-matched accuracy over samples whose true label is in `novel`.
inline double novel_acc(const std::vector<std::int64_t>& preds, const std::vector<std::int64_t>& labels,
                        const std::set<std::int64_t>& novel) {
    std::vector<std::int64_t> sp, sl;
    detail::subset(preds, labels, [&](std::int64_t l) { return novel.count(l) > 0; }, sp, sl);
    if (sp.empty()) throw EmptySubset("novel_acc: no samples from novel classes");
    return cluster_accuracy(sp, sl);
}

/// Hungarian-matched accuracy over every sample, averaged over images.
inline double all_acc(const std::vector<std::int64_t>& preds, const std::vector<std::int64_t>& labels) {
    return cluster_accuracy(preds, labels);
}

/// Mann-Whitney AUC: P(score_id > score_ood) with ties counted 1/2.
inline double id_ood_auc(const std::vector<double>& scores, const std::vector<char>& is_ood) {
    if (scores.size() != is_ood.size()) throw ShapeMismatch("scores/flags length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::size_t n_ood = 0;
    for (char f : is_ood) n_ood += f ? 1 : 0;
    const std::size_t n_id = n - n_ood;
    if (n_id == 0 || n_ood == 0) throw SingleClass("id_ood_auc needs both ID and OOD samples");

    // Sum of (1-based, tie-averaged) ranks of the ID samples.
    double rank_sum = 0.0;
    for (std::size_t lo = 0; lo < n;) {
        std::size_t hi = lo;
        while (hi + 1 < n && scores[order[hi + 1]] == scores[order[lo]]) ++hi;
        const double avg_rank = 0.5 * static_cast<double>(lo + hi) + 1.0;
        for (std::size_t k = lo; k <= hi; ++k) {
            if (!is_ood[order[k]]) rank_sum += avg_rank;
        }
        lo = hi + 1;
    }
    const double u = rank_sum - static_cast<double>(n_id) * static_cast<double>(n_id + 1) / 2.0;
    return u / (static_cast<double>(n_id) * static_cast<double>(n_ood));
}

// ---------------------------------------------------------------------------
// Prototype usage

struct ProtoUsage {
    /// usage[c][i]: share of class-c samples whose best slot is i.
    std::vector<std::vector<double>> usage;
    /// Per-class Shannon entropy (nats) of usage[c]; empty classes hold NaN.
    std::vector<double> entropy;
    std::vector<std::size_t> counts;

    double mean_entropy() const {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < entropy.size(); ++c) {
            if (counts[c] == 0) continue;
            s += entropy[c];
            ++n;
        }
        return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    }

    /// Mean over populated classes of the largest slot share.
    double mean_max_share() const {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < usage.size(); ++c) {
            if (counts[c] == 0) continue;
            s += *std::max_element(usage[c].begin(), usage[c].end());
            ++n;
        }
        return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    }
};

/// Histogram of best slots per class from (class, slot) pairs.
inline ProtoUsage proto_usage(const std::vector<std::size_t>& classes, const std::vector<std::size_t>& slots,
                              std::size_t num_classes, std::size_t num_slots) {
    if (classes.size() != slots.size()) throw ShapeMismatch("classes/slots length mismatch");
    if (classes.empty()) throw EmptySubset("proto_usage: no samples");
    ProtoUsage out;
    out.usage.assign(num_classes, std::vector<double>(num_slots, 0.0));
    out.entropy.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
    out.counts.assign(num_classes, 0);
    for (std::size_t k = 0; k < classes.size(); ++k) {
        if (classes[k] >= num_classes || slots[k] >= num_slots) throw ShapeMismatch("usage index out of range");
        out.usage[classes[k]][slots[k]] += 1.0;
        ++out.counts[classes[k]];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (out.counts[c] == 0) continue;
        double h = 0.0;
        for (double& u : out.usage[c]) {
            u /= static_cast<double>(out.counts[c]);
            if (u > 0.0) h -= u * std::log(u);
        }
        out.entropy[c] = h;
    }
    return out;
}

/// Sub-cluster purity of slot assignments: within each (class, slot) group
/// the share of samples from the group's majority true sub-cluster, weighted
/// by group size. 1.0 iff no slot mixes sub-clusters.
inline double subcluster_purity(const std::vector<std::size_t>& classes, const std::vector<std::size_t>& slots,
                                const std::vector<std::int32_t>& subclusters) {
    if (classes.size() != slots.size() || classes.size() != subclusters.size()) {
        throw ShapeMismatch("purity inputs length mismatch");
    }
    if (classes.empty()) throw EmptySubset("subcluster_purity: no samples");
    std::map<std::pair<std::size_t, std::size_t>, std::map<std::int32_t, std::size_t>> groups;
    for (std::size_t k = 0; k < classes.size(); ++k) ++groups[{classes[k], slots[k]}][subclusters[k]];
    std::size_t majority = 0;
    for (const auto& [key, hist] : groups) {
        std::size_t best = 0;
        for (const auto& [sc, n] : hist) best = std::max(best, n);
        majority += best;
    }
    return static_cast<double>(majority) / static_cast<double>(classes.size());
}

/// The converse view: within each true sub-cluster, the share of samples on
/// the sub-cluster's majority slot, averaged over sub-clusters. Collapsed
/// banks score 1.0 here, so it is reported alongside purity, not instead of it.
inline double subcluster_completeness(const std::vector<std::size_t>& classes,
                                      const std::vector<std::size_t>& slots,
                                      const std::vector<std::int32_t>& subclusters) {
    if (classes.size() != slots.size() || classes.size() != subclusters.size()) {
        throw ShapeMismatch("completeness inputs length mismatch");
    }
    if (classes.empty()) throw EmptySubset("subcluster_completeness: no samples");
    std::map<std::pair<std::size_t, std::int32_t>, std::map<std::size_t, std::size_t>> groups;
    for (std::size_t k = 0; k < classes.size(); ++k) ++groups[{classes[k], subclusters[k]}][slots[k]];
    double sum = 0.0;
    for (const auto& [key, hist] : groups) {
        std::size_t best = 0, total = 0;
        for (const auto& [slot, n] : hist) {
            best = std::max(best, n);
            total += n;
        }
        sum += static_cast<double>(best) / static_cast<double>(total);
    }
    return sum / static_cast<double>(groups.size());
}

// ---------------------------------------------------------------------------

struct MetricsReport {
    double seen_acc = 0.0;
    std::optional<double> novel_acc;  // not applicable without novel slots
    double all_acc = 0.0;
    std::optional<double> id_ood_auc;  // needs ID and OOD test samples
    std::vector<std::vector<double>> proto_usage;
    double proto_usage_entropy = 0.0;
    double proto_max_share = 0.0;
    std::optional<double> subcluster_purity;
    std::optional<double> subcluster_completeness;
};

}  // namespace pf
