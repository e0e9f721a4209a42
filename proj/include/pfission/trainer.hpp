#pragma once

// Self-training loop over fixed embeddings: SGD with momentum and step decay,
// confidence-threshold pseudo-labeling, OOD pseudo-assignment (fixmatch-sigmoid)
// or nearest-pair objectives (orca-pairwise), evaluation and checkpoints.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfission/binary_io.hpp"
#include "pfission/config.hpp"
#include "pfission/data.hpp"
#include "pfission/errors.hpp"
#include "pfission/losses.hpp"
#include "pfission/metrics.hpp"
#include "pfission/prototypes.hpp"

namespace pf {

enum class TrainMode { fixmatch_sigmoid, orca_pairwise };
enum class PairSpace { probability, feature };

struct Ablations {
    bool disable_multi_proto = false;  // V = 1
    bool disable_cst = false;          // lambda_cst = 0
    bool disable_div = false;          // lambda_div = 0

    friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct TrainConfig {
    TrainMode mode = TrainMode::fixmatch_sigmoid;
    std::size_t V = 5;
    double T = 10.0;
    double b = 5.0;
    double thr = 0.95;
    double lambda_div = 0.001;
    double lambda_cst = 0.6;
    double lambda_ldiv = 0.01;
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t epochs = 200;
    std::vector<std::size_t> decay_epochs{140, 180};
    double decay_factor = 10.0;
    std::size_t batch_sup = 64;
    std::size_t batch_unsup = 448;
    std::uint64_t seed = 0;
    Ablations ablations;
    PairSpace pair_space = PairSpace::probability;
    /// fixmatch-sigmoid: OOD-flagged samples also feed L_div of their argmax
    /// class. Off by default (they have no class).
    bool ood_in_div = false;
    /// orca-pairwise only: weight of ORCA's batch-entropy regularizer, which
    /// keeps the novel slots in use.
    double lambda_ent = 1.0;

    void validate() const {
        if (V == 0) throw ConfigError("must be >= 1", "V");
        if (!(T > 0.0)) throw ConfigError("must be > 0", "T");
        if (!(thr > 0.0 && thr < 1.0)) throw ConfigError("must be in (0, 1)", "thr");
        if (!(lambda_div >= 0.0)) throw ConfigError("must be >= 0", "lambda_div");
        if (!(lambda_cst >= 0.0)) throw ConfigError("must be >= 0", "lambda_cst");
        if (!(lambda_ldiv >= 0.0)) throw ConfigError("must be >= 0", "lambda_ldiv");
        if (!(lambda_ent >= 0.0)) throw ConfigError("must be >= 0", "lambda_ent");
        if (!(lr0 > 0.0)) throw ConfigError("must be > 0", "lr0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("must be in [0, 1)", "momentum");
        if (!(weight_decay >= 0.0)) throw ConfigError("must be >= 0", "weight_decay");
        if (!(decay_factor >= 1.0)) throw ConfigError("must be >= 1", "decay_factor");
        if (batch_sup == 0) throw ConfigError("must be >= 1", "batch_sup");
        if (batch_unsup == 0) throw ConfigError("must be >= 1", "batch_unsup");
    }

    std::size_t slots() const { return ablations.disable_multi_proto ? 1 : V; }

    LossWeights weights() const {
        return {ablations.disable_div ? 0.0 : lambda_div, ablations.disable_cst ? 0.0 : lambda_cst, lambda_ldiv,
                mode == TrainMode::orca_pairwise ? lambda_ent : 0.0};
    }

    Activation activation() const {
        return mode == TrainMode::fixmatch_sigmoid ? Activation::sigmoid(T, b) : Activation::softmax(T);
    }

    LossSettings loss_settings() const {
        LossSettings s;
        s.fit_activation = activation();
        s.assign_temperature = T;
        s.pair_temperature = T;
        s.compute_entropy = mode == TrainMode::orca_pairwise && lambda_ent > 0.0;
        return s;
    }

    /// Number of classifier classes: seen classes only in fixmatch-sigmoid,
    /// seen plus novel slots in orca-pairwise.
    std::size_t model_classes(const EmbeddingDataset& ds) const {
        return mode == TrainMode::fixmatch_sigmoid ? ds.id_classes.size() : ds.num_classes;
    }
};

// ---------------------------------------------------------------------------
// Config JSON

inline std::string to_string(TrainMode m) {
    return m == TrainMode::fixmatch_sigmoid ? "fixmatch_sigmoid" : "orca_pairwise";
}

inline TrainMode parse_train_mode(const std::string& s) {
    if (s == "fixmatch_sigmoid" || s == "fixmatch-sigmoid") return TrainMode::fixmatch_sigmoid;
    if (s == "orca_pairwise" || s == "orca-pairwise") return TrainMode::orca_pairwise;
    throw ConfigError("unknown mode '" + s + "'", "mode");
}

inline std::string to_string(PairSpace p) { return p == PairSpace::probability ? "probability" : "feature"; }

inline nlohmann::json to_json(const TrainConfig& c) {
    return {
        {"mode", to_string(c.mode)},
        {"V", c.V},
        {"T", c.T},
        {"b", c.b},
        {"thr", c.thr},
        {"lambda_div", c.lambda_div},
        {"lambda_cst", c.lambda_cst},
        {"lambda_ldiv", c.lambda_ldiv},
        {"lr0", c.lr0},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"epochs", c.epochs},
        {"decay_epochs", c.decay_epochs},
        {"decay_factor", c.decay_factor},
        {"batch_sup", c.batch_sup},
        {"batch_unsup", c.batch_unsup},
        {"seed", c.seed},
        {"ablations",
         {{"disable_multi_proto", c.ablations.disable_multi_proto},
          {"disable_cst", c.ablations.disable_cst},
          {"disable_div", c.ablations.disable_div}}},
        {"pair_space", to_string(c.pair_space)},
        {"div_kl", "batch_mean"},
        {"ood_in_div", c.ood_in_div},
        {"lambda_ent", c.lambda_ent},
    };
}


/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    using detail::get_field;
    static const std::set<std::string> known{
        "mode", "V", "T", "b", "thr", "lambda_div", "lambda_cst", "lambda_ldiv", "lr0", "momentum",
        "weight_decay", "epochs", "decay_epochs", "decay_factor", "batch_sup", "batch_unsup", "seed",
        "ablations", "pair_space", "div_kl", "ood_in_div", "lambda_ent"};
    detail::reject_unknown(j, known, "");
    if (j.contains("mode")) c.mode = parse_train_mode(get_field<std::string>(j, "mode"));
    if (j.contains("V")) c.V = get_field<std::size_t>(j, "V");
    if (j.contains("T")) c.T = get_field<double>(j, "T");
    if (j.contains("b")) c.b = get_field<double>(j, "b");
    if (j.contains("thr")) c.thr = get_field<double>(j, "thr");
    if (j.contains("lambda_div")) c.lambda_div = get_field<double>(j, "lambda_div");
    if (j.contains("lambda_cst")) c.lambda_cst = get_field<double>(j, "lambda_cst");
    if (j.contains("lambda_ldiv")) c.lambda_ldiv = get_field<double>(j, "lambda_ldiv");
    if (j.contains("lr0")) c.lr0 = get_field<double>(j, "lr0");
    if (j.contains("momentum")) c.momentum = get_field<double>(j, "momentum");
    if (j.contains("weight_decay")) c.weight_decay = get_field<double>(j, "weight_decay");
    if (j.contains("epochs")) c.epochs = get_field<std::size_t>(j, "epochs");
    if (j.contains("decay_epochs")) c.decay_epochs = get_field<std::vector<std::size_t>>(j, "decay_epochs");
    if (j.contains("decay_factor")) c.decay_factor = get_field<double>(j, "decay_factor");
    if (j.contains("batch_sup")) c.batch_sup = get_field<std::size_t>(j, "batch_sup");
    if (j.contains("batch_unsup")) c.batch_unsup = get_field<std::size_t>(j, "batch_unsup");
    if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed");
    if (j.contains("ablations")) {
        const auto& a = j.at("ablations");
        detail::reject_unknown(a, {"disable_multi_proto", "disable_cst", "disable_div"}, "ablations.");
        auto flag = [&](const char* key, bool& out) {
            if (!a.contains(key)) return;
            try {
                out = a.at(key).get<bool>();
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string("bad value: ") + e.what(), std::string("ablations.") + key);
            }
        };
        flag("disable_multi_proto", c.ablations.disable_multi_proto);
        flag("disable_cst", c.ablations.disable_cst);
        flag("disable_div", c.ablations.disable_div);
    }
    if (j.contains("pair_space")) {
        const auto s = get_field<std::string>(j, "pair_space");
        if (s == "probability") c.pair_space = PairSpace::probability;
        else if (s == "feature") c.pair_space = PairSpace::feature;
        else throw ConfigError("expected 'probability' or 'feature'", "pair_space");
    }
    if (j.contains("div_kl") && get_field<std::string>(j, "div_kl") != "batch_mean") {
        throw ConfigError("only 'batch_mean' is supported", "div_kl");
    }
    if (j.contains("lambda_ent")) c.lambda_ent = get_field<double>(j, "lambda_ent");
    if (j.contains("ood_in_div")) c.ood_in_div = get_field<bool>(j, "ood_in_div");
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

/// lr0 divided by decay_factor once for every decay epoch <= epoch (0-based).
inline double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
    double lr = cfg.lr0;
    for (std::size_t e : cfg.decay_epochs) {
        if (epoch >= e) lr /= cfg.decay_factor;
    }
    return lr;
}

struct OptimizerState {
    Vec velocity;
    std::uint64_t step = 0;
    std::size_t epoch = 0;  // epochs completed
    double lr = 0.0;

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline OptimizerState init_optimizer(const PrototypeBank& bank, const TrainConfig& cfg) {
    return {Vec(bank.flat().size(), 0.0), 0, 0, learning_rate(cfg, 0)};
}

/// v <- momentum*v + grad + weight_decay*param (no decay on delta);
/// param <- param - lr*v; then re-projection of tiny g/l vectors.
inline void sgd_step(PrototypeBank& bank, const BankGrad& grad, OptimizerState& state, const TrainConfig& cfg) {
    if (!(grad.shape() == bank.shape()) || state.velocity.size() != bank.flat().size()) {
        throw ShapeMismatch("sgd_step: gradient/velocity shape does not match bank");
    }
    auto p = bank.flat();
    const auto g = grad.flat();
    const std::size_t delta_begin = bank.shape().delta_offset(0, 0);
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double wd = k < delta_begin ? cfg.weight_decay : 0.0;
        state.velocity[k] = cfg.momentum * state.velocity[k] + g[k] + wd * p[k];
        p[k] -= state.lr * state.velocity[k];
    }
    reproject(bank);
    ++state.step;
}

inline void write_optimizer_state(std::ostream& os, const OptimizerState& s) {
    io::write_magic(os, "PFOS");
    io::write_le<std::uint32_t>(os, 1);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.epoch));
    io::write_le<std::uint64_t>(os, s.step);
    io::write_le<double>(os, s.lr);
    io::write_le<std::uint64_t>(os, s.velocity.size());
    for (double x : s.velocity) io::write_le<double>(os, x);
}

inline OptimizerState read_optimizer_state(std::istream& is) {
    const std::string what = "optimizer state";
    io::expect_magic(is, "PFOS", what);
    if (io::read_le<std::uint32_t>(is, what) != 1) throw DataError(what + ": unsupported version");
    OptimizerState s;
    s.epoch = io::read_le<std::uint32_t>(is, what);
    s.step = io::read_le<std::uint64_t>(is, what);
    s.lr = io::read_le<double>(is, what);
    s.velocity.resize(io::read_le<std::uint64_t>(is, what));
    for (double& x : s.velocity) x = io::read_le<double>(is, what);
    return s;
}

// ---------------------------------------------------------------------------
// Pseudo-labels

struct PseudoLabel {
    std::size_t index = 0;
    std::int64_t label = -1;  // class id, or -1 when not confident
    double confidence = 0.0;
    bool ood = false;         // fixmatch-sigmoid marks unconfident samples OOD

    bool labeled() const { return label >= 0; }
};

/// Confidence is the largest activated per-class max-logit.
inline PseudoLabel pseudo_label_one(const SimilarityMatrix& s, std::size_t index, const TrainConfig& cfg) {
    const Vec probs = activate(s.class_maxes(), cfg.activation());
    const std::size_t best = argmax(probs);
    PseudoLabel pl{index, -1, probs[best], false};
    if (pl.confidence >= cfg.thr) {
        pl.label = static_cast<std::int64_t>(best);
    } else if (cfg.mode == TrainMode::fixmatch_sigmoid) {
        pl.ood = true;
    }
    return pl;
}

inline std::vector<PseudoLabel> pseudo_label(const PrototypeBank& bank, const std::vector<CSpan>& feats,
                                             const TrainConfig& cfg) {
    const ComposedBank cb(bank);
    std::vector<PseudoLabel> out;
    out.reserve(feats.size());
    for (std::size_t k = 0; k < feats.size(); ++k) out.push_back(pseudo_label_one(SimilarityMatrix(cb, feats[k]), k, cfg));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOutputs {
    MetricsReport report;
    std::vector<std::int64_t> preds;
    std::vector<double> id_scores;
};

/// Metrics on the test partition.
///   fixmatch-sigmoid: seen_acc is closed-set argmax accuracy on seen-class
///     samples; all_acc is Hungarian accuracy over all samples where
///     predictions below thr form one extra "rejected" cluster; no novel_acc.
///   orca-pairwise: argmax over seen + novel slots; seen/novel/all accuracy.
///   id_ood_auc scores each sample by its largest seen-class probability.
///   Usage and purity use each seen-class sample's best slot in its own class.
inline EvalOutputs evaluate(const PrototypeBank& bank, const EmbeddingDataset& ds, const TrainConfig& cfg,
                            const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw EmptyPartition("evaluation partition is empty");
    const ComposedBank cb(bank);
    const Activation act = cfg.activation();
    const std::size_t n_seen = ds.id_classes.size();
    const std::size_t n_model = bank.classes();

    EvalOutputs out;
    std::vector<std::int64_t> labels, argmax_preds;
    std::vector<char> is_ood;
    std::vector<std::size_t> use_classes, use_slots;
    std::vector<std::int32_t> use_sub;
    for (std::size_t k : indices) {
        const SimilarityMatrix s(cb, ds.feat(k));
        const Vec probs = activate(s.class_maxes(), act);
        const std::size_t best = argmax(probs);
        double id_score = 0.0;
        for (std::size_t c = 0; c < std::min(n_seen, n_model); ++c) id_score = std::max(id_score, probs[c]);
        const std::int32_t y = ds.labels[k];
        labels.push_back(y);
        argmax_preds.push_back(static_cast<std::int64_t>(best));
        if (cfg.mode == TrainMode::fixmatch_sigmoid) {
            out.preds.push_back(probs[best] >= cfg.thr ? static_cast<std::int64_t>(best) : static_cast<std::int64_t>(n_model));
        } else {
            out.preds.push_back(static_cast<std::int64_t>(best));
        }
        out.id_scores.push_back(id_score);
        const bool id = ds.is_id_class(y);
        is_ood.push_back(id ? 0 : 1);
        if (id && static_cast<std::size_t>(y) < n_model) {
            use_classes.push_back(static_cast<std::size_t>(y));
            use_slots.push_back(s.argmax_slot(static_cast<std::size_t>(y)));
            if (ds.has_subclusters()) use_sub.push_back(ds.subclusters[k]);
        }
    }

    auto& r = out.report;
    const std::set<std::int64_t> seen(ds.id_classes.begin(), ds.id_classes.end());
    const std::set<std::int64_t> novel(ds.ood_classes.begin(), ds.ood_classes.end());
    const bool any_seen = !use_classes.empty();
    const bool any_novel = std::any_of(is_ood.begin(), is_ood.end(), [](char f) { return f != 0; });
    r.seen_acc = any_seen ? seen_acc(argmax_preds, labels, seen) : 0.0;
    if (cfg.mode == TrainMode::orca_pairwise && any_novel) r.novel_acc = novel_acc(out.preds, labels, novel);
    r.all_acc = all_acc(out.preds, labels);
    if (any_seen && any_novel) r.id_ood_auc = id_ood_auc(out.id_scores, is_ood);
    if (any_seen) {
        const ProtoUsage u = proto_usage(use_classes, use_slots, n_model, bank.slots());
        for (std::size_t c = 0; c < n_model; ++c) {
            if (u.counts[c] > 0) r.proto_usage.push_back(u.usage[c]);
        }
        r.proto_usage_entropy = u.mean_entropy();
        r.proto_max_share = u.mean_max_share();
        if (ds.has_subclusters()) {
            r.subcluster_purity = subcluster_purity(use_classes, use_slots, use_sub);
            r.subcluster_completeness = subcluster_completeness(use_classes, use_slots, use_sub);
        }
    }
    return out;
}

inline MetricsReport evaluate_report(const PrototypeBank& bank, const EmbeddingDataset& ds, const TrainConfig& cfg) {
    return evaluate(bank, ds, cfg, ds.test).report;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    auto opt = [](const std::optional<double>& v) -> nlohmann::json { return v ? nlohmann::json(*v) : nlohmann::json(); };
    return {
        {"seen_acc", r.seen_acc},
        {"novel_acc", opt(r.novel_acc)},
        {"all_acc", r.all_acc},
        {"id_ood_auc", opt(r.id_ood_auc)},
        {"proto_usage", r.proto_usage},
        {"proto_usage_entropy", r.proto_usage_entropy},
        {"proto_max_share", r.proto_max_share},
        {"subcluster_purity", opt(r.subcluster_purity)},
        {"subcluster_completeness", opt(r.subcluster_completeness)},
    };
}

// ---------------------------------------------------------------------------
// Training

struct EpochSummary {
    double l_max = 0.0, l_div = 0.0, l_cst = 0.0, l_ldiv = 0.0, l_ood = 0.0, l_ent = 0.0, total = 0.0;
    std::size_t steps = 0;
    std::size_t pseudo_labeled = 0;
    std::size_t ood_flagged = 0;
};

namespace detail {
/// Per-epoch RNG: a pure function of (seed, epoch) so resumed runs replay.
inline std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x9f5aU};
    return std::mt19937_64(seq);
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }
}  // namespace detail

/// One pass of mixed batches. Steps per epoch cover the larger of the two
/// partitions; the smaller stream wraps around its shuffled order.
inline EpochSummary train_epoch(PrototypeBank& bank, const EmbeddingDataset& ds, const TrainConfig& cfg,
                                OptimizerState& state) {
    if (ds.supervised.empty()) throw EmptyPartition("supervised partition is empty");
    auto rng = detail::epoch_rng(cfg.seed, state.epoch);
    std::vector<std::size_t> sup = ds.supervised;
    std::vector<std::size_t> uns = ds.unsupervised;
    std::shuffle(sup.begin(), sup.end(), rng);
    std::shuffle(uns.begin(), uns.end(), rng);

    const std::size_t steps = std::max(detail::ceil_div(sup.size(), cfg.batch_sup),
                                       uns.empty() ? 0 : detail::ceil_div(uns.size(), cfg.batch_unsup));
    const LossSettings settings = cfg.loss_settings();
    const LossWeights weights = cfg.weights();
    const std::size_t n_model = bank.classes();
    state.lr = learning_rate(cfg, state.epoch);

    EpochSummary sum;
    std::size_t sup_pos = 0, uns_pos = 0;
    for (std::size_t step = 0; step < steps; ++step) {
        LossBatch batch;
        for (std::size_t k = 0; k < std::min(cfg.batch_sup, sup.size()); ++k) {
            const std::size_t idx = sup[sup_pos++ % sup.size()];
            const auto y = static_cast<std::int64_t>(ds.labels[idx]);
            if (y >= static_cast<std::int64_t>(n_model)) throw LabelOutOfRange("supervised label exceeds model classes");
            batch.add(ds.feat(idx), y, y, false);
        }
        if (!uns.empty()) {
            const ComposedBank cb(bank);
            const std::size_t first = batch.size();
            std::vector<Vec> pair_vecs;
            for (std::size_t k = 0; k < std::min(cfg.batch_unsup, uns.size()); ++k) {
                const std::size_t idx = uns[uns_pos++ % uns.size()];
                const SimilarityMatrix s(cb, ds.feat(idx));
                const PseudoLabel pl = pseudo_label_one(s, idx, cfg);
                if (cfg.mode == TrainMode::fixmatch_sigmoid) {
                    std::int64_t div = pl.label;
                    if (pl.ood && cfg.ood_in_div) div = static_cast<std::int64_t>(argmax(s.class_maxes()));
                    batch.add(ds.feat(idx), pl.label, div, pl.ood);
                } else {
                    batch.add(ds.feat(idx), -1, pl.label, false);
                    if (cfg.pair_space == PairSpace::probability) {
                        pair_vecs.push_back(softmax(s.class_maxes(), cfg.T));
                    } else {
                        pair_vecs.emplace_back(ds.feat(idx).begin(), ds.feat(idx).end());
                    }
                }
                sum.pseudo_labeled += pl.labeled() ? 1 : 0;
                sum.ood_flagged += pl.ood ? 1 : 0;
            }
            if (cfg.mode == TrainMode::orca_pairwise && pair_vecs.size() >= 2) {
                PairSet local = make_pairs(pair_vecs);
                for (auto& [i, j] : local.pairs) batch.pairs.pairs.emplace_back(first + i, first + j);
            }
        }
        const LossBreakdown loss = compute_batch_loss(bank, batch, settings, weights);
        sgd_step(bank, loss.grad, state, cfg);
        sum.l_max += loss.l_max;
        sum.l_div += loss.l_div;
        sum.l_cst += loss.l_cst;
        sum.l_ldiv += loss.l_ldiv;
        sum.l_ood += loss.l_ood;
        sum.l_ent += loss.l_ent;
        sum.total += loss.total;
        ++sum.steps;
    }
    if (sum.steps > 0) {
        const double inv = 1.0 / static_cast<double>(sum.steps);
        sum.l_max *= inv;
        sum.l_div *= inv;
        sum.l_cst *= inv;
        sum.l_ldiv *= inv;
        sum.l_ood *= inv;
        sum.l_ent *= inv;
        sum.total *= inv;
    }
    ++state.epoch;
    return sum;
}

struct HistoryRow {
    std::size_t epoch = 0;
    EpochSummary loss;
    MetricsReport metrics;
};

inline const char* kHistoryHeader =
    "epoch,l_max,l_div,l_cst,l_ldiv,total,seen_acc,novel_acc,all_acc,auc,proto_usage_entropy";

inline std::string history_csv_row(const HistoryRow& h) {
    std::ostringstream os;
    os << std::setprecision(10);
    auto opt = [&](const std::optional<double>& v) {
        if (v) os << *v;
        else os << "nan";
    };
    os << h.epoch << ',' << h.loss.l_max << ',' << h.loss.l_div << ',' << h.loss.l_cst << ',' << h.loss.l_ldiv << ','
       << h.loss.total << ',' << h.metrics.seen_acc << ',';
    opt(h.metrics.novel_acc);
    os << ',' << h.metrics.all_acc << ',';
    opt(h.metrics.id_ood_auc);
    os << ',' << h.metrics.proto_usage_entropy;
    return os.str();
}

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& history) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os << kHistoryHeader << '\n';
    for (const auto& h : history) os << history_csv_row(h) << '\n';
}

struct FitOptions {
    /// Checkpoints go here at each decay boundary and at the end.
    std::optional<std::filesystem::path> checkpoint_dir;
    /// Continue from a saved bank + optimizer state instead of initializing.
    std::optional<PrototypeBank> resume_bank;
    std::optional<OptimizerState> resume_state;
    /// Skip the per-epoch test evaluation (history metrics stay default).
    bool evaluate_each_epoch = true;
    std::function<void(const HistoryRow&)> on_epoch;
};

struct FitResult {
    PrototypeBank bank;
    OptimizerState state;
    std::vector<HistoryRow> history;
};

inline void save_checkpoint(const std::filesystem::path& dir, const std::string& tag, const PrototypeBank& bank,
                            const OptimizerState& state) {
    std::filesystem::create_directories(dir);
    save_bank((dir / ("bank_" + tag + ".pfbk")).string(), bank);
    std::ofstream os(dir / ("optim_" + tag + ".pfos"), std::ios::binary);
    if (!os) throw DataError("cannot write optimizer state in '" + dir.string() + "'");
    write_optimizer_state(os, state);
}

inline OptimizerState load_optimizer_state(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    return read_optimizer_state(is);
}

inline FitResult fit(const EmbeddingDataset& ds, const TrainConfig& cfg, const FitOptions& opts = {}) {
    cfg.validate();
    if (ds.id_classes.empty()) throw EmptyPartition("dataset has no split assigned (no ID classes)");
    const std::size_t n_model = cfg.model_classes(ds);
    FitResult res;
    if (opts.resume_bank) {
        res.bank = *opts.resume_bank;
        if (res.bank.classes() != n_model || res.bank.slots() != cfg.slots() || res.bank.dim() != ds.dim) {
            throw ShapeMismatch("resume bank shape does not match config and data");
        }
        res.state = opts.resume_state ? *opts.resume_state : init_optimizer(res.bank, cfg);
    } else {
        res.bank = init_bank(n_model, cfg.slots(), ds.dim, cfg.seed);
        res.state = init_optimizer(res.bank, cfg);
    }
    const std::set<std::size_t> boundaries(cfg.decay_epochs.begin(), cfg.decay_epochs.end());
    while (res.state.epoch < cfg.epochs) {
        HistoryRow row;
        row.loss = train_epoch(res.bank, ds, cfg, res.state);
        row.epoch = res.state.epoch;
        if (opts.evaluate_each_epoch && !ds.test.empty()) row.metrics = evaluate_report(res.bank, ds, cfg);
        if (opts.checkpoint_dir && boundaries.count(res.state.epoch)) {
            save_checkpoint(*opts.checkpoint_dir, "epoch" + std::to_string(res.state.epoch), res.bank, res.state);
        }
        if (opts.on_epoch) opts.on_epoch(row);
        res.history.push_back(std::move(row));
    }
    if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir, "final", res.bank, res.state);
    return res;
}

}  // namespace pf
