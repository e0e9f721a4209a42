#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "pfission/config.hpp"
#include "pfission/trainer.hpp"
#include "test_support.hpp"

using namespace pf;

namespace {

EmbeddingDataset small_dsl(std::uint64_t seed = 0, double rho = 0.5) {
    SyntheticSpec spec;
    spec.samples_per_subcluster = 20;
    spec.seed = seed;
    SplitSpec split;
    split.scheme = SplitScheme::dsl_like;
    split.mismatch_ratio = rho;
    split.labeled_per_class = 12;
    split.unsup_total = 160;
    split.test_per_class = 10;
    split.seed = seed;
    return make_split(generate_synthetic(spec).dataset, split);
}

EmbeddingDataset small_orca(std::uint64_t seed = 0) {
    SyntheticSpec spec;
    spec.samples_per_subcluster = 12;
    spec.seed = seed;
    return make_split(generate_synthetic(spec).dataset, SplitSpec{});
}

TrainConfig quick(TrainMode mode, std::size_t epochs = 3) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.epochs = epochs;
    cfg.decay_epochs = {2};
    cfg.batch_sup = 16;
    cfg.batch_unsup = 48;
    return cfg;
}

// p(c, 0) = normalize(l(c, 0)) because lambda_of(20) == 1.
PrototypeBank bank_at_cosines(const std::vector<double>& cosines) {
    PrototypeBank bank(BankShape{cosines.size(), 1, 2});
    for (std::size_t c = 0; c < cosines.size(); ++c) {
        bank.g(c)[0] = 1.0;
        bank.l(c, 0)[0] = cosines[c];
        bank.l(c, 0)[1] = std::sqrt(1.0 - cosines[c] * cosines[c]);
        bank.delta(c, 0) = 20.0;
    }
    return bank;
}

double cos_for_confidence(double p) { return (5.0 + std::log(p / (1.0 - p))) / 10.0; }

bool same_bits(const PrototypeBank& a, const PrototypeBank& b) {
    return a.shape() == b.shape() && std::memcmp(a.flat().data(), b.flat().data(), a.flat().size() * sizeof(double)) == 0;
}

}  // namespace

TEST(TrainConfig, DefaultsMatchPublishedHyperParameters) {
    const TrainConfig c;
    EXPECT_EQ(c.thr, 0.95);
    EXPECT_EQ(c.V, 5u);
    EXPECT_EQ(c.T, 10.0);
    EXPECT_EQ(c.b, 5.0);
    EXPECT_EQ(c.lr0, 0.1);
    EXPECT_EQ(c.momentum, 0.9);
    EXPECT_EQ(c.weight_decay, 5e-4);
    EXPECT_EQ(c.decay_epochs, (std::vector<std::size_t>{140, 180}));
    EXPECT_EQ(c.decay_factor, 10.0);
    EXPECT_EQ(c.lambda_div, 0.001);
    EXPECT_EQ(c.lambda_cst, 0.6);
    EXPECT_EQ(c.batch_sup, 64u);
    EXPECT_EQ(c.batch_unsup, 448u);
}

TEST(TrainConfig, JsonRoundTripAndRejection) {
    TrainConfig c = quick(TrainMode::orca_pairwise);
    c.ablations.disable_cst = true;
    c.pair_space = PairSpace::feature;
    const TrainConfig back = train_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));

    auto field_of = [](const nlohmann::json& j) {
        try {
            train_config_from_json(j);
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string("<none>");
    };
    EXPECT_EQ(field_of({{"learning_rate", 0.1}}), "learning_rate");
    EXPECT_EQ(field_of({{"ablations", {{"disable_lcst", true}}}}), "ablations.disable_lcst");
    EXPECT_EQ(field_of({{"ablations", {{"disable_cst", 3.5}}}}), "ablations.disable_cst");
    EXPECT_EQ(field_of({{"thr", 1.0}}), "thr");
    EXPECT_EQ(field_of({{"V", "five"}}), "V");
    EXPECT_EQ(field_of({{"mode", "fixmatch"}}), "mode");
    EXPECT_EQ(field_of({{"div_kl", "per_sample"}}), "div_kl");
    EXPECT_EQ(field_of({{"pair_space", "logit"}}), "pair_space");
    EXPECT_EQ(field_of({{"thr", 0.9}}), "<none>");
}

TEST(LearningRate, StepSchedule) {
    const TrainConfig c;
    EXPECT_EQ(learning_rate(c, 0), 0.1);
    EXPECT_EQ(learning_rate(c, 139), 0.1);
    EXPECT_NEAR(learning_rate(c, 140), 0.01, 1e-15);
    EXPECT_NEAR(learning_rate(c, 179), 0.01, 1e-15);
    EXPECT_NEAR(learning_rate(c, 180), 0.001, 1e-15);
    EXPECT_NEAR(learning_rate(c, 199), 0.001, 1e-15);
    for (std::size_t e = 0; e < 200; ++e) EXPECT_EQ(learning_rate(c, e), learning_rate(c, e));
}

TEST(SgdStep, ZeroGradientLeavesBankUnchanged) {
    PrototypeBank bank = init_bank(2, 3, 4, 1);
    bank.delta(1, 2) = 0.7;
    const PrototypeBank before = bank;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    OptimizerState st = init_optimizer(bank, cfg);
    for (int k = 0; k < 3; ++k) sgd_step(bank, BankGrad(bank.shape()), st, cfg);
    EXPECT_TRUE(same_bits(bank, before));
    EXPECT_EQ(st.step, 3u);
}

TEST(SgdStep, PlainStepAndMomentum) {
    std::mt19937_64 rng(61);
    PrototypeBank bank = init_bank(2, 2, 3, 2);
    BankGrad g(bank.shape());
    for (double& x : g.flat()) x = std::normal_distribution<double>(0.0, 0.1)(rng);
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    OptimizerState st = init_optimizer(bank, cfg);
    EXPECT_EQ(st.lr, 0.1);
    const Vec before = flatten_params(bank);
    sgd_step(bank, g, st, cfg);
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(bank.flat()[k], before[k] - 0.1 * g.flat()[k]);

    cfg.momentum = 0.9;
    PrototypeBank m = init_bank(2, 2, 3, 2);
    OptimizerState sm = init_optimizer(m, cfg);
    sgd_step(m, g, sm, cfg);
    sgd_step(m, g, sm, cfg);
    for (std::size_t k = 0; k < before.size(); ++k) {
        EXPECT_NEAR(m.flat()[k], before[k] - 0.1 * g.flat()[k] - 0.1 * 1.9 * g.flat()[k], 1e-15);
    }
}

TEST(SgdStep, WeightDecaySkipsDelta) {
    PrototypeBank bank = init_bank(1, 2, 3, 3);
    bank.delta(0, 0) = 1.5;
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.1;
    OptimizerState st = init_optimizer(bank, cfg);
    const Vec before = flatten_params(bank);
    sgd_step(bank, BankGrad(bank.shape()), st, cfg);
    EXPECT_EQ(bank.delta(0, 0), 1.5);
    EXPECT_NEAR(bank.g(0)[0], before[0] * (1.0 - 0.1 * 0.1), 1e-15);
}

TEST(SgdStep, ShapeMismatch) {
    PrototypeBank bank = init_bank(2, 2, 3, 0);
    TrainConfig cfg;
    OptimizerState st = init_optimizer(bank, cfg);
    EXPECT_THROW(sgd_step(bank, BankGrad(BankShape{2, 3, 3}), st, cfg), ShapeMismatch);
}

TEST(OptimizerState, RoundTrip) {
    OptimizerState s{{0.5, -1.25, 3e-7}, 42, 7, 0.01};
    std::stringstream ss;
    write_optimizer_state(ss, s);
    EXPECT_EQ(read_optimizer_state(ss), s);
}

TEST(PseudoLabel, ThresholdBoundary) {
    TrainConfig cfg;
    const Vec f{1.0, 0.0};
    const PrototypeBank hi = bank_at_cosines({cos_for_confidence(0.96), -1.0});
    const auto a = pseudo_label(hi, {CSpan(f)}, cfg);
    EXPECT_NEAR(a[0].confidence, 0.96, 1e-12);
    EXPECT_EQ(a[0].label, 0);
    EXPECT_FALSE(a[0].ood);

    const PrototypeBank lo = bank_at_cosines({cos_for_confidence(0.94), -1.0});
    const auto b = pseudo_label(lo, {CSpan(f)}, cfg);
    EXPECT_NEAR(b[0].confidence, 0.94, 1e-12);
    EXPECT_EQ(b[0].label, -1);
    EXPECT_TRUE(b[0].ood);

    // softmax over two equally similar classes gives 0.5: unlabeled, not OOD
    cfg.mode = TrainMode::orca_pairwise;
    const auto c = pseudo_label(bank_at_cosines({0.3, 0.3}), {CSpan(f)}, cfg);
    EXPECT_NEAR(c[0].confidence, 0.5, 1e-12);
    EXPECT_EQ(c[0].label, -1);
    EXPECT_FALSE(c[0].ood);
}

TEST(PseudoLabel, UniformBankLabelsNothing) {
    PrototypeBank bank(BankShape{4, 2, 3});
    for (std::size_t c = 0; c < 4; ++c) {
        bank.g(c)[0] = 1.0;
        bank.l(c, 0)[1] = 1.0;
        bank.l(c, 1)[2] = 1.0;
    }
    TrainConfig cfg;
    cfg.mode = TrainMode::orca_pairwise;
    std::mt19937_64 rng(62);
    std::vector<Vec> feats;
    for (int k = 0; k < 20; ++k) feats.push_back(pft::gauss_vec(rng, 3));
    std::vector<CSpan> spans(feats.begin(), feats.end());
    for (const auto& pl : pseudo_label(bank, spans, cfg)) {
        EXPECT_NEAR(pl.confidence, 0.25, 1e-12);
        EXPECT_FALSE(pl.labeled());
        EXPECT_FALSE(pl.ood);
    }
}

TEST(PseudoLabel, ConfidenceBoundsAndThresholdMonotonicity) {
    std::mt19937_64 rng(63);
    for (TrainMode mode : {TrainMode::fixmatch_sigmoid, TrainMode::orca_pairwise}) {
        const PrototypeBank bank = init_bank(4, 3, 6, 9);
        std::vector<Vec> feats;
        for (int k = 0; k < 200; ++k) feats.push_back(pft::gauss_vec(rng, 6));
        std::vector<CSpan> spans(feats.begin(), feats.end());
        TrainConfig cfg;
        cfg.mode = mode;
        cfg.T = 3.0;
        cfg.b = 0.5;
        std::size_t prev = feats.size() + 1;
        for (double thr : {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95}) {
            cfg.thr = thr;
            const auto lo = pseudo_label(bank, spans, cfg);
            cfg.thr = std::min(thr + 0.05, 0.99);
            const auto hi = pseudo_label(bank, spans, cfg);
            std::size_t n = 0;
            for (std::size_t k = 0; k < lo.size(); ++k) {
                EXPECT_GT(lo[k].confidence, 0.0);
                EXPECT_LT(lo[k].confidence, 1.0);
                if (hi[k].labeled()) EXPECT_TRUE(lo[k].labeled());
                n += lo[k].labeled() ? 1 : 0;
            }
            EXPECT_LE(n, prev);
            prev = n;
        }
    }
}

TEST(TrainEpoch, SingleSlotAblationIdentities) {
    for (TrainMode mode : {TrainMode::fixmatch_sigmoid, TrainMode::orca_pairwise}) {
        const EmbeddingDataset ds = mode == TrainMode::fixmatch_sigmoid ? small_dsl() : small_orca();
        TrainConfig cfg = quick(mode);
        cfg.thr = 0.3;
        cfg.ablations.disable_multi_proto = true;
        EXPECT_EQ(cfg.slots(), 1u);
        PrototypeBank bank = init_bank(cfg.model_classes(ds), cfg.slots(), ds.dim, 0);
        OptimizerState st = init_optimizer(bank, cfg);
        for (int e = 0; e < 2; ++e) {
            const EpochSummary s = train_epoch(bank, ds, cfg, st);
            EXPECT_EQ(s.l_div, 0.0);
            EXPECT_EQ(s.l_ldiv, 0.0);
            EXPECT_EQ(s.l_cst, s.l_max);
            EXPECT_GT(s.steps, 0u);
        }
    }
}

TEST(TrainEpoch, EmptySupervisedPartition) {
    EmbeddingDataset ds = small_dsl();
    ds.supervised.clear();
    TrainConfig cfg = quick(TrainMode::fixmatch_sigmoid);
    PrototypeBank bank = init_bank(4, 2, ds.dim, 0);
    OptimizerState st = init_optimizer(bank, cfg);
    EXPECT_THROW(train_epoch(bank, ds, cfg, st), EmptyPartition);
}

TEST(TrainEpoch, StepsCoverTheLargerPartition) {
    const EmbeddingDataset ds = small_dsl();
    TrainConfig cfg = quick(TrainMode::fixmatch_sigmoid);
    PrototypeBank bank = init_bank(4, 5, ds.dim, 0);
    OptimizerState st = init_optimizer(bank, cfg);
    const EpochSummary s = train_epoch(bank, ds, cfg, st);
    const std::size_t expect = std::max((ds.supervised.size() + 15) / 16, (ds.unsupervised.size() + 47) / 48);
    EXPECT_EQ(s.steps, expect);
    EXPECT_EQ(st.epoch, 1u);
    EXPECT_EQ(s.pseudo_labeled + s.ood_flagged, expect * 48);
}

// With every weighted term switched off and no fit, OOD or pair samples in
// the batch, the step gradient is zero and the bank is a fixed point.
TEST(TrainStep, ZeroWeightsAreAFixedPoint) {
    const EmbeddingDataset ds = small_dsl();
    PrototypeBank bank = init_bank(4, 3, ds.dim, 5);
    const PrototypeBank before = bank;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.lambda_div = cfg.lambda_cst = cfg.lambda_ldiv = 0.0;
    LossBatch batch;
    for (std::size_t k : ds.supervised) batch.add(ds.feat(k), -1, ds.labels[k], false);
    OptimizerState st = init_optimizer(bank, cfg);
    for (int s = 0; s < 5; ++s) {
        const LossBreakdown lb = compute_batch_loss(bank, batch, cfg.loss_settings(), cfg.weights());
        sgd_step(bank, lb.grad, st, cfg);
    }
    EXPECT_TRUE(same_bits(bank, before));
}

TEST(TrainEpoch, SupervisedLossDecreasesOverTenEpochs) {
    EmbeddingDataset ds = small_dsl(3);
    ds.unsupervised.clear();
    TrainConfig cfg = quick(TrainMode::fixmatch_sigmoid, 10);
    cfg.decay_epochs = {};
    FitOptions opts;
    opts.evaluate_each_epoch = false;
    const FitResult r = fit(ds, cfg, opts);
    ASSERT_EQ(r.history.size(), 10u);
    EXPECT_LT(r.history.back().loss.l_max, r.history.front().loss.l_max);
    EXPECT_LT(r.history.back().loss.total, r.history.front().loss.total);
    std::size_t drops = 0;
    for (std::size_t e = 1; e < 10; ++e) drops += r.history[e].loss.total < r.history[e - 1].loss.total ? 1 : 0;
    EXPECT_GE(drops, 7u);
}

TEST(Fit, ZeroEpochsReturnsInitialBank) {
    const EmbeddingDataset ds = small_dsl();
    const TrainConfig cfg = quick(TrainMode::fixmatch_sigmoid, 0);
    const FitResult r = fit(ds, cfg);
    EXPECT_TRUE(r.history.empty());
    EXPECT_TRUE(same_bits(r.bank, init_bank(4, 5, ds.dim, cfg.seed)));
}

TEST(Fit, DeterministicAcrossRuns) {
    for (TrainMode mode : {TrainMode::fixmatch_sigmoid, TrainMode::orca_pairwise}) {
        const EmbeddingDataset ds = mode == TrainMode::fixmatch_sigmoid ? small_dsl() : small_orca();
        TrainConfig cfg = quick(mode, 2);
        cfg.seed = 17;
        const FitResult a = fit(ds, cfg), b = fit(ds, cfg);
        EXPECT_TRUE(same_bits(a.bank, b.bank));
        EXPECT_EQ(a.state, b.state);
        cfg.seed = 18;
        EXPECT_FALSE(same_bits(fit(ds, cfg).bank, a.bank));
    }
}

TEST(Fit, ResumeFromCheckpointIsBitwiseIdentical) {
    const EmbeddingDataset ds = small_dsl(2);
    TrainConfig cfg = quick(TrainMode::fixmatch_sigmoid, 5);
    cfg.decay_epochs = {2, 4};
    const auto dir = std::filesystem::temp_directory_path() / "pfission_trainer_resume";
    std::filesystem::remove_all(dir);
    FitOptions opts;
    opts.checkpoint_dir = dir;
    const FitResult full = fit(ds, cfg, opts);
    EXPECT_TRUE(std::filesystem::exists(dir / "bank_epoch2.pfbk"));
    EXPECT_TRUE(std::filesystem::exists(dir / "optim_epoch4.pfos"));
    EXPECT_TRUE(std::filesystem::exists(dir / "bank_final.pfbk"));

    FitOptions resume;
    resume.resume_bank = load_bank((dir / "bank_epoch2.pfbk").string());
    resume.resume_state = load_optimizer_state((dir / "optim_epoch2.pfos").string());
    const FitResult rest = fit(ds, cfg, resume);
    EXPECT_TRUE(same_bits(rest.bank, full.bank));
    EXPECT_EQ(rest.state, full.state);
    ASSERT_EQ(rest.history.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(history_csv_row(rest.history[k]), history_csv_row(full.history[k + 2]));
    }
    std::filesystem::remove_all(dir);
}

TEST(Fit, SeparableTwoClassDataReachesNearPerfectSeenAccuracy) {
    SyntheticSpec spec;
    spec.num_id_classes = 2;
    spec.num_ood_classes = 0;
    spec.subclusters_per_class = 1;
    spec.dim = 8;
    spec.kappa = 200.0;
    spec.samples_per_subcluster = 100;
    spec.seed = 4;
    EmbeddingDataset ds = generate_synthetic(spec).dataset;
    for (std::size_t k = 0; k < ds.size(); ++k) (k % 2 ? ds.test : ds.supervised).push_back(k);

    // nearest class mean fitted on the supervised half
    Vec mean(2 * ds.dim, 0.0);
    for (std::size_t k : ds.supervised) {
        for (std::size_t j = 0; j < ds.dim; ++j) mean[static_cast<std::size_t>(ds.labels[k]) * ds.dim + j] += ds.feat(k)[j];
    }
    std::size_t oracle_hits = 0;
    for (std::size_t k : ds.test) {
        const double s0 = dot(ds.feat(k), CSpan(mean.data(), ds.dim));
        const double s1 = dot(ds.feat(k), CSpan(mean.data() + ds.dim, ds.dim));
        oracle_hits += (s1 > s0 ? 1 : 0) == ds.labels[k] ? 1 : 0;
    }
    ASSERT_EQ(oracle_hits, ds.test.size());

    TrainConfig cfg = quick(TrainMode::fixmatch_sigmoid, 50);
    cfg.ablations.disable_multi_proto = true;
    cfg.decay_epochs = {35, 45};
    FitOptions opts;
    opts.evaluate_each_epoch = false;
    const FitResult r = fit(ds, cfg, opts);
    EXPECT_GE(evaluate_report(r.bank, ds, cfg).seen_acc, 0.99);
}

TEST(Evaluate, ModeSpecificReport) {
    const EmbeddingDataset dsl = small_dsl();
    TrainConfig fm = quick(TrainMode::fixmatch_sigmoid);
    const PrototypeBank b1 = init_bank(4, 5, dsl.dim, 0);
    const MetricsReport r1 = evaluate_report(b1, dsl, fm);
    EXPECT_FALSE(r1.novel_acc.has_value());
    ASSERT_TRUE(r1.id_ood_auc.has_value());
    ASSERT_TRUE(r1.subcluster_purity.has_value());
    for (double x : {r1.seen_acc, r1.all_acc, *r1.id_ood_auc, *r1.subcluster_purity}) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
    }
    for (const auto& row : r1.proto_usage) {
        double s = 0.0;
        for (double x : row) s += x;
        EXPECT_NEAR(s, 1.0, 1e-12);
    }

    const EmbeddingDataset orca = small_orca();
    TrainConfig oc = quick(TrainMode::orca_pairwise);
    const MetricsReport r2 = evaluate_report(init_bank(8, 5, orca.dim, 0), orca, oc);
    EXPECT_TRUE(r2.novel_acc.has_value());
    EXPECT_THROW(evaluate(b1, dsl, fm, {}), EmptyPartition);
}

TEST(History, CsvHeaderIsExact) {
    EXPECT_STREQ(kHistoryHeader,
                 "epoch,l_max,l_div,l_cst,l_ldiv,total,seen_acc,novel_acc,all_acc,auc,proto_usage_entropy");
    HistoryRow row;
    row.epoch = 3;
    const std::string line = history_csv_row(row);
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10);
    EXPECT_EQ(line.substr(0, 2), "3,");
}
