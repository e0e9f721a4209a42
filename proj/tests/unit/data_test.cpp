#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include "pfission/config.hpp"
#include "pfission/data.hpp"

using namespace pf;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 0) {
    SyntheticSpec s;
    s.samples_per_subcluster = 20;
    s.seed = seed;
    return s;
}

// Labels only; make_split never reads features.
EmbeddingDataset balanced(std::size_t classes, std::size_t per_class, std::size_t dim = 2) {
    EmbeddingDataset ds;
    ds.dim = dim;
    ds.num_classes = classes;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < per_class; ++k) {
            ds.labels.push_back(static_cast<std::int32_t>(c));
            for (std::size_t j = 0; j < dim; ++j) ds.feats.push_back(j == 0 ? 1.0 : 0.0);
        }
    }
    return ds;
}

std::string bytes_of(const EmbeddingDataset& ds) {
    std::stringstream ss;
    write_embeddings(ss, ds);
    return ss.str();
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("pfission_data_test_" + name);
}

}  // namespace

TEST(Synthetic, DeterministicGivenSeed) {
    const SyntheticData a = generate_synthetic(small_spec(5));
    const SyntheticData b = generate_synthetic(small_spec(5));
    ASSERT_EQ(a.dataset.feats.size(), b.dataset.feats.size());
    EXPECT_EQ(std::memcmp(a.dataset.feats.data(), b.dataset.feats.data(), a.dataset.feats.size() * sizeof(double)), 0);
    EXPECT_EQ(a.dataset.labels, b.dataset.labels);
    EXPECT_EQ(a.dataset.subclusters, b.dataset.subclusters);
    EXPECT_NE(generate_synthetic(small_spec(6)).dataset.feats, a.dataset.feats);
}

TEST(Synthetic, ShapeUnitNormAndCenterCap) {
    const SyntheticSpec spec = small_spec(1);
    const SyntheticData data = generate_synthetic(spec);
    const auto& ds = data.dataset;
    EXPECT_EQ(ds.size(), 8u * 3u * 20u);
    EXPECT_EQ(ds.dim, 32u);
    EXPECT_EQ(ds.num_classes, 8u);
    EXPECT_EQ(ds.id_classes, (std::vector<std::int32_t>{0, 1, 2, 3}));
    EXPECT_EQ(ds.ood_classes, (std::vector<std::int32_t>{4, 5, 6, 7}));
    for (std::size_t k = 0; k < ds.size(); ++k) EXPECT_NEAR(norm2(ds.feat(k)), 1.0, 1e-12);
    for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_NEAR(norm2(data.centers[c * 3 + i]), 1.0, 1e-12);
            for (std::size_t j = 0; j < i; ++j) EXPECT_LE(dot(data.centers[c * 3 + i], data.centers[c * 3 + j]), 0.8);
        }
    }
}

TEST(Synthetic, LimitCases) {
    SyntheticSpec tight = small_spec(2);
    tight.kappa = 1e30;
    const SyntheticData t = generate_synthetic(tight);
    for (std::size_t k = 0; k < t.dataset.size(); ++k) {
        const Vec& ctr = t.centers[static_cast<std::size_t>(t.dataset.labels[k]) * 3 +
                                   static_cast<std::size_t>(t.dataset.subclusters[k])];
        for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(t.dataset.feat(k)[j], ctr[j], 1e-12);
    }

    SyntheticSpec uni = small_spec(3);
    uni.subclusters_per_class = 1;
    const SyntheticData u = generate_synthetic(uni);
    EXPECT_EQ(u.centers.size(), 8u);
    for (auto s : u.dataset.subclusters) EXPECT_EQ(s, 0);
}

TEST(Synthetic, NearestCenterOracleAtDefaults) {
    for (std::uint64_t seed : {0, 1, 2}) {
        SyntheticSpec spec;
        spec.seed = seed;
        const SyntheticData data = generate_synthetic(spec);
        EXPECT_GE(nearest_center_accuracy(data, spec.num_id_classes, spec.subclusters_per_class), 0.95);
    }
}

TEST(Synthetic, ValidationAndRejection) {
    SyntheticSpec bad = small_spec();
    bad.kappa = 0.0;
    try {
        generate_synthetic(bad);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "kappa");
    }
    SyntheticSpec impossible = small_spec();
    impossible.subclusters_per_class = 6;
    impossible.max_center_cosine = -0.9;
    EXPECT_THROW(generate_synthetic(impossible), RejectionExhausted);
}

TEST(SyntheticJson, RoundTripAndErrorsNameTheField) {
    SyntheticSpec s = small_spec(9);
    s.kappa = 75.0;
    const SyntheticSpec back = synthetic_spec_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
    try {
        synthetic_spec_from_json({{"kappa", -1.0}});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "kappa");
    }
    try {
        synthetic_spec_from_json({{"kapa", 3.0}});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "kapa");
    }
    try {
        synthetic_spec_from_json({{"dim", "wide"}});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "dim");
    }
}

TEST(EmbeddingFile, RoundTrip) {
    const EmbeddingDataset ds = generate_synthetic(small_spec(4)).dataset;
    const std::string bytes = bytes_of(ds);
    EXPECT_EQ(bytes.size(), 4u + 4u + 8u + 4u + 4u + ds.size() * (4u + 4u * ds.dim));
    std::stringstream ss(bytes);
    const EmbeddingDataset back = read_embeddings(ss);
    EXPECT_EQ(back.dim, ds.dim);
    EXPECT_EQ(back.num_classes, ds.num_classes);
    EXPECT_EQ(back.labels, ds.labels);
    for (std::size_t k = 0; k < ds.feats.size(); ++k) {
        EXPECT_EQ(back.feats[k], static_cast<double>(static_cast<float>(ds.feats[k])));
    }
    EXPECT_EQ(bytes_of(back), bytes);
}

TEST(EmbeddingFile, Errors) {
    const EmbeddingDataset ds = balanced(3, 4, 5);
    const std::string bytes = bytes_of(ds);

    std::stringstream cut(bytes.substr(0, bytes.size() - 6));
    EXPECT_THROW(read_embeddings(cut), TruncatedFile);

    std::string more = bytes;
    more[8] = 13;  // header claims 13 records, payload has 12
    std::stringstream lying(more);
    EXPECT_THROW(read_embeddings(lying), TruncatedFile);

    std::string magic = bytes;
    magic[0] = 'X';
    std::stringstream bad(magic);
    EXPECT_THROW(read_embeddings(bad), BadMagic);

    std::string label = bytes;
    label[24] = 7;  // first record's label, outside [0, 3)
    std::stringstream out_of_range(label);
    EXPECT_THROW(read_embeddings(out_of_range), LabelOutOfRange);
}

TEST(EmbeddingFile, CsvInterop) {
    std::stringstream ss("label,a,b\n0,1.0,0.5\n2,-1,0.25\n");
    const EmbeddingDataset ds = read_embeddings_csv(ss);
    EXPECT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.dim, 2u);
    EXPECT_EQ(ds.num_classes, 3u);
    EXPECT_EQ(ds.feats, (Vec{1.0, 0.5, -1.0, 0.25}));

    std::stringstream ragged("0,1,2\n1,3\n");
    EXPECT_THROW(read_embeddings_csv(ragged), TruncatedFile);
    std::stringstream negative("-1,0.5\n");
    EXPECT_THROW(read_embeddings_csv(negative), LabelOutOfRange);
}

TEST(EmbeddingFile, LargeFileLoadsQuickly) {
    EmbeddingDataset ds = balanced(10, 100, 512);
    for (std::size_t k = 0; k < ds.feats.size(); ++k) ds.feats[k] = std::sin(static_cast<double>(k));
    const auto path = temp_path("large.pfem");
    save_embeddings(path.string(), ds);
    const auto t0 = std::chrono::steady_clock::now();
    const EmbeddingDataset back = load_embeddings(path.string());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::filesystem::remove(path);
    EXPECT_EQ(back.size(), 1000u);
    EXPECT_EQ(back.dim, 512u);
    EXPECT_LT(secs, 1.0);
    EXPECT_THROW(load_embeddings(temp_path("missing.pfem").string()), DataError);
}

TEST(EmbeddingFile, SubclusterCsvRoundTrip) {
    const EmbeddingDataset ds = generate_synthetic(small_spec(7)).dataset;
    const auto path = temp_path("sub.csv");
    save_subclusters_csv(path.string(), ds);
    EXPECT_EQ(load_subclusters_csv(path.string(), ds.size()), ds.subclusters);
    EXPECT_THROW(load_subclusters_csv(path.string(), ds.size() + 1), TruncatedFile);
    std::filesystem::remove(path);
}

TEST(Split, OrcaLikeTwoThirdsMismatch) {
    SplitSpec spec;
    spec.seed = 3;
    const EmbeddingDataset ds = make_split(balanced(10, 100), spec);
    EXPECT_EQ(ds.id_classes.size(), 5u);
    EXPECT_EQ(ds.supervised.size(), 250u);
    EXPECT_EQ(ds.unsupervised.size(), 750u);
    EXPECT_NEAR(ood_fraction(ds, ds.unsupervised), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(ds.test, ds.unsupervised);
    EXPECT_NO_THROW(validate_partitions(ds));
    for (std::size_t k : ds.supervised) EXPECT_TRUE(ds.is_id_class(ds.labels[k]));
}

TEST(Split, DslLikeExactOodCounts) {
    SplitSpec spec;
    spec.scheme = SplitScheme::dsl_like;
    spec.unsup_total = 997;
    const EmbeddingDataset base = balanced(8, 400);
    for (double rho : {0.0, 0.1, 0.3, 0.5, 0.7}) {
        spec.mismatch_ratio = rho;
        const EmbeddingDataset ds = make_split(base, spec);
        EXPECT_EQ(ds.unsupervised.size(), 997u);
        const auto expected_ood = static_cast<std::size_t>(std::floor(rho * 997.0));
        EXPECT_EQ(ood_fraction(ds, ds.unsupervised), static_cast<double>(expected_ood) / 997.0);
        EXPECT_NO_THROW(validate_partitions(ds));
    }

    spec.mismatch_ratio = 0.5;
    spec.unsup_total = 20000;
    const EmbeddingDataset big = make_split(balanced(10, 2500), spec);
    std::size_t ood = 0;
    for (std::size_t k : big.unsupervised) ood += big.is_id_class(big.labels[k]) ? 0 : 1;
    EXPECT_EQ(ood, 10000u);
}

TEST(Split, DslLikeTestSetIsDisjointAndCoversAllClasses) {
    SplitSpec spec;
    spec.scheme = SplitScheme::dsl_like;
    spec.mismatch_ratio = 0.3;
    spec.unsup_total = 500;
    const EmbeddingDataset ds = make_split(balanced(6, 300), spec);
    std::set<std::size_t> sup(ds.supervised.begin(), ds.supervised.end());
    std::set<std::size_t> uns(ds.unsupervised.begin(), ds.unsupervised.end());
    std::set<std::int32_t> test_classes;
    for (std::size_t k : ds.test) {
        EXPECT_FALSE(sup.count(k));
        EXPECT_FALSE(uns.count(k));
        test_classes.insert(ds.labels[k]);
    }
    EXPECT_EQ(test_classes.size(), 6u);
    EXPECT_EQ(ds.test.size(), 6u * spec.test_per_class);
    EXPECT_EQ(ds.supervised.size(), 3u * spec.labeled_per_class);
}

TEST(Split, DeterministicGivenSeed) {
    for (SplitScheme scheme : {SplitScheme::orca_like, SplitScheme::dsl_like}) {
        SplitSpec spec;
        spec.scheme = scheme;
        spec.mismatch_ratio = 0.4;
        spec.unsup_total = 300;
        spec.seed = 11;
        const EmbeddingDataset base = balanced(6, 200);
        const EmbeddingDataset a = make_split(base, spec), b = make_split(base, spec);
        EXPECT_EQ(a.supervised, b.supervised);
        EXPECT_EQ(a.unsupervised, b.unsupervised);
        EXPECT_EQ(a.test, b.test);
        spec.seed = 12;
        EXPECT_NE(make_split(base, spec).supervised, a.supervised);
    }
}

TEST(Split, Errors) {
    SplitSpec spec;
    spec.scheme = SplitScheme::dsl_like;
    spec.unsup_total = 5000;
    spec.mismatch_ratio = 0.5;
    EXPECT_THROW(make_split(balanced(4, 200), spec), InsufficientSamples);
    spec.mismatch_ratio = 1.5;
    spec.unsup_total = 10;
    EXPECT_THROW(make_split(balanced(4, 200), spec), ConfigError);
    EXPECT_THROW(make_split(balanced(1, 20), SplitSpec{}), InsufficientSamples);
}

TEST(SplitJson, RoundTripAndUnknownKeys) {
    SplitSpec s;
    s.scheme = SplitScheme::dsl_like;
    s.mismatch_ratio = 0.3;
    s.seed = 4;
    EXPECT_EQ(to_json(split_spec_from_json(to_json(s))), to_json(s));
    EXPECT_THROW(split_spec_from_json({{"ratio", 0.3}}), ConfigError);
    EXPECT_THROW(split_spec_from_json({{"scheme", "cifar"}}), ConfigError);
}
