#pragma once

// Embedding datasets: a synthetic hyperspherical sub-cluster mixture, the
// PFEM binary / CSV embedding formats, and the ORCA-like / DS3L-like
// ID-OOD splits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pfission/binary_io.hpp"
#include "pfission/diffmath.hpp"
#include "pfission/errors.hpp"

namespace pf {

struct EmbeddingDataset {
    std::size_t dim = 0;
    std::size_t num_classes = 0;
    Vec feats;                          // row-major, size() x dim
    std::vector<std::int32_t> labels;
    std::vector<std::int32_t> subclusters;  // ground truth when known, else empty

    std::vector<std::size_t> supervised;
    std::vector<std::size_t> unsupervised;
    std::vector<std::size_t> test;
    std::vector<std::int32_t> id_classes;
    std::vector<std::int32_t> ood_classes;

    std::size_t size() const { return labels.size(); }
    CSpan feat(std::size_t k) const { return {feats.data() + k * dim, dim}; }

    bool is_id_class(std::int32_t label) const {
        return std::binary_search(id_classes.begin(), id_classes.end(), label);
    }
    bool has_subclusters() const { return subclusters.size() == labels.size() && !labels.empty(); }
};

/// Partitions are pairwise disjoint, except that an ORCA-like test pool is
/// the unsupervised pool itself. Supervised samples carry only ID labels.
inline void validate_partitions(const EmbeddingDataset& ds) {
    const std::size_t m = ds.size();
    std::vector<char> sup(m, 0), uns(m, 0);
    for (std::size_t k : ds.supervised) {
        if (k >= m) throw DataError("supervised index out of range");
        if (sup[k]) throw DataError("duplicate supervised index");
        if (!ds.is_id_class(ds.labels[k])) throw DataError("supervised sample with non-ID label");
        sup[k] = 1;
    }
    for (std::size_t k : ds.unsupervised) {
        if (k >= m) throw DataError("unsupervised index out of range");
        if (sup[k] || uns[k]) throw DataError("unsupervised index overlaps another partition");
        uns[k] = 1;
    }
    const bool shared_test = ds.test == ds.unsupervised;
    std::vector<char> tst(m, 0);
    for (std::size_t k : ds.test) {
        if (k >= m) throw DataError("test index out of range");
        if (sup[k] || tst[k] || (uns[k] && !shared_test)) {
            throw DataError("test index overlaps another partition");
        }
        tst[k] = 1;
    }
}

// ---------------------------------------------------------------------------
// Synthetic sub-cluster mixture

/// Every class (ID and OOD) has an anchor direction; its K* sub-cluster
/// centers are normalize(anchor + spread * u) for random unit u, redrawn until
/// pairwise cosines are <= max_center_cosine. OOD class o takes its anchor
/// from normalize((1 - overlap) * r + overlap * a[o mod num_id]) with r random.
/// With overlap = 1 and a smaller OOD spread, OOD sub-clusters sit inside the
/// region spanned by an ID class's sub-clusters. Samples are
/// center + N(0, 1/kappa) noise projected to the sphere.
struct SyntheticSpec {
    std::size_t num_id_classes = 4;
    std::size_t num_ood_classes = 4;
    std::size_t subclusters_per_class = 3;
    std::size_t dim = 32;
    double kappa = 50.0;
    std::size_t samples_per_subcluster = 120;
    double subcluster_spread = 1.0;
    /// Spread of OOD-class sub-centers around their anchor; negative means
    /// use subcluster_spread.
    double ood_subcluster_spread = 0.5;
    double ood_anchor_overlap = 1.0;
    double max_center_cosine = 0.8;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_id_classes == 0) throw ConfigError("must be >= 1", "num_id_classes");
        if (subclusters_per_class == 0) throw ConfigError("must be >= 1", "subclusters_per_class");
        if (dim < 2) throw ConfigError("must be >= 2", "dim");
        if (!(kappa > 0.0)) throw ConfigError("must be > 0", "kappa");
        if (samples_per_subcluster == 0) throw ConfigError("must be >= 1", "samples_per_subcluster");
        if (!(subcluster_spread >= 0.0)) throw ConfigError("must be >= 0", "subcluster_spread");
        if (!(ood_anchor_overlap >= 0.0 && ood_anchor_overlap <= 1.0)) {
            throw ConfigError("must be in [0, 1]", "ood_anchor_overlap");
        }
        if (!(max_center_cosine > -1.0 && max_center_cosine <= 1.0)) {
            throw ConfigError("must be in (-1, 1]", "max_center_cosine");
        }
    }
};

struct SyntheticData {
    EmbeddingDataset dataset;
    /// Unit centers, (class * K* + subcluster) major.
    std::vector<Vec> centers;
};

inline constexpr std::size_t kMaxRejectionTries = 10'000;

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t d = spec.dim;

    auto random_unit = [&] {
        Vec v(d);
        double n = 0.0;
        while (!(n > kEpsNorm)) {
            for (double& x : v) x = gauss(rng);
            n = norm2(v);
        }
        for (double& x : v) x /= n;
        return v;
    };

    const std::size_t num_classes = spec.num_id_classes + spec.num_ood_classes;
    std::vector<Vec> anchors;
    for (std::size_t c = 0; c < spec.num_id_classes; ++c) anchors.push_back(random_unit());
    for (std::size_t o = 0; o < spec.num_ood_classes; ++o) {
        const Vec r = random_unit();
        const Vec& base = anchors[o % spec.num_id_classes];
        Vec a(d);
        for (std::size_t k = 0; k < d; ++k) {
            a[k] = (1.0 - spec.ood_anchor_overlap) * r[k] + spec.ood_anchor_overlap * base[k];
        }
        anchors.push_back(normalize(a));
    }

    SyntheticData out;
    const std::size_t kstar = spec.subclusters_per_class;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<Vec> centers;
        std::size_t tries = 0;
        const double spread = c >= spec.num_id_classes && spec.ood_subcluster_spread >= 0.0
                                  ? spec.ood_subcluster_spread
                                  : spec.subcluster_spread;
        while (centers.size() < kstar) {
            if (++tries > kMaxRejectionTries) {
                throw RejectionExhausted("could not place " + std::to_string(kstar) +
                                         " sub-cluster centers with pairwise cosine <= " +
                                         std::to_string(spec.max_center_cosine) + " for class " +
                                         std::to_string(c));
            }
            const Vec u = random_unit();
            Vec cand(d);
            for (std::size_t k = 0; k < d; ++k) cand[k] = anchors[c][k] + spread * u[k];
            if (!(norm2(cand) > kEpsNorm)) continue;
            cand = normalize(cand);
            bool ok = true;
            for (const auto& other : centers) ok = ok && dot(cand, other) <= spec.max_center_cosine;
            if (ok) centers.push_back(std::move(cand));
        }
        for (auto& ctr : centers) out.centers.push_back(std::move(ctr));
    }

    auto& ds = out.dataset;
    ds.dim = d;
    ds.num_classes = num_classes;
    const std::size_t m = num_classes * kstar * spec.samples_per_subcluster;
    ds.feats.reserve(m * d);
    ds.labels.reserve(m);
    ds.subclusters.reserve(m);
    const double sigma = 1.0 / std::sqrt(spec.kappa);
    Vec x(d);
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t s = 0; s < kstar; ++s) {
            const Vec& ctr = out.centers[c * kstar + s];
            for (std::size_t n = 0; n < spec.samples_per_subcluster; ++n) {
                double len = 0.0;
                while (!(len > kEpsNorm)) {
                    for (std::size_t k = 0; k < d; ++k) x[k] = ctr[k] + sigma * gauss(rng);
                    len = norm2(x);
                }
                for (std::size_t k = 0; k < d; ++k) ds.feats.push_back(x[k] / len);
                ds.labels.push_back(static_cast<std::int32_t>(c));
                ds.subclusters.push_back(static_cast<std::int32_t>(s));
            }
        }
    }
    for (std::size_t c = 0; c < spec.num_id_classes; ++c) ds.id_classes.push_back(static_cast<std::int32_t>(c));
    for (std::size_t c = spec.num_id_classes; c < num_classes; ++c) {
        ds.ood_classes.push_back(static_cast<std::int32_t>(c));
    }
    return out;
}

/// Accuracy of assigning each ID sample to the class of its nearest ground-truth
/// ID sub-cluster center.
inline double nearest_center_accuracy(const SyntheticData& data, std::size_t num_id_classes,
                                      std::size_t subclusters_per_class) {
    const auto& ds = data.dataset;
    const std::size_t ncenters = num_id_classes * subclusters_per_class;
    std::size_t total = 0, correct = 0;
    for (std::size_t k = 0; k < ds.size(); ++k) {
        if (static_cast<std::size_t>(ds.labels[k]) >= num_id_classes) continue;
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t j = 0; j < ncenters; ++j) {
            const double s = dot(ds.feat(k), data.centers[j]);
            if (s > best_sim) {
                best_sim = s;
                best = j;
            }
        }
        ++total;
        if (best / subclusters_per_class == static_cast<std::size_t>(ds.labels[k])) ++correct;
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Embedding file formats
//
// PFEM binary, little-endian:
//   "PFEM", version u32, M u64, d u32, num_classes u32,
//   then M records of (label i32, d x f32).

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

inline void write_embeddings(std::ostream& os, const EmbeddingDataset& ds) {
    io::write_magic(os, "PFEM");
    io::write_le<std::uint32_t>(os, kEmbeddingFormatVersion);
    io::write_le<std::uint64_t>(os, ds.size());
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.dim));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.num_classes));
    for (std::size_t k = 0; k < ds.size(); ++k) {
        io::write_le<std::int32_t>(os, ds.labels[k]);
        for (double x : ds.feat(k)) io::write_le<float>(os, static_cast<float>(x));
    }
}

inline EmbeddingDataset read_embeddings(std::istream& is) {
    const std::string what = "embedding file";
    io::expect_magic(is, "PFEM", what);
    const auto version = io::read_le<std::uint32_t>(is, what);
    if (version != kEmbeddingFormatVersion) {
        throw DataError(what + ": unsupported version " + std::to_string(version));
    }
    EmbeddingDataset ds;
    const auto m = io::read_le<std::uint64_t>(is, what);
    ds.dim = io::read_le<std::uint32_t>(is, what);
    ds.num_classes = io::read_le<std::uint32_t>(is, what);
    if (ds.dim == 0) throw DataError(what + ": zero feature dimension");

    // Check the payload length against the header before allocating.
    const auto here = is.tellg();
    if (here >= 0) {
        is.seekg(0, std::ios::end);
        const auto end = is.tellg();
        is.seekg(here);
        const auto expected = static_cast<std::uint64_t>(m) * (4 + 4 * static_cast<std::uint64_t>(ds.dim));
        const auto actual = static_cast<std::uint64_t>(end - here);
        if (actual != expected) {
            throw TruncatedFile(what + ": header promises " + std::to_string(m) + " records (" +
                                std::to_string(expected) + " bytes) but payload has " +
                                std::to_string(actual) + " bytes");
        }
    }

    ds.labels.resize(m);
    ds.feats.resize(m * ds.dim);
    std::vector<char> raw(4 + 4 * ds.dim);
    for (std::uint64_t k = 0; k < m; ++k) {
        const auto label = io::read_le<std::int32_t>(is, what);
        if (label < 0 || static_cast<std::uint64_t>(label) >= ds.num_classes) {
            throw LabelOutOfRange(what + ": record " + std::to_string(k) + " has label " +
                                  std::to_string(label) + " outside [0, " +
                                  std::to_string(ds.num_classes) + ")");
        }
        ds.labels[k] = label;
        for (std::size_t j = 0; j < ds.dim; ++j) ds.feats[k * ds.dim + j] = io::read_le<float>(is, what);
    }
    return ds;
}

/// CSV rows "label,v1,...,vd"; an optional non-numeric header line is skipped.
/// num_classes is max label + 1.
inline EmbeddingDataset read_embeddings_csv(std::istream& is) {
    EmbeddingDataset ds;
    std::string line;
    std::size_t lineno = 0;
    std::int32_t max_label = -1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 2) throw DataError("csv line " + std::to_string(lineno) + ": too few columns");
        std::int32_t label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(cells[0], &used);
        } catch (const std::exception&) {
            if (lineno == 1) continue;  // header
            throw DataError("csv line " + std::to_string(lineno) + ": bad label '" + cells[0] + "'");
        }
        if (label < 0) throw LabelOutOfRange("csv line " + std::to_string(lineno) + ": negative label");
        const std::size_t d = cells.size() - 1;
        if (ds.dim == 0) ds.dim = d;
        if (d != ds.dim) {
            throw TruncatedFile("csv line " + std::to_string(lineno) + ": expected " +
                                std::to_string(ds.dim) + " values, got " + std::to_string(d));
        }
        for (std::size_t j = 1; j < cells.size(); ++j) {
            try {
                ds.feats.push_back(std::stod(cells[j]));
            } catch (const std::exception&) {
                throw DataError("csv line " + std::to_string(lineno) + ": bad value '" + cells[j] + "'");
            }
        }
        ds.labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    ds.num_classes = static_cast<std::size_t>(max_label + 1);
    return ds;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline EmbeddingDataset load_embeddings(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    if (ends_with(path, ".csv")) return read_embeddings_csv(is);
    return read_embeddings(is);
}

inline void save_embeddings(const std::string& path, const EmbeddingDataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_embeddings(os, ds);
    if (!os) throw DataError("write failed for '" + path + "'");
}

/// "index,label,subcluster" rows with header.
inline void save_subclusters_csv(const std::string& path, const EmbeddingDataset& ds) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os << "index,label,subcluster\n";
    for (std::size_t k = 0; k < ds.size(); ++k) {
        os << k << ',' << ds.labels[k] << ',' << (ds.has_subclusters() ? ds.subclusters[k] : -1) << '\n';
    }
}

inline std::vector<std::int32_t> load_subclusters_csv(const std::string& path, std::size_t expected) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open '" + path + "'");
    std::vector<std::int32_t> out(expected, -1);
    std::string line;
    std::getline(is, line);  // header
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, b, c;
        std::getline(ss, a, ',');
        std::getline(ss, b, ',');
        std::getline(ss, c, ',');
        const std::size_t idx = std::stoul(a);
        if (idx >= expected) throw DataError(path + ": index " + a + " out of range");
        out[idx] = std::stoi(c);
        ++rows;
    }
    if (rows != expected) throw TruncatedFile(path + ": expected " + std::to_string(expected) + " rows");
    return out;
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitScheme { orca_like, dsl_like };

struct SplitSpec {
    SplitScheme scheme = SplitScheme::orca_like;
    /// Classes [0, num_seen) are seen (ID); 0 means half of all classes.
    std::size_t num_seen = 0;
    double mismatch_ratio = 0.0;        // dsl_like
    std::size_t labeled_per_class = 50;  // dsl_like
    std::size_t unsup_total = 1000;      // dsl_like
    std::size_t test_per_class = 60;     // dsl_like
    std::uint64_t seed = 0;
};

/// Assigns partitions and ID/OOD class sets.
///   orca_like: half of each seen class supervised; the rest plus every novel
///              sample form the unsupervised pool, which is also the test pool.
///   dsl_like:  labeled_per_class per seen class supervised; test_per_class per
///              class held out; an unsupervised pool of unsup_total samples with
///              exactly floor(rho * unsup_total) OOD samples.
inline EmbeddingDataset make_split(EmbeddingDataset ds, const SplitSpec& spec) {
    const std::size_t c_total = ds.num_classes;
    if (c_total < 2) throw InsufficientSamples("split needs at least two classes");
    const std::size_t seen = spec.num_seen ? spec.num_seen : c_total / 2;
    if (seen == 0 || seen >= c_total) throw ConfigError("must be in [1, num_classes)", "num_seen");

    ds.id_classes.clear();
    ds.ood_classes.clear();
    for (std::size_t c = 0; c < c_total; ++c) {
        (c < seen ? ds.id_classes : ds.ood_classes).push_back(static_cast<std::int32_t>(c));
    }
    ds.supervised.clear();
    ds.unsupervised.clear();
    ds.test.clear();

    std::vector<std::vector<std::size_t>> by_class(c_total);
    for (std::size_t k = 0; k < ds.size(); ++k) by_class.at(static_cast<std::size_t>(ds.labels[k])).push_back(k);

    std::mt19937_64 rng(spec.seed);
    for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

    if (spec.scheme == SplitScheme::orca_like) {
        for (std::size_t c = 0; c < c_total; ++c) {
            const auto& members = by_class[c];
            if (c < seen) {
                if (members.size() < 2) {
                    throw InsufficientSamples("seen class " + std::to_string(c) + " has fewer than 2 samples");
                }
                const std::size_t half = members.size() / 2;
                ds.supervised.insert(ds.supervised.end(), members.begin(), members.begin() + half);
                ds.unsupervised.insert(ds.unsupervised.end(), members.begin() + half, members.end());
            } else {
                ds.unsupervised.insert(ds.unsupervised.end(), members.begin(), members.end());
            }
        }
        std::sort(ds.supervised.begin(), ds.supervised.end());
        std::sort(ds.unsupervised.begin(), ds.unsupervised.end());
        ds.test = ds.unsupervised;
        return ds;
    }

    if (!(spec.mismatch_ratio >= 0.0 && spec.mismatch_ratio <= 1.0)) {
        throw ConfigError("must be in [0, 1]", "mismatch_ratio");
    }
    const auto n_ood = static_cast<std::size_t>(std::floor(spec.mismatch_ratio * static_cast<double>(spec.unsup_total)));
    const std::size_t n_id = spec.unsup_total - n_ood;

    std::vector<std::size_t> id_pool, ood_pool;
    for (std::size_t c = 0; c < c_total; ++c) {
        const auto& members = by_class[c];
        const std::size_t need = spec.test_per_class + (c < seen ? spec.labeled_per_class : 0);
        if (members.size() < need) {
            throw InsufficientSamples("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                                      " samples, split needs at least " + std::to_string(need));
        }
        auto it = members.begin();
        ds.test.insert(ds.test.end(), it, it + static_cast<std::ptrdiff_t>(spec.test_per_class));
        it += static_cast<std::ptrdiff_t>(spec.test_per_class);
        if (c < seen) {
            ds.supervised.insert(ds.supervised.end(), it, it + static_cast<std::ptrdiff_t>(spec.labeled_per_class));
            it += static_cast<std::ptrdiff_t>(spec.labeled_per_class);
            id_pool.insert(id_pool.end(), it, members.end());
        } else {
            ood_pool.insert(ood_pool.end(), it, members.end());
        }
    }
    if (id_pool.size() < n_id) {
        throw InsufficientSamples("unsupervised pool needs " + std::to_string(n_id) + " ID samples, only " +
                                  std::to_string(id_pool.size()) + " remain");
    }
    if (ood_pool.size() < n_ood) {
        throw InsufficientSamples("unsupervised pool needs " + std::to_string(n_ood) + " OOD samples, only " +
                                  std::to_string(ood_pool.size()) + " remain");
    }
    std::sort(id_pool.begin(), id_pool.end());
    std::sort(ood_pool.begin(), ood_pool.end());
    std::shuffle(id_pool.begin(), id_pool.end(), rng);
    std::shuffle(ood_pool.begin(), ood_pool.end(), rng);
    ds.unsupervised.assign(id_pool.begin(), id_pool.begin() + static_cast<std::ptrdiff_t>(n_id));
    ds.unsupervised.insert(ds.unsupervised.end(), ood_pool.begin(), ood_pool.begin() + static_cast<std::ptrdiff_t>(n_ood));
    std::sort(ds.supervised.begin(), ds.supervised.end());
    std::sort(ds.unsupervised.begin(), ds.unsupervised.end());
    std::sort(ds.test.begin(), ds.test.end());
    return ds;
}

inline double ood_fraction(const EmbeddingDataset& ds, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::size_t ood = 0;
    for (std::size_t k : idx) ood += ds.is_id_class(ds.labels[k]) ? 0 : 1;
    return static_cast<double>(ood) / static_cast<double>(idx.size());
}

}  // namespace pf
