#pragma once

// JSON forms of the synthetic-data and split specs. Missing keys keep their
// defaults, unknown keys are rejected with the key named.

#include <set>
#include <string>

#include <json.hpp>

#include "pfission/data.hpp"
#include "pfission/errors.hpp"

namespace pf {

namespace detail {
template <class T>
T get_field(const nlohmann::json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value: ") + e.what(), key);
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& prefix) {
    if (!j.is_object()) throw ConfigError("expected a JSON object", prefix.empty() ? "config" : prefix);
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown key", prefix + key);
    }
}
}  // namespace detail

inline nlohmann::json to_json(const SyntheticSpec& s) {
    return {
        {"num_id_classes", s.num_id_classes},
        {"num_ood_classes", s.num_ood_classes},
        {"subclusters_per_class", s.subclusters_per_class},
        {"dim", s.dim},
        {"kappa", s.kappa},
        {"samples_per_subcluster", s.samples_per_subcluster},
        {"subcluster_spread", s.subcluster_spread},
        {"ood_subcluster_spread", s.ood_subcluster_spread},
        {"ood_anchor_overlap", s.ood_anchor_overlap},
        {"max_center_cosine", s.max_center_cosine},
        {"seed", s.seed},
    };
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec s = {}) {
    using detail::get_field;
    detail::reject_unknown(j, {"num_id_classes", "num_ood_classes", "subclusters_per_class", "dim", "kappa",
                               "samples_per_subcluster", "subcluster_spread", "ood_subcluster_spread",
                               "ood_anchor_overlap", "max_center_cosine", "seed"},
                           "");
    if (j.contains("num_id_classes")) s.num_id_classes = get_field<std::size_t>(j, "num_id_classes");
    if (j.contains("num_ood_classes")) s.num_ood_classes = get_field<std::size_t>(j, "num_ood_classes");
    if (j.contains("subclusters_per_class")) s.subclusters_per_class = get_field<std::size_t>(j, "subclusters_per_class");
    if (j.contains("dim")) s.dim = get_field<std::size_t>(j, "dim");
    if (j.contains("kappa")) s.kappa = get_field<double>(j, "kappa");
    if (j.contains("samples_per_subcluster")) s.samples_per_subcluster = get_field<std::size_t>(j, "samples_per_subcluster");
    if (j.contains("subcluster_spread")) s.subcluster_spread = get_field<double>(j, "subcluster_spread");
    if (j.contains("ood_subcluster_spread")) s.ood_subcluster_spread = get_field<double>(j, "ood_subcluster_spread");
    if (j.contains("ood_anchor_overlap")) s.ood_anchor_overlap = get_field<double>(j, "ood_anchor_overlap");
    if (j.contains("max_center_cosine")) s.max_center_cosine = get_field<double>(j, "max_center_cosine");
    if (j.contains("seed")) s.seed = get_field<std::uint64_t>(j, "seed");
    s.validate();
    return s;
}

inline std::string to_string(SplitScheme s) { return s == SplitScheme::orca_like ? "orca_like" : "dsl_like"; }

inline SplitScheme parse_split_scheme(const std::string& s) {
    if (s == "orca_like" || s == "orca-like") return SplitScheme::orca_like;
    if (s == "dsl_like" || s == "dsl-like") return SplitScheme::dsl_like;
    throw ConfigError("unknown scheme '" + s + "'", "scheme");
}

inline nlohmann::json to_json(const SplitSpec& s) {
    return {
        {"scheme", to_string(s.scheme)},
        {"num_seen", s.num_seen},
        {"mismatch_ratio", s.mismatch_ratio},
        {"labeled_per_class", s.labeled_per_class},
        {"unsup_total", s.unsup_total},
        {"test_per_class", s.test_per_class},
        {"seed", s.seed},
    };
}

inline SplitSpec split_spec_from_json(const nlohmann::json& j, SplitSpec s = {}) {
    using detail::get_field;
    detail::reject_unknown(j, {"scheme", "num_seen", "mismatch_ratio", "labeled_per_class", "unsup_total",
                               "test_per_class", "seed"},
                           "");
    if (j.contains("scheme")) s.scheme = parse_split_scheme(get_field<std::string>(j, "scheme"));
    if (j.contains("num_seen")) s.num_seen = get_field<std::size_t>(j, "num_seen");
    if (j.contains("mismatch_ratio")) s.mismatch_ratio = get_field<double>(j, "mismatch_ratio");
    if (j.contains("labeled_per_class")) s.labeled_per_class = get_field<std::size_t>(j, "labeled_per_class");
    if (j.contains("unsup_total")) s.unsup_total = get_field<std::size_t>(j, "unsup_total");
    if (j.contains("test_per_class")) s.test_per_class = get_field<std::size_t>(j, "test_per_class");
    if (j.contains("seed")) s.seed = get_field<std::uint64_t>(j, "seed");
    if (!(s.mismatch_ratio >= 0.0 && s.mismatch_ratio <= 1.0)) throw ConfigError("must be in [0, 1]", "mismatch_ratio");
    return s;
}

}  // namespace pf
