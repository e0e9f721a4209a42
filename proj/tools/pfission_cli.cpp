// pfission: synth | train | eval | gradcheck | sweep | report
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 gradcheck failure,
// 1 anything else.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "pfission/pfission.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitGradcheck = 4;

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw pf::DataError("cannot read '" + p.string() + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

/// SHA-1 of "blob <size>\0<content>", the hash git assigns to file contents.
std::string git_blob_hash(const std::string& content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, content.data(), content.size());
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

json file_entry(const fs::path& p) {
    const std::string content = read_file(p);
    return {{"path", p.string()}, {"bytes", content.size()}, {"git_sha1", git_blob_hash(content)}};
}

json read_json_file(const fs::path& p, const std::string& field) {
    if (!fs::exists(p)) throw pf::ConfigError("file '" + p.string() + "' does not exist", field);
    try {
        return json::parse(read_file(p));
    } catch (const json::parse_error& e) {
        throw pf::ConfigError("'" + p.string() + "' is not valid JSON: " + e.what(), field);
    }
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw pf::DataError("cannot write '" + p.string() + "'");
    os << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// Manifest next to the outputs: command, effective config, seed, and content
/// hashes of every input and output file.
void write_manifest(const fs::path& out_dir, const std::string& command, const json& config, std::uint64_t seed,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    json m;
    m["command"] = command;
    m["seed"] = seed;
    m["config"] = config;
    m["inputs"] = json::array();
    for (const auto& p : inputs) m["inputs"].push_back(file_entry(p));
    m["outputs"] = json::array();
    for (const auto& p : outputs) m["outputs"].push_back(file_entry(p));
    write_json(out_dir / "manifest.json", m);
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw pf::DataError("cannot create directory '" + p.string() + "': " + ec.message());
}

std::size_t worker_count(std::size_t jobs) {
    std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PF_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v < 1) throw std::invalid_argument("PF_THREADS");
            n = static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw pf::ConfigError("must be a positive integer", "PF_THREADS");
        }
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

// ---------------------------------------------------------------------------
// Data directory: embeddings.pfem (or embeddings.csv), optional
// subclusters.csv and split.json.

struct DataDir {
    pf::EmbeddingDataset dataset;
    std::vector<fs::path> files;
    std::optional<json> split_json;
};

DataDir load_data_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw pf::DataError("data directory '" + dir.string() + "' does not exist");
    DataDir out;
    fs::path emb = dir / "embeddings.pfem";
    if (!fs::exists(emb)) emb = dir / "embeddings.csv";
    if (!fs::exists(emb)) {
        throw pf::DataError("no embeddings.pfem or embeddings.csv in '" + dir.string() + "'");
    }
    out.dataset = pf::load_embeddings(emb.string());
    out.files.push_back(emb);
    const fs::path sub = dir / "subclusters.csv";
    if (fs::exists(sub)) {
        out.dataset.subclusters = pf::load_subclusters_csv(sub.string(), out.dataset.size());
        out.files.push_back(sub);
    }
    const fs::path split = dir / "split.json";
    if (fs::exists(split)) {
        out.split_json = read_json_file(split, "split");
        out.files.push_back(split);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config flags. Every flag has a JSON key; flags override the config file.

struct TrainFlags {
    std::string config_path;
    std::optional<std::string> mode;
    std::optional<std::size_t> V, epochs, batch_sup, batch_unsup;
    std::optional<double> T, b, thr, lambda_div, lambda_cst, lambda_ldiv, lambda_ent, lr0, momentum, weight_decay;
    std::optional<double> decay_factor;
    std::vector<std::size_t> decay_epochs;
    std::optional<std::uint64_t> seed;
    bool disable_multi_proto = false, disable_cst = false, disable_div = false;
    std::optional<std::string> pair_space;
    bool ood_in_div = false;
    // split
    std::optional<std::string> scheme;
    std::optional<double> ratio;
    std::optional<std::uint64_t> split_seed;

    void add(CLI::App* app) {
        app->add_option("--config", config_path, "TrainConfig JSON file");
        app->add_option("--mode", mode, "fixmatch_sigmoid | orca_pairwise");
        app->add_option("--V", V, "prototypes per class");
        app->add_option("--T", T, "temperature");
        app->add_option("--b", b, "sigmoid offset");
        app->add_option("--thr", thr, "pseudo-label threshold");
        app->add_option("--lambda-div", lambda_div);
        app->add_option("--lambda-cst", lambda_cst);
        app->add_option("--lambda-ldiv", lambda_ldiv);
        app->add_option("--lambda-ent", lambda_ent);
        app->add_option("--lr0", lr0);
        app->add_option("--momentum", momentum);
        app->add_option("--weight-decay", weight_decay);
        app->add_option("--epochs", epochs);
        app->add_option("--decay-epochs", decay_epochs)->delimiter(',');
        app->add_option("--decay-factor", decay_factor);
        app->add_option("--batch-sup", batch_sup);
        app->add_option("--batch-unsup", batch_unsup);
        app->add_option("--seed", seed);
        app->add_flag("--disable-multi-proto", disable_multi_proto);
        app->add_flag("--disable-cst", disable_cst);
        app->add_flag("--disable-div", disable_div);
        app->add_option("--pair-space", pair_space, "probability | feature");
        app->add_flag("--ood-in-div", ood_in_div);
        app->add_option("--scheme", scheme, "split scheme: orca_like | dsl_like");
        app->add_option("--ratio", ratio, "dsl_like mismatch ratio");
        app->add_option("--split-seed", split_seed);
    }

    pf::TrainConfig config() const {
        json j = config_path.empty() ? json::object() : read_json_file(config_path, "config");
        if (!j.is_object()) throw pf::ConfigError("expected a JSON object", "config");
        auto set = [&](const char* key, const auto& opt) {
            if (opt) j[key] = *opt;
        };
        set("mode", mode);
        set("V", V);
        set("T", T);
        set("b", b);
        set("thr", thr);
        set("lambda_div", lambda_div);
        set("lambda_cst", lambda_cst);
        set("lambda_ldiv", lambda_ldiv);
        set("lambda_ent", lambda_ent);
        set("lr0", lr0);
        set("momentum", momentum);
        set("weight_decay", weight_decay);
        set("epochs", epochs);
        set("decay_factor", decay_factor);
        set("batch_sup", batch_sup);
        set("batch_unsup", batch_unsup);
        set("seed", seed);
        set("pair_space", pair_space);
        if (!decay_epochs.empty()) j["decay_epochs"] = decay_epochs;
        if (ood_in_div) j["ood_in_div"] = true;
        if (disable_multi_proto) j["ablations"]["disable_multi_proto"] = true;
        if (disable_cst) j["ablations"]["disable_cst"] = true;
        if (disable_div) j["ablations"]["disable_div"] = true;
        return pf::train_config_from_json(j);
    }

    pf::SplitSpec split(const DataDir& data, const pf::TrainConfig& cfg) const {
        pf::SplitSpec s;
        s.seed = cfg.seed;
        if (data.split_json) s = pf::split_spec_from_json(*data.split_json, s);
        if (scheme) s.scheme = pf::parse_split_scheme(*scheme);
        if (ratio) s.mismatch_ratio = *ratio;
        if (split_seed) s.seed = *split_seed;
        if (!(s.mismatch_ratio >= 0.0 && s.mismatch_ratio <= 1.0)) {
            throw pf::ConfigError("must be in [0, 1]", "mismatch_ratio");
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const std::string& spec_path, const fs::path& out, const std::optional<std::uint64_t>& seed,
              const std::optional<double>& kappa) {
    json j = spec_path.empty() ? json::object() : read_json_file(spec_path, "spec");
    if (!j.is_object()) throw pf::ConfigError("expected a JSON object", "spec");
    if (seed) j["seed"] = *seed;
    if (kappa) j["kappa"] = *kappa;
    const pf::SyntheticSpec spec = pf::synthetic_spec_from_json(j);
    const pf::SyntheticData data = pf::generate_synthetic(spec);
    pf::validate_partitions(data.dataset);
    ensure_dir(out);
    const fs::path emb = out / "embeddings.pfem";
    const fs::path sub = out / "subclusters.csv";
    pf::save_embeddings(emb.string(), data.dataset);
    pf::save_subclusters_csv(sub.string(), data.dataset);
    std::vector<fs::path> inputs;
    if (!spec_path.empty()) inputs.push_back(spec_path);
    json cfg = pf::to_json(spec);
    cfg["nearest_center_accuracy"] = pf::nearest_center_accuracy(data, spec.num_id_classes, spec.subclusters_per_class);
    write_manifest(out, "synth", cfg, spec.seed, inputs, {emb, sub});
    std::cout << "wrote " << data.dataset.size() << " samples (d=" << spec.dim << ", " << data.dataset.num_classes
              << " classes) to " << out.string() << "\n";
    return 0;
}

json run_report_json(const pf::MetricsReport& r, const pf::TrainConfig& cfg, const pf::SplitSpec& split,
                     std::size_t epochs_run) {
    return {{"metrics", pf::to_json(r)},
            {"config", pf::to_json(cfg)},
            {"split", pf::to_json(split)},
            {"seed", cfg.seed},
            {"epochs_run", epochs_run}};
}

int cmd_train(const TrainFlags& flags, const fs::path& data_dir, const fs::path& out,
              const std::optional<std::string>& resume_tag) {
    const pf::TrainConfig cfg = flags.config();
    DataDir data = load_data_dir(data_dir);
    const pf::SplitSpec split = flags.split(data, cfg);
    const pf::EmbeddingDataset ds = pf::make_split(data.dataset, split);
    ensure_dir(out);
    const fs::path ckpt = out / "checkpoints";

    pf::FitOptions opts;
    opts.checkpoint_dir = ckpt;
    if (resume_tag) {
        opts.resume_bank = pf::load_bank((ckpt / ("bank_" + *resume_tag + ".pfbk")).string());
        opts.resume_state = pf::load_optimizer_state((ckpt / ("optim_" + *resume_tag + ".pfos")).string());
    }
    std::vector<pf::HistoryRow> history;
    const fs::path hist_path = out / "history.csv";
    if (resume_tag && fs::exists(hist_path)) {
        // keep earlier rows up to the resume point
        std::ifstream is(hist_path);
        std::string line;
        std::getline(is, line);
        std::vector<std::string> kept;
        while (std::getline(is, line)) {
            if (std::stoul(line.substr(0, line.find(','))) <= opts.resume_state->epoch) kept.push_back(line);
        }
        std::ofstream os(hist_path);
        os << pf::kHistoryHeader << '\n';
        for (const auto& l : kept) os << l << '\n';
    } else {
        std::ofstream os(hist_path);
        os << pf::kHistoryHeader << '\n';
    }
    opts.on_epoch = [&](const pf::HistoryRow& row) {
        std::ofstream os(hist_path, std::ios::app);
        os << pf::history_csv_row(row) << '\n';
        std::cerr << "epoch " << row.epoch << " total " << row.loss.total << " seen_acc " << row.metrics.seen_acc
                  << "\n";
    };
    const pf::FitResult res = pf::fit(ds, cfg, opts);
    const pf::MetricsReport report = pf::evaluate_report(res.bank, ds, cfg);
    const fs::path report_path = out / "report.json";
    write_json(report_path, run_report_json(report, cfg, split, res.state.epoch));

    std::vector<fs::path> inputs = data.files;
    if (!flags.config_path.empty()) inputs.push_back(flags.config_path);
    std::vector<fs::path> outputs{report_path, hist_path};
    for (const auto& e : fs::directory_iterator(ckpt)) outputs.push_back(e.path());
    std::sort(outputs.begin(), outputs.end());
    json mcfg = pf::to_json(cfg);
    mcfg["split"] = pf::to_json(split);
    write_manifest(out, "train", mcfg, cfg.seed, inputs, outputs);
    std::cout << pf::to_json(report).dump(2) << "\n";
    return 0;
}

int cmd_eval(const TrainFlags& flags, const fs::path& data_dir, const fs::path& bank_path, const fs::path& out) {
    const pf::TrainConfig cfg = flags.config();
    DataDir data = load_data_dir(data_dir);
    const pf::SplitSpec split = flags.split(data, cfg);
    const pf::EmbeddingDataset ds = pf::make_split(data.dataset, split);
    if (!fs::exists(bank_path)) throw pf::DataError("bank file '" + bank_path.string() + "' does not exist");
    const pf::PrototypeBank bank = pf::load_bank(bank_path.string());
    if (bank.classes() != cfg.model_classes(ds) || bank.dim() != ds.dim) {
        throw pf::DataError("bank shape does not match the data and mode");
    }
    const pf::MetricsReport report = pf::evaluate_report(bank, ds, cfg);
    ensure_dir(out);
    const fs::path report_path = out / "report.json";
    write_json(report_path, run_report_json(report, cfg, split, 0));
    std::vector<fs::path> inputs = data.files;
    inputs.push_back(bank_path);
    if (!flags.config_path.empty()) inputs.push_back(flags.config_path);
    json mcfg = pf::to_json(cfg);
    mcfg["split"] = pf::to_json(split);
    write_manifest(out, "eval", mcfg, cfg.seed, inputs, {report_path});
    std::cout << pf::to_json(report).dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(std::size_t trials, std::uint64_t seed, bool corrupt, const std::optional<fs::path>& out) {
    pf::GradCheckOptions opt;
    opt.trials = trials;
    opt.seed = seed;
    opt.corrupt = corrupt;
    const pf::GradCheckSummary s = pf::run_gradcheck(opt);
    std::map<std::string, double> per_loss;
    for (const auto& c : s.cases) per_loss[c.loss] = std::max(per_loss[c.loss], c.report.max_rel_err);
    for (const auto& [name, err] : per_loss) std::cout << std::left << std::setw(28) << name << " max rel err " << err << "\n";
    std::cout << s.cases.size() << " checks over " << trials << " configurations, max relative error "
              << s.max_rel_err << " (tol " << opt.tol << ")\n";
    if (out) {
        ensure_dir(*out);
        json j{{"trials", trials}, {"seed", seed}, {"corrupt", corrupt}, {"tol", opt.tol},
               {"max_rel_err", s.max_rel_err}, {"per_loss", per_loss}, {"passed", s.passed(opt.tol)}};
        write_json(*out / "gradcheck.json", j);
        write_manifest(*out, "gradcheck", j, seed, {}, {*out / "gradcheck.json"});
    }
    pf::require_gradients(s, opt.tol);
    return 0;
}

std::vector<double> parse_ratios(const std::string& text) {
    std::vector<double> out;
    const auto dots = text.find("..");
    try {
        if (dots != std::string::npos) {
            // "a..b" steps by 0.1
            const double a = std::stod(text.substr(0, dots));
            const double b = std::stod(text.substr(dots + 2));
            const long lo = std::lround(a * 10.0), hi = std::lround(b * 10.0);
            for (long k = lo; k <= hi; ++k) out.push_back(static_cast<double>(k) / 10.0);
        } else {
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
        }
    } catch (const std::exception&) {
        throw pf::ConfigError("expected 'a..b' or a comma-separated list", "ratios");
    }
    if (out.empty()) throw pf::ConfigError("no ratios given", "ratios");
    for (double r : out) {
        if (!(r >= 0.0 && r <= 1.0)) throw pf::ConfigError("ratio outside [0, 1]", "ratios");
    }
    return out;
}

int cmd_sweep(const TrainFlags& flags, const fs::path& data_dir, const std::string& ratios_text, std::size_t seeds,
              const fs::path& out) {
    const pf::TrainConfig base = flags.config();
    const std::vector<double> ratios = parse_ratios(ratios_text);
    DataDir data = load_data_dir(data_dir);

    struct Cell {
        double ratio;
        std::uint64_t seed;
        double auc = 0.0, seen_acc = 0.0;
    };
    std::vector<Cell> cells;
    for (double r : ratios) {
        for (std::uint64_t s = 0; s < seeds; ++s) cells.push_back({r, s});
    }

    // validate every split up front so a bad ratio fails before any training
    auto cell_split = [&](const Cell& c) {
        pf::TrainConfig cfg = base;
        cfg.seed = c.seed;
        pf::SplitSpec split = flags.split(data, cfg);
        split.scheme = pf::SplitScheme::dsl_like;
        split.mismatch_ratio = c.ratio;
        if (!flags.split_seed) split.seed = c.seed;
        return split;
    };
    for (const auto& c : cells) (void)pf::make_split(data.dataset, cell_split(c));

    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto worker = [&] {
        for (std::size_t k = next++; k < cells.size(); k = next++) {
            try {
                Cell& c = cells[k];
                pf::TrainConfig cfg = base;
                cfg.seed = c.seed;
                const pf::EmbeddingDataset ds = pf::make_split(data.dataset, cell_split(c));
                pf::FitOptions opts;
                opts.evaluate_each_epoch = false;
                const pf::FitResult res = pf::fit(ds, cfg, opts);
                const pf::MetricsReport r = pf::evaluate_report(res.bank, ds, cfg);
                c.auc = r.id_ood_auc.value_or(std::nan(""));
                c.seen_acc = r.seen_acc;
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    const std::size_t nw = worker_count(cells.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w + 1 < nw; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);

    ensure_dir(out);
    const fs::path csv = out / "sweep.csv";
    std::ostringstream os;
    os << std::setprecision(10) << "ratio,seed,auc,seen_acc\n";
    for (const auto& c : cells) os << c.ratio << ',' << c.seed << ',' << c.auc << ',' << c.seen_acc << '\n';
    write_text(csv, os.str());
    std::vector<fs::path> inputs = data.files;
    if (!flags.config_path.empty()) inputs.push_back(flags.config_path);
    json mcfg = pf::to_json(base);
    mcfg["ratios"] = ratios;
    mcfg["seeds"] = seeds;
    write_manifest(out, "sweep", mcfg, base.seed, inputs, {csv});
    std::cout << os.str();
    return 0;
}

/// Collects report.json files from run directories into one CSV, one row per
/// run, plus mean rows when several runs are given.
int cmd_report(const std::vector<fs::path>& runs, const fs::path& out) {
    if (runs.empty()) throw pf::ConfigError("no run directories given", "runs");
    const std::vector<std::string> cols{"seen_acc", "novel_acc", "all_acc", "id_ood_auc", "proto_usage_entropy",
                                        "proto_max_share", "subcluster_purity", "subcluster_completeness"};
    std::ostringstream os;
    os << std::setprecision(10) << "run";
    for (const auto& c : cols) os << ',' << c;
    os << '\n';
    std::vector<double> sums(cols.size(), 0.0);
    std::vector<std::size_t> counts(cols.size(), 0);
    std::vector<fs::path> inputs;
    for (const auto& dir : runs) {
        const fs::path p = dir / "report.json";
        if (!fs::exists(p)) throw pf::DataError("no report.json in '" + dir.string() + "'");
        inputs.push_back(p);
        const json j = json::parse(read_file(p));
        const json& m = j.at("metrics");
        os << dir.string();
        for (std::size_t k = 0; k < cols.size(); ++k) {
            os << ',';
            if (m.contains(cols[k]) && m[cols[k]].is_number()) {
                const double v = m[cols[k]].get<double>();
                os << v;
                sums[k] += v;
                ++counts[k];
            } else {
                os << "nan";
            }
        }
        os << '\n';
    }
    if (runs.size() > 1) {
        os << "mean";
        for (std::size_t k = 0; k < cols.size(); ++k) {
            os << ',';
            if (counts[k]) os << sums[k] / static_cast<double>(counts[k]);
            else os << "nan";
        }
        os << '\n';
    }
    ensure_dir(out);
    const fs::path csv = out / "summary.csv";
    write_text(csv, os.str());
    json cfg{{"runs", json::array()}};
    for (const auto& r : runs) cfg["runs"].push_back(r.string());
    write_manifest(out, "report", cfg, 0, inputs, {csv});
    std::cout << os.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prototype Fission: multi-prototype open-set semi-supervised learning on fixed embeddings"};
    app.require_subcommand(1);

    std::string spec_path;
    std::string out_dir;
    std::optional<std::uint64_t> synth_seed;
    std::optional<double> synth_kappa;
    auto* synth = app.add_subcommand("synth", "generate a synthetic sub-cluster dataset");
    synth->add_option("--spec", spec_path, "SyntheticSpec JSON file");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--seed", synth_seed);
    synth->add_option("--kappa", synth_kappa);

    TrainFlags train_flags;
    std::string data_dir;
    std::optional<std::string> resume;
    auto* train = app.add_subcommand("train", "train a prototype bank");
    train_flags.add(train);
    train->add_option("--data", data_dir, "data directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--resume", resume, "checkpoint tag to resume from, e.g. epoch40");

    TrainFlags eval_flags;
    std::string bank_path;
    auto* eval = app.add_subcommand("eval", "evaluate a saved bank on the test partition");
    eval_flags.add(eval);
    eval->add_option("--data", data_dir, "data directory")->required();
    eval->add_option("--bank", bank_path, "bank checkpoint (.pfbk)")->required();
    eval->add_option("--out", out_dir, "output directory")->required();

    std::size_t trials = 50;
    std::uint64_t gc_seed = 0;
    bool corrupt = false;
    std::optional<std::string> gc_out;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient");
    gradcheck->add_option("--trials", trials, "random micro-configurations");
    gradcheck->add_option("--seed", gc_seed);
    gradcheck->add_flag("--corrupt", corrupt, "perturb analytic gradients (negative control)");
    gradcheck->add_option("--out", gc_out, "write gradcheck.json and a manifest here");

    TrainFlags sweep_flags;
    std::string ratios = "0.1..0.7";
    std::size_t seeds = 3;
    auto* sweep = app.add_subcommand("sweep", "AUC versus mismatch ratio on dsl_like splits");
    sweep_flags.add(sweep);
    sweep->add_option("--data", data_dir, "data directory")->required();
    sweep->add_option("--ratios", ratios, "'a..b' in steps of 0.1, or a comma list");
    sweep->add_option("--seeds", seeds, "seeds 0..k-1 per ratio");
    sweep->add_option("--out", out_dir, "output directory")->required();

    std::vector<std::string> runs;
    auto* report = app.add_subcommand("report", "summarize report.json files from run directories");
    report->add_option("runs", runs, "run directories")->required();
    report->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*synth) return cmd_synth(spec_path, out_dir, synth_seed, synth_kappa);
        if (*train) return cmd_train(train_flags, data_dir, out_dir, resume);
        if (*eval) return cmd_eval(eval_flags, data_dir, bank_path, out_dir);
        if (*gradcheck) return cmd_gradcheck(trials, gc_seed, corrupt, gc_out ? std::optional<fs::path>(*gc_out) : std::nullopt);
        if (*sweep) return cmd_sweep(sweep_flags, data_dir, ratios, seeds, out_dir);
        if (*report) {
            std::vector<fs::path> dirs(runs.begin(), runs.end());
            return cmd_report(dirs, out_dir);
        }
    } catch (const pf::ConfigError& e) {
        std::cerr << "config error [" << e.field() << "]: " << e.what() << "\n";
        return kExitConfig;
    } catch (const pf::GradMismatch& e) {
        std::cerr << "gradcheck failed: " << e.what() << "\n";
        return kExitGradcheck;
    } catch (const pf::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
