#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pfission/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "pfission_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(PF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// A small synthetic data directory with a cheap dsl_like split.
fs::path data_dir(const std::string& name) {
    const fs::path dir = kRoot / name;
    fs::create_directories(dir);
    pf::SyntheticSpec spec;
    spec.samples_per_subcluster = 20;
    write(dir / "spec.json", pf::to_json(spec).dump());
    EXPECT_EQ(run("synth --spec " + (dir / "spec.json").string() + " --out " + dir.string()), 0);
    pf::SplitSpec split;
    split.scheme = pf::SplitScheme::dsl_like;
    split.mismatch_ratio = 0.5;
    split.labeled_per_class = 12;
    split.unsup_total = 160;
    split.test_per_class = 10;
    write(dir / "split.json", pf::to_json(split).dump());
    return dir;
}

const std::string kQuick = " --mode fixmatch_sigmoid --epochs 3 --decay-epochs 2 --batch-sup 16 --batch-unsup 48";

}  // namespace

TEST(Cli, SynthIsDeterministic) {
    fs::remove_all(kRoot);
    const fs::path a = data_dir("synth_a"), b = data_dir("synth_b");
    EXPECT_EQ(slurp(a / "embeddings.pfem"), slurp(b / "embeddings.pfem"));
    EXPECT_EQ(slurp(a / "subclusters.csv"), slurp(b / "subclusters.csv"));
    EXPECT_TRUE(fs::exists(a / "manifest.json"));
}

TEST(Cli, TrainRerunAndEvalAreBitwiseReproducible) {
    const fs::path data = data_dir("train_data");
    const fs::path r1 = kRoot / "run1", r2 = kRoot / "run2";
    ASSERT_EQ(run("train --data " + data.string() + " --out " + r1.string() + kQuick), 0);
    ASSERT_EQ(run("train --data " + data.string() + " --out " + r2.string() + kQuick), 0);
    for (const char* f : {"checkpoints/bank_final.pfbk", "checkpoints/optim_final.pfos", "history.csv", "report.json"}) {
        ASSERT_TRUE(fs::exists(r1 / f)) << f;
        EXPECT_EQ(slurp(r1 / f), slurp(r2 / f)) << f;
    }
    const auto manifest = nlohmann::json::parse(slurp(r1 / "manifest.json"));
    EXPECT_EQ(manifest["command"], "train");
    EXPECT_FALSE(manifest["outputs"].empty());

    std::istringstream hist(slurp(r1 / "history.csv"));
    std::string header;
    std::getline(hist, header);
    EXPECT_EQ(header, "epoch,l_max,l_div,l_cst,l_ldiv,total,seen_acc,novel_acc,all_acc,auc,proto_usage_entropy");

    const fs::path ev = kRoot / "eval";
    EXPECT_EQ(run("eval --data " + data.string() + " --bank " + (r1 / "checkpoints" / "bank_final.pfbk").string() + " --out " +
                  ev.string() + kQuick),
              0);
    EXPECT_TRUE(fs::exists(ev / "report.json"));
}

TEST(Cli, ExitCodes) {
    const fs::path data = data_dir("exit_data");
    const std::string out = " --out " + (kRoot / "exit_out").string();
    EXPECT_EQ(run("train --data " + data.string() + out + kQuick + " --thr 1.5"), 2);
    EXPECT_EQ(run("train --data " + data.string() + out + " --no-such-flag"), 2);
    EXPECT_EQ(run("train --data " + (kRoot / "missing").string() + out + kQuick), 3);

    const fs::path bad = kRoot / "bad_data";
    fs::create_directories(bad);
    write(bad / "embeddings.pfem", "NOPE0000");
    EXPECT_EQ(run("train --data " + bad.string() + out + kQuick), 3);

    EXPECT_EQ(run("gradcheck --trials 3"), 0);
    EXPECT_EQ(run("gradcheck --trials 0"), 0);
    EXPECT_EQ(run("gradcheck --trials 3 --corrupt"), 4);
}

TEST(Cli, SweepWritesOneRowPerCell) {
    const fs::path data = data_dir("sweep_data");
    const fs::path out = kRoot / "sweep";
    ASSERT_EQ(run("sweep --data " + data.string() + " --ratios 0.3,0.5 --seeds 2 --out " + out.string() + kQuick), 0);
    std::istringstream csv(slurp(out / "sweep.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "ratio,seed,auc,seen_acc");
    std::size_t rows = 0;
    while (std::getline(csv, line)) rows += line.empty() ? 0 : 1;
    EXPECT_EQ(rows, 4u);
    EXPECT_TRUE(fs::exists(out / "manifest.json"));
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
    const fs::path data = data_dir("resume_data");
    const fs::path full = kRoot / "resume_full";
    ASSERT_EQ(run("train --data " + data.string() + " --out " + full.string() + kQuick), 0);
    const fs::path part = kRoot / "resume_part";
    fs::create_directories(part / "checkpoints");
    for (const char* f : {"bank_epoch2.pfbk", "optim_epoch2.pfos"}) {
        fs::copy_file(full / "checkpoints" / f, part / "checkpoints" / f);
    }
    ASSERT_EQ(run("train --data " + data.string() + " --out " + part.string() + " --resume epoch2" + kQuick), 0);
    EXPECT_EQ(slurp(part / "checkpoints" / "bank_final.pfbk"), slurp(full / "checkpoints" / "bank_final.pfbk"));
    EXPECT_EQ(slurp(part / "checkpoints" / "optim_final.pfos"), slurp(full / "checkpoints" / "optim_final.pfos"));
}
