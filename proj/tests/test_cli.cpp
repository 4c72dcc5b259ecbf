#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "tscuap/artifact.hpp"
#include "tscuap/binio.hpp"
#include "tscuap/runner.hpp"

using namespace tscuap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
    Json error() const { return Json::parse(err).at("error"); }
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

// Small, fast craft settings.
std::vector<std::string> quick_craft(const fs::path& runs, const std::string& name) {
    return {"craft",       "--runs-dir", runs.string(), "--run-name", name,  "--alpha", "4",
            "--per-class", "2",          "--batch-size", "10",        "--epochs", "2"};
}

}  // namespace

TEST(Cli, CraftWritesArtifactLogAndSnapshot) {
    const auto runs = fixtures::temp_dir("cli_craft");
    const auto r = run(quick_craft(runs, "c1"));
    ASSERT_EQ(r.code, 0) << r.err;
    const fs::path dir = runs / "c1";
    const UapArtifact art = load_artifact((dir / "artifact.uap").string());
    EXPECT_EQ(art.spec.alpha(), 4);
    EXPECT_EQ(art.metadata["source_model"], "desk_cnn_cifar10");
    EXPECT_EQ(art.metadata["iterations_run"], 4);
    EXPECT_TRUE(art.metadata["completed"].get<bool>());

    std::istringstream log(read_file((dir / "craft_log.jsonl").string()));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        EXPECT_TRUE(Json::parse(line).contains("loss"));
        ++lines;
    }
    EXPECT_EQ(lines, 4);

    const Json cfg = Json::parse(read_file((dir / "config.json").string()));
    EXPECT_EQ(cfg["command"], "craft");
    EXPECT_EQ(cfg["alpha"], 4);
    EXPECT_EQ(Json::parse(read_file((dir / "status.json").string()))["status"], "complete");
    EXPECT_TRUE(Json::parse(r.out).contains("artifact"));
}

TEST(Cli, ConfigSnapshotReproducesRunBitForBit) {
    const auto runs = fixtures::temp_dir("cli_rerun");
    ASSERT_EQ(run(quick_craft(runs, "first")).code, 0);
    const auto snap = (runs / "first" / "config.json").string();
    const auto r = run({"craft", "--config", snap, "--run-name", "second"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto a = load_artifact((runs / "first" / "artifact.uap").string());
    const auto b = load_artifact((runs / "second" / "artifact.uap").string());
    EXPECT_EQ(a.patch, b.patch);
    EXPECT_EQ(a.perturbation().values(), b.perturbation().values());
}

TEST(Cli, EvalWritesReport) {
    const auto runs = fixtures::temp_dir("cli_eval");
    ASSERT_EQ(run(quick_craft(runs, "c")).code, 0);
    const auto r = run({"eval", "--runs-dir", runs.string(), "--run-name", "e", "--artifact",
                        (runs / "c" / "artifact.uap").string(), "--per-class", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const Json rec = Json::parse(read_file((runs / "e" / "report.jsonl").string()));
    EXPECT_EQ(rec["n_evaluated"], 30);
    EXPECT_TRUE(fs::exists(runs / "e" / "report.md"));
}

TEST(Cli, NonDividingAlphaIsUsageError) {
    const auto runs = fixtures::temp_dir("cli_alpha");
    const auto r = run({"craft", "--runs-dir", runs.string(), "--alpha", "3"});
    EXPECT_EQ(r.code, cli::kUsage);
    const Json e = r.error();
    EXPECT_EQ(e["kind"], "config");
    EXPECT_NE(e["violations"].dump().find("alpha"), std::string::npos) << e.dump();
    EXPECT_TRUE(fs::is_empty(runs));
}

TEST(Cli, AllViolationsReportedTogether) {
    const auto runs = fixtures::temp_dir("cli_multi");
    const auto r = run({"craft", "--runs-dir", runs.string(), "--alpha", "3", "--epsilon", "-1", "--batch-size", "0"});
    ASSERT_EQ(r.code, cli::kUsage);
    EXPECT_GE(r.error()["violations"].size(), 3u) << r.err;
}

TEST(Cli, ExistingRunNameIsRefused) {
    const auto runs = fixtures::temp_dir("cli_overwrite");
    ASSERT_EQ(run(quick_craft(runs, "same")).code, 0);
    const auto before = read_file((runs / "same" / "artifact.uap").string());
    const auto r = run(quick_craft(runs, "same"));
    EXPECT_EQ(r.code, cli::kIo);
    EXPECT_NE(r.error()["message"].get<std::string>().find("refusing"), std::string::npos);
    EXPECT_EQ(read_file((runs / "same" / "artifact.uap").string()), before);
}

TEST(Cli, FlagsOverrideConfigOverridesDefaults) {
    const auto runs = fixtures::temp_dir("cli_layers");
    const auto cfg = runs / "cfg.json";
    write_file_atomic(cfg.string(), Json{{"alpha", 8}, {"epochs", 1}, {"per_class", 2}, {"batch_size", 5},
                                         {"seed", 4}}.dump());
    const auto r = run({"craft", "--config", cfg.string(), "--runs-dir", runs.string(), "--run-name", "x",
                        "--seed", "7"});
    ASSERT_EQ(r.code, 0) << r.err;
    const Json snap = Json::parse(read_file((runs / "x" / "config.json").string()));
    EXPECT_EQ(snap["alpha"], 8);        // config file
    EXPECT_EQ(snap["seed"], 7);         // flag
    EXPECT_EQ(snap["loss"], "ce");      // default
    EXPECT_EQ(snap["optimizer"], "adam");
}

TEST(Cli, UnknownConfigKeyAndWrongCommandAreRejected) {
    const auto runs = fixtures::temp_dir("cli_badcfg");
    const auto cfg = runs / "cfg.json";
    write_file_atomic(cfg.string(), Json{{"command", "eval"}, {"alpah", 2}}.dump());
    const auto r = run({"craft", "--config", cfg.string(), "--runs-dir", runs.string()});
    ASSERT_EQ(r.code, cli::kUsage);
    const std::string v = r.error()["violations"].dump();
    EXPECT_NE(v.find("alpah"), std::string::npos) << v;
    EXPECT_NE(v.find("eval"), std::string::npos) << v;
}

TEST(Cli, UnknownSubcommandAndModel) {
    EXPECT_EQ(run({"explode"}).code, cli::kUsage);
    EXPECT_EQ(run({}).code, cli::kUsage);
    const auto runs = fixtures::temp_dir("cli_model");
    const auto r = run({"craft", "--runs-dir", runs.string(), "--model", "nope"});
    EXPECT_EQ(r.code, cli::kUsage);
    EXPECT_NE(r.err.find("desk_cnn_cifar10"), std::string::npos) << r.err;
}

TEST(Cli, HelpAndVersion) {
    const auto h = run({"--help"});
    EXPECT_EQ(h.code, 0);
    EXPECT_NE(h.out.find("craft"), std::string::npos);
    const auto v = run({"--version"});
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find(toolkit_version()), std::string::npos);
    EXPECT_EQ(cli::subcommands().size(), 7u);
}

TEST(Cli, CorruptArtifactIsFormatError) {
    const auto runs = fixtures::temp_dir("cli_corrupt");
    write_file_atomic((runs / "bad.uap").string(), "UAP1garbage");
    const auto r = run({"eval", "--runs-dir", runs.string(), "--artifact", (runs / "bad.uap").string()});
    EXPECT_EQ(r.code, cli::kIo);
    EXPECT_EQ(r.error()["kind"], "format");
    EXPECT_NE(r.err.find("bad.uap"), std::string::npos) << r.err;
}

TEST(Cli, AblateAndReport) {
    const auto runs = fixtures::temp_dir("cli_ablate");
    ASSERT_EQ(run(quick_craft(runs, "c")).code, 0);
    const auto art = (runs / "c" / "artifact.uap").string();
    const auto a = run({"ablate", "--runs-dir", runs.string(), "--run-name", "a", "--artifact", art,
                        "--per-class", "2"});
    ASSERT_EQ(a.code, 0) << a.err;
    std::istringstream lines(read_file((runs / "a" / "ablation.jsonl").string()));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) ++n;
    EXPECT_EQ(n, 5);
    const auto rep = run({"report", "--runs-dir", runs.string(), "--run-name", "r", "--inputs",
                          (runs / "a" / "ablation.jsonl").string()});
    ASSERT_EQ(rep.code, 0) << rep.err;
    EXPECT_TRUE(fs::exists(runs / "r" / "report.md"));
}
