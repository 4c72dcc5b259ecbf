#include "tscuap/runner.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "tscuap/artifact.hpp"
#include "tscuap/attack.hpp"
#include "tscuap/datasets.hpp"
#include "tscuap/evaluation.hpp"
#include "tscuap/modelzoo.hpp"
#include "tscuap/tiling.hpp"
#include "tscuap/visuals.hpp"

namespace tscuap::cli {

namespace fs = std::filesystem;

ConfigError::ConfigError(std::vector<std::string> violations)
    : ValidationError([&] {
          std::string msg = "invalid configuration (" + std::to_string(violations.size()) + " problem" +
                            (violations.size() == 1 ? "" : "s") + ")";
          for (const auto& v : violations) msg += "\n  - " + v;
          return msg;
      }()),
      violations_(std::move(violations)) {}

std::atomic<bool>& interrupt_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

namespace {

extern "C" void on_signal(int) { interrupt_flag().store(true); }

// ---------------------------------------------------------------------------
// Option tables

enum class Kind { Int, Real, Text, Flag, List };

struct OptSpec {
    std::string key;
    Kind kind;
    Json def;
    std::string help;
};

// Numeric flag text goes into the config as a number so snapshots stay typed.
// Anything unparsable stays text and the validator reports it.
Json typed_flag(const std::string& text, Kind kind) {
    std::size_t used = 0;
    try {
        if (kind == Kind::Int) {
            const long long v = std::stoll(text, &used);
            if (used == text.size()) return v;
        } else if (kind == Kind::Real) {
            const double v = std::stod(text, &used);
            if (used == text.size()) return v;
        }
    } catch (const std::exception&) {
    }
    return text;
}

std::string flag_name(const std::string& key) {
    std::string s = key;
    std::replace(s.begin(), s.end(), '_', '-');
    return "--" + s;
}

std::vector<OptSpec> data_opts(const char* split, int per_class, int seed) {
    return {
        {"dataset", Kind::Text, "desk10", "dataset source: desk10, cifar10 or folder:<path>"},
        {"classes", Kind::Int, 10, "number of classes sampled (c)"},
        {"per_class", Kind::Int, per_class, "images per sampled class (n)"},
        {"split", Kind::Text, split, "train or validation"},
        {"data_seed", Kind::Int, seed, "seed for class and item sampling"},
    };
}

std::vector<OptSpec> attack_opts() {
    return {
        {"epsilon", Kind::Text, "10/255", "budget in [0,1] pixel units; fractions like 10/255 accepted"},
        {"norm", Kind::Text, "inf", "inf or 2"},
        {"epochs", Kind::Int, 20, "crafting epochs (E)"},
        {"batch_size", Kind::Int, 100, "crafting batch size (m)"},
        {"loss", Kind::Text, "ce", "ce, df_margin or cos_sim"},
        {"kappa", Kind::Real, 0.0, "df_margin confidence"},
        {"target", Kind::Int, nullptr, "target label for a targeted attack"},
        {"optimizer", Kind::Text, "adam", "adam or sign_step"},
        {"step_size", Kind::Real, 0.01, "optimizer step size"},
        {"seed", Kind::Int, 0, "crafting seed"},
        {"data_free", Kind::Flag, false, "craft on surrogate inputs (cos_sim only)"},
        {"clamp_pixels", Kind::Flag, true, "clamp x + delta to [0, 1]"},
        {"label_source", Kind::Text, "ground_truth", "ground_truth or clean_prediction"},
        {"surrogate", Kind::Text, "uniform", "data-free surrogate inputs: uniform or mean_image"},
        {"surrogate_batches", Kind::Int, 10, "data-free iterations per epoch"},
        {"init", Kind::Text, nullptr, "zero or uniform (default: uniform for cos_sim, else zero)"},
    };
}

std::vector<OptSpec> concat(std::vector<OptSpec> a, const std::vector<OptSpec>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

struct Command {
    std::string name;
    std::string help;
    std::vector<OptSpec> opts;
};

const std::vector<Command>& commands() {
    static const std::vector<Command> cmds = [] {
        std::vector<Command> c;
        c.push_back({"craft", "craft a tiled UAP against one model",
                     concat(concat({{"model", Kind::Text, "desk_cnn_cifar10", "model id to attack"},
                                    {"alpha", Kind::Int, 1, "split ratio; must divide the input size"}},
                                   attack_opts()),
                            data_opts("train", 100, 0))});
        c.push_back({"eval", "fooling ratio of an artifact on one model",
                     concat({{"artifact", Kind::Text, nullptr, "artifact file"},
                             {"model", Kind::Text, nullptr, "target model (default: the artifact's source)"},
                             {"target", Kind::Int, nullptr, "target label (default: the artifact's)"},
                             {"eval_batch", Kind::Int, 256, "evaluation batch size"}},
                            data_opts("validation", 100, 1))});
        c.push_back({"transfer", "evaluate every artifact on every target model",
                     concat({{"artifacts", Kind::List, Json::array(), "artifact files (rows)"},
                             {"models", Kind::List, Json::array(), "target model ids (columns)"},
                             {"workers", Kind::Int, 1, "concurrent cells"},
                             {"eval_batch", Kind::Int, 256, "evaluation batch size"}},
                            data_opts("validation", 100, 1))});
        c.push_back({"ablate", "fooling ratio with only some patch blocks kept",
                     concat({{"artifact", Kind::Text, nullptr, "artifact file"},
                             {"model", Kind::Text, nullptr, "target model (default: the artifact's source)"},
                             {"masks", Kind::List, Json::array({"top_left", "top_right", "bottom_left", "bottom_right", "full"}),
                              "regions: corners, center, round, top, bottom, left, right, full"},
                             {"eval_batch", Kind::Int, 256, "evaluation batch size"}},
                            data_opts("validation", 100, 1))});
        c.push_back({"sweep", "craft and evaluate over a (c, n) x alpha grid",
                     concat(concat({{"model", Kind::Text, "desk_cnn_cifar10", "model id to attack"},
                                    {"grid", Kind::List, Json::array({"10,1", "10,10"}), "training sizes as c,n"},
                                    {"alphas", Kind::List, Json::array({"1", "8"}), "split ratios"},
                                    {"seeds", Kind::List, Json::array({"0", "1", "2"}), "crafting and sampling seeds"},
                                    {"train_dataset", Kind::Text, "desk10", "training source"},
                                    {"workers", Kind::Int, 1, "concurrent cells"},
                                    {"eval_batch", Kind::Int, 256, "evaluation batch size"}},
                                   attack_opts()),
                            data_opts("validation", 100, 1))});
        c.push_back({"render", "write the UAP and perturbed samples as PNG",
                     concat({{"artifact", Kind::Text, nullptr, "artifact file"},
                             {"samples", Kind::Int, 4, "perturbed sample pairs to write"}},
                            data_opts("validation", 1, 1))});
        c.push_back({"report", "re-aggregate JSONL outputs into summary tables",
                     {{"inputs", Kind::List, Json::array(), "JSONL files written by other subcommands"}}});
        return c;
    }();
    return cmds;
}

// ---------------------------------------------------------------------------
// Typed access to a resolved configuration, accumulating violations.

class Reader {
public:
    Reader(const Json& cfg, std::vector<std::string>& violations) : cfg_(cfg), v_(violations) {}

    bool present(const std::string& key) const { return cfg_.contains(key) && !cfg_.at(key).is_null(); }

    std::optional<long long> opt_integer(const std::string& key) {
        if (!present(key)) return std::nullopt;
        const Json& j = cfg_.at(key);
        if (j.is_number_integer()) return j.get<long long>();
        if (j.is_number_float() && j.get<double>() == std::floor(j.get<double>())) return j.get<long long>();
        if (j.is_string()) {
            try {
                std::size_t used = 0;
                const std::string s = j.get<std::string>();
                long long x = std::stoll(s, &used);
                if (used == s.size()) return x;
            } catch (const std::exception&) {
            }
        }
        v_.push_back(key + ": expected an integer, got " + j.dump());
        return std::nullopt;
    }

    int integer(const std::string& key, int fallback = 0) {
        if (!present(key)) {
            v_.push_back(key + ": required");
            return fallback;
        }
        auto x = opt_integer(key);
        return x ? static_cast<int>(*x) : fallback;
    }

    double real(const std::string& key, double fallback = 0.0) {
        if (!present(key)) {
            v_.push_back(key + ": required");
            return fallback;
        }
        const Json& j = cfg_.at(key);
        if (j.is_number()) return j.get<double>();
        if (j.is_string()) {
            try {
                return parse_epsilon(j.get<std::string>());
            } catch (const std::exception&) {
                try {
                    return std::stod(j.get<std::string>());
                } catch (const std::exception&) {
                }
            }
        }
        v_.push_back(key + ": expected a number, got " + j.dump());
        return fallback;
    }

    double epsilon(const std::string& key) {
        if (!present(key)) {
            v_.push_back(key + ": required");
            return 1.0;
        }
        const Json& j = cfg_.at(key);
        try {
            if (j.is_number()) {
                if (!(j.get<double>() > 0.0)) throw ValidationError("epsilon must be positive");
                return j.get<double>();
            }
            if (j.is_string()) return parse_epsilon(j.get<std::string>());
            throw ValidationError("expected a number or a fraction such as 10/255");
        } catch (const std::exception& e) {
            v_.push_back(key + ": " + e.what());
            return 1.0;
        }
    }

    std::string text(const std::string& key) {
        if (!present(key)) {
            v_.push_back(key + ": required");
            return "";
        }
        const Json& j = cfg_.at(key);
        if (j.is_string()) return j.get<std::string>();
        return j.dump();
    }

    std::optional<std::string> opt_text(const std::string& key) {
        if (!present(key)) return std::nullopt;
        return text(key);
    }

    bool flag(const std::string& key) {
        if (!present(key)) return false;
        const Json& j = cfg_.at(key);
        if (j.is_boolean()) return j.get<bool>();
        if (j.is_string()) {
            const auto s = j.get<std::string>();
            if (s == "true" || s == "1") return true;
            if (s == "false" || s == "0") return false;
        }
        v_.push_back(key + ": expected true or false, got " + j.dump());
        return false;
    }

    std::vector<std::string> list(const std::string& key) {
        std::vector<std::string> out;
        if (!present(key)) return out;
        const Json& j = cfg_.at(key);
        auto add = [&](const Json& e) { out.push_back(e.is_string() ? e.get<std::string>() : e.dump()); };
        if (j.is_array()) {
            for (const auto& e : j) add(e);
        } else {
            add(j);
        }
        return out;
    }

    template <typename F>
    auto parse(const std::string& key, F fn, decltype(fn(std::string())) fallback) {
        if (!present(key)) return fallback;
        const std::string s = text(key);
        try {
            return fn(s);
        } catch (const std::exception& e) {
            v_.push_back(key + ": " + e.what());
            return fallback;
        }
    }

    void positive(const std::string& key, long long value) {
        if (value < 1) v_.push_back(key + ": must be positive");
    }

private:
    const Json& cfg_;
    std::vector<std::string>& v_;
};

// ---------------------------------------------------------------------------
// Run directories

class RunDir {
public:
    RunDir(const Json& cfg, const std::string& command, const std::optional<std::string>& name) {
        const fs::path root = cfg.value("runs_dir", std::string("runs"));
        fs::create_directories(root);
        if (name) {
            dir_ = root / *name;
            if (!fs::create_directory(dir_)) {
                throw IoError("run directory '" + dir_.string() + "' already exists; refusing to overwrite");
            }
        } else {
            std::string stamp = utc_timestamp();
            stamp.erase(std::remove_if(stamp.begin(), stamp.end(), [](char ch) { return ch == '-' || ch == ':'; }),
                        stamp.end());
            const std::string base = command + "-" + stamp;
            for (int i = 0;; ++i) {
                dir_ = root / (i == 0 ? base : base + "-" + std::to_string(i));
                if (fs::create_directory(dir_)) break;
            }
        }
        Json snapshot = cfg;
        snapshot["command"] = command;
        write("config.json", snapshot.dump(2) + "\n");
        started_ = utc_timestamp();
        command_ = command;
        status("running");
    }

    const fs::path& path() const { return dir_; }
    std::string file(const std::string& name) const { return (dir_ / name).string(); }

    void write(const std::string& name, const std::string& content) const { write_file_atomic(file(name), content); }

    void status(const std::string& state, const Json& extra = Json::object()) const {
        Json s{{"command", command_}, {"status", state}, {"started", started_}};
        if (state != "running") s["finished"] = utc_timestamp();
        for (auto it = extra.begin(); it != extra.end(); ++it) s[it.key()] = it.value();
        write("status.json", s.dump(2) + "\n");
    }

private:
    fs::path dir_;
    std::string started_;
    std::string command_;
};

// ---------------------------------------------------------------------------
// Shared helpers

std::shared_ptr<const ClassifierAdapter> try_model(Reader&, std::vector<std::string>& v, const std::string& id) {
    try {
        return load_classifier(id);
    } catch (const std::exception& e) {
        v.push_back(std::string("model: ") + e.what());
        return nullptr;
    }
}

std::optional<UapArtifact> try_artifact(std::vector<std::string>& v, const std::string& key, const std::string& path) {
    try {
        return load_artifact(path);
    } catch (const FormatError& e) {
        throw FormatError(e.kind(), path + ": " + e.what());
    } catch (const IoError&) {
        throw;
    } catch (const std::exception& e) {
        v.push_back(key + ": " + e.what());
        return std::nullopt;
    }
}

struct DataArgs {
    std::string source;
    int classes = 0;
    int per_class = 0;
    Split split = Split::Validation;
    std::uint64_t seed = 0;
};

DataArgs read_data(Reader& r, const std::string& source_key = "dataset") {
    DataArgs d;
    d.source = r.text(source_key);
    d.classes = r.integer("classes", 1);
    r.positive("classes", d.classes);
    d.per_class = r.integer("per_class", 1);
    r.positive("per_class", d.per_class);
    d.split = r.parse("split", parse_split, Split::Validation);
    d.seed = static_cast<std::uint64_t>(r.integer("data_seed"));
    return d;
}

SampledDataset load_data(const DataArgs& d, std::pair<int, int> shape) {
    return sample_dataset(d.source, d.classes, d.per_class, d.split, d.seed, shape);
}

struct AttackArgs {
    AttackConfigFields fields;
    NormBudget budget{NormKind::Linf, 1.0};
};

AttackArgs read_attack(Reader& r, std::vector<std::string>& v) {
    AttackArgs a;
    auto& f = a.fields;
    const double eps = r.epsilon("epsilon");
    const NormKind p = r.parse("norm", parse_norm_kind, NormKind::Linf);
    a.budget = NormBudget(p, eps);
    f.epochs = r.integer("epochs", 1);
    f.batch_size = r.integer("batch_size", 1);
    f.loss = r.parse("loss", parse_loss_id, LossId::CrossEntropy);
    f.kappa = r.real("kappa");
    if (auto t = r.opt_integer("target")) f.target_label = static_cast<int>(*t);
    f.step_rule = r.parse("optimizer", parse_step_rule, StepRule::Adam);
    f.step_size = r.real("step_size", 0.01);
    f.seed = static_cast<std::uint64_t>(r.integer("seed"));
    f.data_free = r.flag("data_free");
    f.clamp_pixels = r.flag("clamp_pixels");
    f.label_source = r.parse("label_source", parse_label_source, LabelSource::GroundTruth);
    f.surrogate = r.parse("surrogate", parse_surrogate_kind, SurrogateKind::Uniform);
    f.surrogate_batches = r.integer("surrogate_batches", 1);
    if (r.present("init")) f.init = r.parse("init", parse_patch_init, PatchInit::Zero);
    for (auto& msg : attack_config_violations(f)) v.push_back(msg);
    return a;
}

void check_alpha(std::vector<std::string>& v, int alpha, const ModelInfo& info) {
    try {
        validate_tile_spec(alpha, info.input_h, info.input_w);
    } catch (const std::exception& e) {
        v.push_back(std::string("alpha: ") + e.what());
    }
}

void check_target(std::vector<std::string>& v, const std::optional<int>& target, const ModelInfo& info) {
    if (target && (*target < 0 || *target >= info.class_count)) {
        v.push_back("target: " + std::to_string(*target) + " is not a class of '" + info.model_id + "' (K = " +
                    std::to_string(info.class_count) + ")");
    }
}

void finish_validation(const std::vector<std::string>& v) {
    if (!v.empty()) throw ConfigError(v);
}

Json brief(const EvalReport& r) {
    Json j{{"target_model", r.target_model()}, {"n_evaluated", r.n_evaluated()}, {"fooling_ratio", r.fooling_ratio()}};
    if (auto t = r.targeted_fooling_ratio()) j["targeted_fooling_ratio"] = *t;
    return j;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_craft(const Json& cfg, const std::optional<std::string>& run_name, std::ostream& out) {
    std::vector<std::string> v;
    Reader r(cfg, v);
    const std::string model_id = r.text("model");
    const int alpha = r.integer("alpha", 1);
    r.positive("alpha", alpha);
    AttackArgs a = read_attack(r, v);
    const DataArgs data = read_data(r);
    auto model = try_model(r, v, model_id);
    if (model) {
        if (alpha >= 1) check_alpha(v, alpha, model->info());
        check_target(v, a.fields.target_label, model->info());
    }
    finish_validation(v);

    const TileSpec spec(alpha, model->info().input_h, model->info().input_w);
    const AttackConfig config(a.fields);
    std::optional<SampledDataset> train;
    if (!config.data_free()) train = load_data(data, {spec.image_h(), spec.image_w()});

    RunDir run(cfg, "craft", run_name);
    std::ofstream log(run.file("craft_log.jsonl"));
    CraftOptions opts;
    opts.cancel = &interrupt_flag();
    opts.observer = [&](const CraftState&, const CraftLogRecord& rec) { log << to_json(rec).dump() << "\n" << std::flush; };

    CraftResult result = [&] {
        try {
            return config.data_free() ? craft_data_free(*model, spec, a.budget, config, opts)
                                      : craft(*train, *model, spec, a.budget, config, opts);
        } catch (const std::exception& e) {
            log.flush();
            run.status("failed", {{"error", e.what()}});
            throw;
        }
    }();
    log.close();

    Json meta = artifact_metadata(spec, a.budget, config, model_id,
                                  train ? std::optional<DatasetSpec>(train->spec) : std::nullopt);
    meta["completed"] = result.completed;
    meta["iterations_run"] = result.log.size();
    const std::string artifact_path = run.file("artifact.uap");
    save_artifact(artifact_path, result.patch, spec, a.budget, meta);

    Json summary{{"run_dir", run.path().string()},
                 {"artifact", artifact_path},
                 {"completed", result.completed},
                 {"iterations", result.log.size()},
                 {"final_loss", result.log.empty() ? Json(nullptr) : Json(result.log.back().loss)},
                 {"norm", measure_norm(result.perturbation, a.budget)}};
    run.status(result.completed ? "complete" : "incomplete", {{"summary", summary}});
    out << summary.dump() << "\n";
    return result.completed ? kOk : kInterrupted;
}

int cmd_eval(const Json& cfg, const std::optional<std::string>& run_name, std::ostream& out) {
    std::vector<std::string> v;
    Reader r(cfg, v);
    const std::string path = r.text("artifact");
    auto art = path.empty() ? std::nullopt : try_artifact(v, "artifact", path);
    std::optional<std::string> model_id = r.opt_text("model");
    if (!model_id && art) model_id = art->metadata.value("source_model", std::string());
    std::optional<int> target;
    if (auto t = r.opt_integer("target")) {
        target = static_cast<int>(*t);
    } else if (art && art->metadata.contains("target_label") && art->metadata["target_label"].is_number()) {
        target = art->metadata["target_label"].get<int>();
    }
    const int eval_batch = r.integer("eval_batch", 256);
    r.positive("eval_batch", eval_batch);
    const DataArgs data = read_data(r);
    std::shared_ptr<const ClassifierAdapter> model;
    if (model_id) model = try_model(r, v, *model_id);
    if (model) check_target(v, target, model->info());
    finish_validation(v);

    const auto& info = model->info();
    const SampledDataset test = load_data(data, {info.input_h, info.input_w});
    const Perturbation delta = fit_perturbation(art->perturbation(), art->budget, info.input_h, info.input_w);
    RunDir run(cfg, "eval", run_name);
    const EvalReport report =
        evaluate_perturbation(delta, *model, test.images, test.ids, target, art->metadata, {eval_batch, true});
    Json rec = to_json(report);
    rec["artifact"] = path;
    rec["resized"] = delta.origin() == PerturbationOrigin::Resized;
    run.write("report.jsonl", rec.dump() + "\n");
    run.write("report.md", render_markdown(std::vector<std::pair<std::string, EvalReport>>{
                               {"alpha=" + std::to_string(art->spec.alpha()), report}}));
    Json summary = brief(report);
    summary["run_dir"] = run.path().string();
    run.status("complete", {{"summary", summary}});
    out << summary.dump() << "\n";
    return kOk;
}

int cmd_transfer(const Json& cfg, const std::optional<std::string>& run_name, std::ostream& out) {
    std::vector<std::string> v;
    Reader r(cfg, v);
    const auto paths = r.list("artifacts");
    const auto targets = r.list("models");
    if (paths.empty()) v.push_back("artifacts: at least one artifact is required");
    if (targets.empty()) v.push_back("models: at least one target model is required");
    std::vector<NamedArtifact> arts;
    for (const auto& p : paths) {
        if (auto a = try_artifact(v, "artifacts", p)) arts.push_back({p, std::move(*a)});
    }
    const int workers = r.integer("workers", 1);
    r.positive("workers", workers);
    const int eval_batch = r.integer("eval_batch", 256);
    r.positive("eval_batch", eval_batch);
    const DataArgs data = read_data(r);
    finish_validation(v);

    auto source = open_source(data.source);
    const DatasetSpec spec(data.source, source->class_count(), data.classes, data.per_class, data.split, data.seed);
    RunDir run(cfg, "transfer", run_name);
    SweepOptions opts;
    opts.workers = workers;
    opts.eval.eval_batch = eval_batch;
    const TransferMatrix m = transfer_sweep(arts, targets, spec, opts);
    run.write("transfer.jsonl", to_jsonl(m));
    run.write("transfer.md", render_markdown(m));
    int failed = 0;
    for (const auto& c : m.cells) failed += c.report ? 0 : 1;
    Json summary{{"run_dir", run.path().string()}, {"cells", m.cells.size()}, {"failed_cells", failed}};
    run.status("complete", {{"summary", summary}});
    out << render_markdown(m) << summary.dump() << "\n";
    return kOk;
}

int cmd_ablate(const Json& cfg, const std::optional<std::string>& run_name, std::ostream& out) {
    std::vector<std::string> v;
    Reader r(cfg, v);
    const std::string path = r.text("artifact");
    auto art = path.empty() ? std::nullopt : try_artifact(v, "artifact", path);
    std::optional<std::string> model_id = r.opt_text("model");
    if (!model_id && art) model_id = art->metadata.value("source_model", std::string());
    const int eval_batch = r.integer("eval_batch", 256);
    r.positive("eval_batch", eval_batch);
    const DataArgs data = read_data(r);
    std::vector<MaskRegion> regions;
    for (const auto& name : r.list("masks")) {
        try {
            const MaskKind kind = parse_mask_kind(name);
            if (art) regions.emplace_back(kind, art->spec);
        } catch (const std::exception& e) {
            v.push_back("masks: " + std::string(e.what()));
        }
    }
    std::shared_ptr<const ClassifierAdapter> model;
    if (model_id) model = try_model(r, v, *model_id);
    if (model && art && (model->info().input_h != art->spec.image_h() || model->info().input_w != art->spec.image_w())) {
        v.push_back("model: position ablation needs the artifact's own input size");
    }
    finish_validation(v);

    const SampledDataset test = load_data(data, {art->spec.image_h(), art->spec.image_w()});
    RunDir run(cfg, "ablate", run_name);
    const auto reports = position_ablation(*art, *model, test, regions, {eval_batch, true});
    std::string jsonl;
    std::vector<std::pair<std::string, EvalReport>> rows;
    Json summary{{"run_dir", run.path().string()}, {"regions", Json::object()}};
    for (std::size_t i = 0; i < reports.size(); ++i) {
        Json rec = to_json(reports[i]);
        rec["mask"] = to_string(regions[i].kind());
        jsonl += rec.dump() + "\n";
        rows.emplace_back(to_string(regions[i].kind()), reports[i]);
        summary["regions"][to_string(regions[i].kind())] = reports[i].fooling_ratio();
    }
    run.write("ablation.jsonl", jsonl);
    run.write("ablation.md", render_markdown(rows));
    run.status("complete", {{"summary", summary}});
    out << render_markdown(rows) << summary.dump() << "\n";
    return kOk;
}

int cmd_sweep(const Json& cfg, const std::optional<std::string>& run_name, std::ostream& out) {
    std::vector<std::string> v;
    Reader r(cfg, v);
    const std::string model_id = r.text("model");
    AttackArgs a = read_attack(r, v);
    const DataArgs data = read_data(r);
    const std::string train_source = r.text("train_dataset");
    const int workers = r.integer("workers", 1);
    r.positive("workers", workers);
    const int eval_batch = r.integer("eval_batch", 256);
    r.positive("eval_batch", eval_batch);

    std::vector<std::pair<int, int>> grid;
    for (const auto& g : r.list("grid")) {
        int c = 0;
        int n = 0;
        char sep = 0;
        std::istringstream is(g);
        if (!(is >> c >> sep >> n) || (sep != ',' && sep != 'x') || c < 1 || n < 1 || !is.eof()) {
            v.push_back("grid: '" + g + "' is not of the form c,n with positive integers");
        } else {
            grid.emplace_back(c, n);
        }
    }
    auto ints = [&](const std::string& key) {
        std::vector<long long> outv;
        for (const auto& s : r.list(key)) {
            try {
                std::size_t used = 0;
                long long x = std::stoll(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                outv.push_back(x);
            } catch (const std::exception&) {
                v.push_back(key + ": '" + s + "' is not an integer");
            }
        }
        if (outv.empty()) v.push_back(key + ": at least one value is required");
        return outv;
    };
    std::vector<int> alphas;
    for (auto x : ints("alphas")) alphas.push_back(static_cast<int>(x));
    std::vector<std::uint64_t> seeds;
    for (auto x : ints("seeds")) seeds.push_back(static_cast<std::uint64_t>(x));
    if (grid.empty()) v.push_back("grid: at least one c,n cell is required");

    auto model = try_model(r, v, model_id);
    if (model) {
        for (int al : alphas) check_alpha(v, al, model->info());
        check_target(v, a.fields.target_label, model->info());
    }
    finish_validation(v);

    const auto& info = model->info();
    const SampledDataset test = load_data(data, {info.input_h, info.input_w});
    RunDir run(cfg, "sweep", run_name);
    DataEfficiencyOptions opts;
    opts.source_id = train_source;
    opts.seeds = seeds;
    opts.workers = workers;
    opts.eval.eval_batch = eval_batch;
    const DataEfficiencyTable t =
        data_efficiency_sweep(grid, alphas, *model, a.budget, AttackConfig(a.fields), test, opts);
    run.write("sweep.jsonl", to_jsonl(t));
    run.write("sweep.md", render_markdown(t));
    int failed = 0;
    for (const auto& c : t.cells) failed += c.fooling_ratio ? 0 : 1;
    Json summary{{"run_dir", run.path().string()}, {"cells", t.cells.size()}, {"failed_cells", failed}};
    run.status("complete", {{"summary", summary}});
    out << render_markdown(t) << summary.dump() << "\n";
    return kOk;
}

int cmd_render(const Json& cfg, const std::optional<std::string>& run_name, std::ostream& out) {
    std::vector<std::string> v;
    Reader r(cfg, v);
    const std::string path = r.text("artifact");
    auto art = path.empty() ? std::nullopt : try_artifact(v, "artifact", path);
    const int samples = r.integer("samples", 0);
    if (samples < 0) v.push_back("samples: must be non-negative");
    const DataArgs data = read_data(r);
    finish_validation(v);

    std::optional<SampledDataset> ds;
    if (samples > 0) ds = load_data(data, {art->spec.image_h(), art->spec.image_w()});
    RunDir run(cfg, "render", run_name);
    VisualsOptions vo;
    vo.max_pairs = samples;
    const auto files = render_visuals(*art, ds ? &*ds : nullptr, run.path().string(), vo);
    Json summary{{"run_dir", run.path().string()}, {"files", files}};
    run.status("complete", {{"summary", summary}});
    out << summary.dump() << "\n";
    return kOk;
}

int cmd_report(const Json& cfg, const std::optional<std::string>& run_name, std::ostream& out) {
    std::vector<std::string> v;
    Reader r(cfg, v);
    const auto inputs = r.list("inputs");
    if (inputs.empty()) v.push_back("inputs: at least one JSONL file is required");
    for (const auto& p : inputs) {
        if (!fs::exists(p)) v.push_back("inputs: '" + p + "' does not exist");
    }
    finish_validation(v);

    std::vector<std::pair<std::string, EvalReport>> rows;
    TransferMatrix tm;
    DataEfficiencyTable dt;
    for (const auto& p : inputs) {
        std::istringstream lines(read_file(p));
        std::string line;
        int lineno = 0;
        while (std::getline(lines, line)) {
            ++lineno;
            if (line.empty()) continue;
            Json j;
            try {
                j = Json::parse(line);
            } catch (const std::exception& e) {
                throw FormatError(FormatError::Kind::Malformed,
                                  p + ":" + std::to_string(lineno) + ": not JSON (" + e.what() + ")");
            }
            if (j.contains("source") && j.contains("target")) {
                TransferCell cell;
                cell.source = j.at("source").get<std::string>();
                cell.target = j.at("target").get<std::string>();
                cell.alpha = j.value("alpha", 0);
                cell.resized = j.value("resized", false);
                if (!j.at("report").is_null()) cell.report = eval_report_from_json(j.at("report"));
                if (!j.at("error").is_null()) cell.error = j.at("error").get<std::string>();
                tm.cells.push_back(std::move(cell));
            } else if (j.contains("c") && j.contains("n") && j.contains("alpha")) {
                DataEfficiencyCell cell;
                cell.c = j.at("c").get<int>();
                cell.n = j.at("n").get<int>();
                cell.alpha = j.at("alpha").get<int>();
                cell.seed = j.value("seed", 0ull);
                cell.batch_size = j.value("batch_size", 0);
                if (!j.at("fooling_ratio").is_null()) cell.fooling_ratio = j.at("fooling_ratio").get<double>();
                if (j.contains("error") && !j.at("error").is_null()) cell.error = j.at("error").get<std::string>();
                dt.cells.push_back(cell);
            } else if (j.contains("samples")) {
                EvalReport rep = eval_report_from_json(j);
                std::string label = j.contains("mask") ? j.at("mask").get<std::string>()
                                                       : "alpha=" + std::to_string(rep.uap_metadata().value("alpha", 0));
                rows.emplace_back(label, std::move(rep));
            } else {
                throw FormatError(FormatError::Kind::Malformed,
                                  p + ":" + std::to_string(lineno) + ": unrecognized record");
            }
        }
    }

    auto add_unique = [](auto& vec, const auto& x) {
        if (std::find(vec.begin(), vec.end(), x) == vec.end()) vec.push_back(x);
    };
    std::string md;
    if (!rows.empty()) md += "## Reports\n\n" + render_markdown(rows) + "\n";
    if (!tm.cells.empty()) {
        for (const auto& c : tm.cells) {
            add_unique(tm.sources, c.source);
            add_unique(tm.targets, c.target);
        }
        std::vector<TransferCell> ordered;
        bool complete = true;
        for (const auto& s : tm.sources) {
            for (const auto& t : tm.targets) {
                auto it = std::find_if(tm.cells.begin(), tm.cells.end(),
                                       [&](const TransferCell& c) { return c.source == s && c.target == t; });
                if (it == tm.cells.end()) {
                    complete = false;
                    break;
                }
                ordered.push_back(*it);
            }
        }
        if (complete) {
            tm.cells = ordered;
            md += "## Transfer\n\n" + render_markdown(tm) + "\n";
        }
    }
    if (!dt.cells.empty()) {
        for (const auto& c : dt.cells) {
            add_unique(dt.grid, std::pair{c.c, c.n});
            add_unique(dt.alphas, c.alpha);
            add_unique(dt.seeds, c.seed);
        }
        md += "## Data efficiency\n\n" + render_markdown(dt) + "\n";
    }

    RunDir run(cfg, "report", run_name);
    run.write("report.md", md);
    std::string jsonl;
    for (const auto& [label, rep] : rows) {
        Json b = brief(rep);
        b["label"] = label;
        jsonl += b.dump() + "\n";
    }
    run.write("summary.jsonl", jsonl);
    run.status("complete");
    out << md;
    return kOk;
}

using Handler = int (*)(const Json&, const std::optional<std::string>&, std::ostream&);

Handler handler_for(const std::string& name) {
    static const std::map<std::string, Handler> table{
        {"craft", cmd_craft}, {"eval", cmd_eval},     {"transfer", cmd_transfer}, {"ablate", cmd_ablate},
        {"sweep", cmd_sweep}, {"render", cmd_render}, {"report", cmd_report}};
    return table.at(name);
}

struct Failure {
    int code;
    std::string kind;
    std::string message;
    std::vector<std::string> violations;
};

Failure classify(const std::exception& e) {
    if (auto* c = dynamic_cast<const ConfigError*>(&e)) return {kUsage, "config", c->what(), c->violations()};
    if (auto* f = dynamic_cast<const FormatError*>(&e)) return {kIo, "format", f->what(), {}};
    if (dynamic_cast<const ValidationError*>(&e)) return {kUsage, "validation", e.what(), {}};
    if (dynamic_cast<const ShapeError*>(&e)) return {kUsage, "shape", e.what(), {}};
    if (dynamic_cast<const RegistryError*>(&e)) return {kRegistry, "registry", e.what(), {}};
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) {
        return {kIo, "io", e.what(), {}};
    }
    if (dynamic_cast<const NumericError*>(&e)) return {kNumeric, "numeric", e.what(), {}};
    return {kFailure, "internal", e.what(), {}};
}

void report_failure(std::ostream& err, const Failure& f) {
    Json j{{"error", {{"kind", f.kind}, {"message", f.message}, {"exit_code", f.code}}}};
    if (!f.violations.empty()) j["error"]["violations"] = f.violations;
    err << j.dump() << "\n";
}

}  // namespace

std::vector<std::string> subcommands() {
    std::vector<std::string> out;
    for (const auto& c : commands()) out.push_back(c.name);
    return out;
}

void install_signal_handlers() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Tiled universal adversarial perturbation toolkit", "tscuap"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", toolkit_version());

    struct Bound {
        const Command* cmd;
        CLI::App* app;
        std::string config_path;
        std::string run_name;
        std::string runs_dir;
        std::map<std::string, std::string> text;
        std::map<std::string, std::vector<std::string>> lists;
        std::map<std::string, bool> flags;
        std::map<std::string, CLI::Option*> options;
        std::map<std::string, Kind> kinds;
    };
    std::vector<std::unique_ptr<Bound>> bound;
    for (const auto& cmd : commands()) {
        auto b = std::make_unique<Bound>();
        b->cmd = &cmd;
        b->app = app.add_subcommand(cmd.name, cmd.help);
        b->app->add_option("--config", b->config_path, "JSON config file (flags override it)");
        b->app->add_option("--run-name", b->run_name, "run directory name (must not exist)");
        b->options["runs_dir"] = b->app->add_option("--runs-dir", b->runs_dir, "parent of run directories [runs]");
        for (const auto& o : cmd.opts) {
            const std::string name = flag_name(o.key);
            b->kinds[o.key] = o.kind;
            std::string help = o.help;
            if (!o.def.is_null() && !(o.def.is_array() && o.def.empty())) help += " [" + o.def.dump() + "]";
            switch (o.kind) {
                case Kind::Flag:
                    b->options[o.key] = b->app->add_flag(name + ",!--no-" + name.substr(2), b->flags[o.key], help);
                    break;
                case Kind::List:
                    b->options[o.key] = b->app->add_option(name, b->lists[o.key], help);
                    break;
                default:
                    b->options[o.key] = b->app->add_option(name, b->text[o.key], help)->type_name(
                        o.kind == Kind::Int ? "INT" : o.kind == Kind::Real ? "FLOAT" : "TEXT");
                    break;
            }
        }
        bound.push_back(std::move(b));
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::Success& e) {
        // --help and --version
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        report_failure(err, {kUsage, "usage", e.what(), {}});
        return kUsage;
    }

    Bound* sel = nullptr;
    for (const auto& b : bound) {
        if (b->app->parsed()) sel = b.get();
    }
    if (!sel) {
        report_failure(err, {kUsage, "usage", "a subcommand is required: craft, eval, transfer, ablate, sweep, render, report", {}});
        return kUsage;
    }

    try {
        // defaults < config file < flags
        Json cfg = Json::object();
        cfg["runs_dir"] = "runs";
        for (const auto& o : sel->cmd->opts) cfg[o.key] = o.def;
        std::vector<std::string> violations;
        if (!sel->config_path.empty()) {
            Json file;
            try {
                file = Json::parse(read_file(sel->config_path));
            } catch (const std::exception& e) {
                throw ConfigError({"config: cannot read '" + sel->config_path + "': " + e.what()});
            }
            if (!file.is_object()) throw ConfigError({"config: top level must be a JSON object"});
            for (auto it = file.begin(); it != file.end(); ++it) {
                std::string key = it.key();
                std::replace(key.begin(), key.end(), '-', '_');
                if (key == "command") {
                    if (it.value() != sel->cmd->name) {
                        violations.push_back("config: written for '" + it.value().dump() + "', not '" +
                                             sel->cmd->name + "'");
                    }
                    continue;
                }
                if (!cfg.contains(key)) {
                    violations.push_back("config: unknown key '" + it.key() + "' for " + sel->cmd->name);
                    continue;
                }
                cfg[key] = it.value();
            }
        }
        for (const auto& [key, opt] : sel->options) {
            if (opt->count() == 0) continue;
            if (sel->flags.count(key)) {
                cfg[key] = sel->flags[key];
            } else if (sel->lists.count(key)) {
                cfg[key] = sel->lists[key];
            } else if (key == "runs_dir") {
                cfg[key] = sel->runs_dir;
            } else {
                cfg[key] = typed_flag(sel->text[key], sel->kinds[key]);
            }
        }
        finish_validation(violations);
        std::optional<std::string> run_name;
        if (!sel->run_name.empty()) run_name = sel->run_name;
        return handler_for(sel->cmd->name)(cfg, run_name, out);
    } catch (const std::exception& e) {
        const Failure f = classify(e);
        report_failure(err, f);
        return f.code;
    }
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace tscuap::cli
