#include "tscuap/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace tscuap {

namespace {

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

std::string source_of(const Json& meta) {
    if (meta.is_object() && meta.contains("source_model") && meta["source_model"].is_string()) {
        return meta["source_model"].get<std::string>();
    }
    return "";
}

ImageBatch slice(const ImageBatch& images, int begin, int end) {
    ImageBatch out(end - begin, images.h, images.w, images.c);
    const std::size_t s = images.sample_size();
    std::copy(images.data.begin() + begin * s, images.data.begin() + end * s, out.data.begin());
    return out;
}

}  // namespace

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, count));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first) first = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

EvalReport evaluate_perturbation(const Perturbation& delta, const ClassifierAdapter& model,
                                 const ImageBatch& images, const std::vector<std::string>& ids,
                                 std::optional<int> target_label, const Json& uap_metadata,
                                 const EvalOptions& options) {
    if (images.n == 0) throw ValidationError("cannot evaluate on an empty test set");
    if (static_cast<int>(ids.size()) != images.n) throw ShapeError("one id per test image is required");
    const Array3& d = delta.values();
    if (d.h != images.h || d.w != images.w || d.c != images.c) {
        throw ShapeError("perturbation (" + std::to_string(d.h) + ", " + std::to_string(d.w) + ", " +
                         std::to_string(d.c) + ") does not match test images (" + std::to_string(images.h) + ", " +
                         std::to_string(images.w) + ", " + std::to_string(images.c) + "); resize it first");
    }
    if (target_label && (*target_label < 0 || *target_label >= model.info().class_count)) {
        throw ValidationError("target label " + std::to_string(*target_label) + " is not a class of '" +
                              model.info().model_id + "'");
    }
    const int step = std::max(1, options.eval_batch);
    std::vector<EvalReport::Sample> samples;
    samples.reserve(images.n);
    for (int begin = 0; begin < images.n; begin += step) {
        const int end = std::min(images.n, begin + step);
        ImageBatch clean = slice(images, begin, end);
        ImageBatch adv = clean;
        const std::size_t s = adv.sample_size();
        for (int b = 0; b < adv.n; ++b) {
            float* px = adv.data.data() + b * s;
            for (std::size_t i = 0; i < s; ++i) {
                const float v = px[i] + d.data[i];
                px[i] = options.clamp_pixels ? std::clamp(v, 0.0f, 1.0f) : v;
            }
        }
        const auto y_clean = argmax_rows(model.logits(clean));
        const auto y_adv = argmax_rows(
            model.logits(adv, options.clamp_pixels ? RangeCheck::Enforce : RangeCheck::Skip));
        for (int b = 0; b < clean.n; ++b) samples.push_back({ids[begin + b], y_clean[b], y_adv[b]});
    }
    return EvalReport(std::move(samples), target_label, source_of(uap_metadata), model.info().model_id, uap_metadata);
}

EvalReport fooling_ratio(const Perturbation& delta, const ClassifierAdapter& model, const SampledDataset& testset,
                         const Json& uap_metadata, const EvalOptions& options) {
    return evaluate_perturbation(delta, model, testset.images, testset.ids, std::nullopt, uap_metadata, options);
}

EvalReport targeted_fooling_ratio(const Perturbation& delta, const ClassifierAdapter& model,
                                  const SampledDataset& testset, int target_label, const Json& uap_metadata,
                                  const EvalOptions& options) {
    return evaluate_perturbation(delta, model, testset.images, testset.ids, target_label, uap_metadata, options);
}

Perturbation fit_perturbation(const Perturbation& delta, const NormBudget& budget, int h, int w) {
    if (delta.h() == h && delta.w() == w) return delta;
    std::optional<double> eps;
    if (budget.p() == NormKind::Linf) eps = budget.epsilon();
    return resize_perturbation(delta, h, w, eps);
}

// ---------------------------------------------------------------------------

TransferMatrix transfer_sweep(const std::vector<NamedArtifact>& artifacts, const std::vector<std::string>& targets,
                              const DatasetSpec& testset_spec, const SweepOptions& options) {
    TransferMatrix out;
    for (const auto& a : artifacts) out.sources.push_back(a.id);
    out.targets = targets;
    out.cells.resize(artifacts.size() * targets.size());

    ModelLoader loader = options.loader ? options.loader : [](const std::string& id) { return load_classifier(id); };

    // Models and test sets are loaded once, up front, so workers only read.
    std::vector<std::shared_ptr<const ClassifierAdapter>> models(targets.size());
    std::vector<std::string> model_errors(targets.size());
    std::map<std::pair<int, int>, std::shared_ptr<SampledDataset>> testsets;
    std::map<std::pair<int, int>, std::string> testset_errors;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        try {
            models[t] = loader(targets[t]);
            const std::pair shape{models[t]->info().input_h, models[t]->info().input_w};
            if (!testsets.count(shape) && !testset_errors.count(shape)) {
                try {
                    testsets[shape] = std::make_shared<SampledDataset>(sample_dataset(testset_spec, shape));
                } catch (const std::exception& e) {
                    testset_errors[shape] = e.what();
                }
            }
        } catch (const std::exception& e) {
            model_errors[t] = e.what();
        }
    }

    parallel_for(static_cast<int>(out.cells.size()), options.workers, [&](int idx) {
        const std::size_t row = idx / targets.size();
        const std::size_t col = idx % targets.size();
        const auto& art = artifacts[row];
        TransferCell& cell = out.cells[idx];
        cell.source = art.id;
        cell.target = targets[col];
        cell.alpha = art.artifact.spec.alpha();
        try {
            if (!models[col]) throw RegistryError(model_errors[col]);
            const auto& info = models[col]->info();
            const std::pair shape{info.input_h, info.input_w};
            if (testset_errors.count(shape)) throw ValidationError(testset_errors.at(shape));
            const Perturbation delta =
                fit_perturbation(art.artifact.perturbation(), art.artifact.budget, info.input_h, info.input_w);
            cell.resized = delta.origin() == PerturbationOrigin::Resized;
            std::optional<int> target;
            if (art.artifact.metadata.contains("target_label") && art.artifact.metadata["target_label"].is_number()) {
                target = art.artifact.metadata["target_label"].get<int>();
                if (*target >= info.class_count) target.reset();
            }
            const auto& ts = *testsets.at(shape);
            cell.report = evaluate_perturbation(delta, *models[col], ts.images, ts.ids, target, art.artifact.metadata,
                                                options.eval);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    });
    return out;
}

// ---------------------------------------------------------------------------

std::vector<EvalReport> position_ablation(const UapArtifact& artifact, const ClassifierAdapter& model,
                                          const SampledDataset& testset, const std::vector<MaskRegion>& regions,
                                          const EvalOptions& options) {
    const Perturbation full = artifact.perturbation();
    std::vector<EvalReport> out;
    for (const auto& region : regions) {
        if (!(region.grid() == artifact.spec)) {
            throw ValidationError("mask region '" + to_string(region.kind()) + "' is defined on alpha " +
                                  std::to_string(region.grid().alpha()) + " but the artifact uses alpha " +
                                  std::to_string(artifact.spec.alpha()));
        }
        Json meta = artifact.metadata;
        meta["mask"] = to_string(region.kind());
        out.push_back(fooling_ratio(mask_blocks(full, region), model, testset, meta, options));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::optional<double> DataEfficiencyTable::median(std::pair<int, int> cn, int alpha) const {
    std::vector<double> v;
    for (const auto& c : cells) {
        if (c.c == cn.first && c.n == cn.second && c.alpha == alpha && c.fooling_ratio) v.push_back(*c.fooling_ratio);
    }
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

DataEfficiencyTable data_efficiency_sweep(const std::vector<std::pair<int, int>>& grid,
                                          const std::vector<int>& alphas, const ClassifierAdapter& model,
                                          const NormBudget& budget, const AttackConfig& config,
                                          const SampledDataset& testset, const DataEfficiencyOptions& options) {
    DataEfficiencyTable table{grid, alphas, options.seeds, {}};
    for (auto cn : grid)
        for (int a : alphas)
            for (auto s : options.seeds) table.cells.push_back({cn.first, cn.second, a, s, 0, std::nullopt, ""});

    const std::pair shape{model.info().input_h, model.info().input_w};
    parallel_for(static_cast<int>(table.cells.size()), options.workers, [&](int idx) {
        DataEfficiencyCell& cell = table.cells[idx];
        try {
            const SampledDataset train =
                sample_dataset(options.source_id, cell.c, cell.n, Split::Train, cell.seed, shape);
            AttackConfigFields f = config.fields();
            f.seed = cell.seed;
            if (options.shrink_batch) f.batch_size = std::min(f.batch_size, train.size());
            cell.batch_size = f.batch_size;
            const TileSpec spec(cell.alpha, shape.first, shape.second);
            const CraftResult r = craft(train, model, spec, budget, AttackConfig(f));
            cell.fooling_ratio = fooling_ratio(r.perturbation, model, testset, Json::object(), options.eval)
                                     .fooling_ratio();
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    });
    return table;
}

// ---------------------------------------------------------------------------

Json to_json(const TransferCell& cell) {
    Json j{{"source", cell.source}, {"target", cell.target}, {"alpha", cell.alpha}, {"resized", cell.resized}};
    j["report"] = cell.report ? to_json(*cell.report) : Json(nullptr);
    j["error"] = cell.error.empty() ? Json(nullptr) : Json(cell.error);
    return j;
}

Json to_json(const DataEfficiencyCell& cell) {
    return {{"c", cell.c},
            {"n", cell.n},
            {"alpha", cell.alpha},
            {"seed", cell.seed},
            {"batch_size", cell.batch_size},
            {"fooling_ratio", cell.fooling_ratio ? Json(*cell.fooling_ratio) : Json(nullptr)},
            {"error", cell.error.empty() ? Json(nullptr) : Json(cell.error)}};
}

std::string to_jsonl(const TransferMatrix& m) {
    std::string out;
    for (const auto& c : m.cells) out += to_json(c).dump() + "\n";
    return out;
}

std::string to_jsonl(const DataEfficiencyTable& t) {
    std::string out;
    for (const auto& c : t.cells) out += to_json(c).dump() + "\n";
    return out;
}

std::string render_markdown(const TransferMatrix& m) {
    std::ostringstream os;
    os << "| source | alpha |";
    for (const auto& t : m.targets) os << " " << t << " |";
    os << "\n|---|---|";
    for (std::size_t i = 0; i < m.targets.size(); ++i) os << "---|";
    os << "\n";
    for (std::size_t r = 0; r < m.sources.size(); ++r) {
        os << "| " << m.sources[r] << " | " << (m.targets.empty() ? 0 : m.at(r, 0).alpha) << " |";
        for (std::size_t c = 0; c < m.targets.size(); ++c) {
            const auto& cell = m.at(r, c);
            os << " " << (cell.report ? percent(cell.report->fooling_ratio()) : std::string("error")) << " |";
        }
        os << "\n";
    }
    return os.str();
}

std::string render_markdown(const DataEfficiencyTable& t) {
    std::ostringstream os;
    os << "| alpha |";
    for (auto [c, n] : t.grid) os << " (" << c << "," << n << ") |";
    os << "\n|---|";
    for (std::size_t i = 0; i < t.grid.size(); ++i) os << "---|";
    os << "\n";
    for (int a : t.alphas) {
        os << "| " << a << " |";
        for (auto cn : t.grid) {
            const auto m = t.median(cn, a);
            os << " " << (m ? percent(*m) : std::string("n/a")) << " |";
        }
        os << "\n";
    }
    return os.str();
}

std::string render_markdown(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::ostringstream os;
    os << "| run | target | N | FR (%) | TFR (%) |\n|---|---|---|---|---|\n";
    for (const auto& [label, r] : rows) {
        const auto tfr = r.targeted_fooling_ratio();
        os << "| " << label << " | " << r.target_model() << " | " << r.n_evaluated() << " | "
           << percent(r.fooling_ratio()) << " | " << (tfr ? percent(*tfr) : std::string("-")) << " |\n";
    }
    return os.str();
}

}  // namespace tscuap
