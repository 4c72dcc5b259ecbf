#include "tscuap/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tscuap/losses.hpp"
#include "tscuap/tiling.hpp"

namespace tscuap {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kL2Slack = 1e-6;

void check_model(const ClassifierAdapter& model, const TileSpec& spec, const AttackConfig& config) {
    const auto& info = model.info();
    if (info.input_h != spec.image_h() || info.input_w != spec.image_w()) {
        throw ShapeError("model '" + info.model_id + "' expects " + std::to_string(info.input_h) + "x" +
                         std::to_string(info.input_w) + " inputs, tile spec is " + std::to_string(spec.image_h()) +
                         "x" + std::to_string(spec.image_w()));
    }
    if (!info.grad_capable) throw ValidationError("model '" + info.model_id + "' cannot be used for crafting");
    config.check_against_classes(info.class_count);
}

ImageBatch compose(const ImageBatch& x, const Perturbation& delta, bool clamp, std::vector<char>* pass) {
    ImageBatch out = x;
    const auto& d = delta.values().data;
    const std::size_t s = x.sample_size();
    if (pass) pass->assign(out.data.size(), 1);
    for (int b = 0; b < x.n; ++b) {
        float* px = out.data.data() + b * s;
        for (std::size_t i = 0; i < s; ++i) {
            const float v = px[i] + d[i];
            if (clamp) {
                if (pass && (v < 0.0f || v > 1.0f)) (*pass)[b * s + i] = 0;
                px[i] = std::clamp(v, 0.0f, 1.0f);
            } else {
                px[i] = v;
            }
        }
    }
    return out;
}

Patch initial_patch(const TileSpec& spec, const NormBudget& budget, PatchInit init, int channels,
                    std::mt19937_64& rng) {
    Patch zero = new_patch(spec, channels);
    if (init == PatchInit::Zero) return zero;
    Array3 v = zero.values();
    const double eps = budget.p() == NormKind::Linf ? budget.epsilon()
                                                    : budget.epsilon() / (spec.alpha() * std::sqrt(double(v.size())));
    std::uniform_real_distribution<double> u(-eps, eps);
    for (float& x : v.data) x = static_cast<float>(u(rng));
    return project(Patch(std::move(v)), spec, budget);
}

class Timer {
public:
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

using BatchSource = std::function<ImageBatch(CraftState&, int iteration, std::vector<int>& labels)>;

CraftResult run_loop(const ClassifierAdapter& model, const TileSpec& spec, const NormBudget& budget,
                     const AttackConfig& config, int iterations_per_epoch, const BatchSource& next_batch,
                     const CraftOptions& options) {
    CraftState state = initial_state(spec, budget, config, model.info().channels);
    CraftResult result{state.patch, tile(state.patch, spec), {}, true};
    Timer timer;
    std::vector<int> labels;
    for (int e = 0; e < config.epochs(); ++e) {
        state.epoch = e;
        for (int it = 0; it < iterations_per_epoch; ++it) {
            if (options.cancel && options.cancel->load()) {
                result.completed = false;
                break;
            }
            state.iteration = it;
            const ImageBatch batch = next_batch(state, it, labels);
            PatchGradient pg = patch_gradient(model, state.patch, spec, config, batch, labels);
            if (!std::isfinite(pg.objective)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(e) + ", iteration " +
                                   std::to_string(it) + " (loss " + to_string(config.loss()) + ")");
            }
            state = step(std::move(state), pg.grad);
            const double norm = tiled_norm(state);
            if (!within_budget(state)) {
                throw NumericError("budget violated after epoch " + std::to_string(e) + ", iteration " +
                                   std::to_string(it) + ": norm " + std::to_string(norm));
            }
            CraftLogRecord rec{e, it, pg.loss, pg.objective, norm, timer.ms()};
            result.log.push_back(rec);
            if (options.observer) options.observer(state, rec);
        }
        if (!result.completed) break;
    }
    result.patch = state.patch;
    result.perturbation = tile(state.patch, spec);
    return result;
}

}  // namespace

Json to_json(const CraftLogRecord& r) {
    return {{"epoch", r.epoch},   {"iteration", r.iteration}, {"loss", r.loss},
            {"objective", r.objective}, {"norm", r.norm}, {"wall_ms", r.wall_ms}};
}

CraftState initial_state(const TileSpec& spec, const NormBudget& budget, const AttackConfig& config,
                         int channels) {
    std::mt19937_64 rng(config.seed());
    Patch patch = initial_patch(spec, budget, config.init(), channels, rng);
    CraftState s{std::move(patch), spec, budget, config, 0, 0, {}, rng};
    s.adam.m.assign(s.patch.values().size(), 0.0);
    s.adam.v.assign(s.patch.values().size(), 0.0);
    return s;
}

CraftState step(CraftState state, const Array3& g) {
    const Array3& cur = state.patch.values();
    if (!g.same_shape(cur)) throw ShapeError("gradient shape does not match the patch");
    for (float x : g.data) {
        if (!std::isfinite(x)) throw NumericError("non-finite gradient on the patch");
    }
    Array3 next = cur;
    const double s = state.config.step_size();
    if (state.config.step_rule() == StepRule::SignStep) {
        for (std::size_t i = 0; i < next.data.size(); ++i) {
            const float gi = g.data[i];
            const double sign = gi > 0 ? 1.0 : (gi < 0 ? -1.0 : 0.0);
            next.data[i] = static_cast<float>(cur.data[i] - s * sign);
        }
    } else {
        auto& a = state.adam;
        if (a.m.size() != next.data.size()) {
            a.m.assign(next.data.size(), 0.0);
            a.v.assign(next.data.size(), 0.0);
        }
        ++a.t;
        const double c1 = 1.0 - std::pow(kBeta1, a.t);
        const double c2 = 1.0 - std::pow(kBeta2, a.t);
        for (std::size_t i = 0; i < next.data.size(); ++i) {
            const double gi = g.data[i];
            a.m[i] = kBeta1 * a.m[i] + (1.0 - kBeta1) * gi;
            a.v[i] = kBeta2 * a.v[i] + (1.0 - kBeta2) * gi * gi;
            const double mhat = a.m[i] / c1;
            const double vhat = a.v[i] / c2;
            next.data[i] = static_cast<float>(cur.data[i] - s * mhat / (std::sqrt(vhat) + kAdamEps));
        }
    }
    state.patch = project(Patch(std::move(next)), state.spec, state.budget);
    return state;
}

double tiled_norm(const CraftState& state) {
    const double n = measure_norm(state.patch.values(), state.budget.p());
    return state.budget.p() == NormKind::Linf ? n : n * state.spec.alpha();
}

bool within_budget(const CraftState& state) {
    const double n = tiled_norm(state);
    return state.budget.p() == NormKind::Linf ? n <= state.budget.epsilon()
                                              : n <= state.budget.epsilon() + kL2Slack;
}

PatchGradient patch_gradient(const ClassifierAdapter& model, const Patch& patch, const TileSpec& spec,
                             const AttackConfig& config, const ImageBatch& batch, const std::vector<int>& labels) {
    const Perturbation delta = tile(patch, spec);
    const Objective objective(config.loss(), config.kappa(), config.target_label());

    std::optional<LogitsBatch> clean;
    if (objective.needs_clean_logits()) clean.emplace(model.logits(batch, RangeCheck::Skip));

    std::optional<std::vector<int>> batch_labels;
    if (objective.needs_labels()) {
        if (config.label_source() == LabelSource::CleanPrediction || labels.empty()) {
            batch_labels = argmax_rows(clean ? clean->values : model.logits(batch, RangeCheck::Skip));
        } else {
            batch_labels = labels;
        }
    }

    std::vector<char> pass;
    const ImageBatch adv = compose(batch, delta, config.clamp_pixels(), config.clamp_pixels() ? &pass : nullptr);

    PatchGradient out;
    auto head = [&](const Logits& z) {
        LogitsBatch adv_logits(z, batch_labels);
        auto r = objective.evaluate(adv_logits, clean ? &*clean : nullptr);
        out.loss = r.loss;
        out.objective = r.objective;
        return r.grad;
    };
    Backprop bp = model.backprop(adv, head, RangeCheck::Skip);

    Array3 image_grad(spec.image_h(), spec.image_w(), patch.channels());
    const std::size_t s = bp.input_grad.sample_size();
    for (int b = 0; b < bp.input_grad.n; ++b) {
        const float* g = bp.input_grad.data.data() + b * s;
        for (std::size_t i = 0; i < s; ++i) {
            if (pass.empty() || pass[b * s + i]) image_grad.data[i] += g[i];
        }
    }
    out.grad = tile_adjoint(image_grad, spec);
    return out;
}

CraftResult craft(const SampledDataset& data, const ClassifierAdapter& model, const TileSpec& spec,
                  const NormBudget& budget, const AttackConfig& config, const CraftOptions& options) {
    check_model(model, spec, config);
    if (config.data_free()) return craft_data_free(model, spec, budget, config, options);
    const int n = data.size();
    if (n == 0) throw ValidationError("crafting dataset is empty");
    if (n < config.batch_size()) {
        throw ValidationError("crafting dataset has " + std::to_string(n) + " samples, fewer than batch size " +
                              std::to_string(config.batch_size()));
    }
    if (data.images.h != spec.image_h() || data.images.w != spec.image_w() ||
        data.images.c != model.info().channels) {
        throw ShapeError("dataset images do not match the model input shape");
    }
    const int m = config.batch_size();
    const int iterations = n / m;
    std::vector<int> order(n);
    BatchSource next = [&](CraftState& st, int it, std::vector<int>& labels) {
        if (it == 0) {
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), st.rng);
        }
        std::span<const int> idx(order.data() + static_cast<std::size_t>(it) * m, m);
        labels.clear();
        for (int i : idx) labels.push_back(data.labels[i]);
        return data.gather(idx);
    };
    return run_loop(model, spec, budget, config, iterations, next, options);
}

CraftResult craft(const DatasetSpec& dataset, const ClassifierAdapter& model, const TileSpec& spec,
                  const NormBudget& budget, const AttackConfig& config, const CraftOptions& options) {
    if (config.data_free()) return craft_data_free(model, spec, budget, config, options);
    const SampledDataset data = sample_dataset(dataset, std::pair{model.info().input_h, model.info().input_w});
    return craft(data, model, spec, budget, config, options);
}

ImageBatch surrogate_batch(SurrogateKind kind, const ModelInfo& info, int count, std::mt19937_64& rng) {
    ImageBatch out(count, info.input_h, info.input_w, info.channels);
    if (kind == SurrogateKind::Uniform) {
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (float& v : out.data) v = u(rng);
    } else {
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            const int k = static_cast<int>(i % info.channels);
            out.data[i] = info.mean.empty() ? 0.5f : std::clamp(info.mean[k], 0.0f, 1.0f);
        }
    }
    return out;
}

CraftResult craft_data_free(const ClassifierAdapter& model, const TileSpec& spec, const NormBudget& budget,
                            const AttackConfig& config, const CraftOptions& options) {
    if (!config.data_free()) throw ValidationError("craft_data_free requires data_free = true");
    check_model(model, spec, config);
    BatchSource next = [&](CraftState& st, int, std::vector<int>& labels) {
        labels.clear();
        return surrogate_batch(config.surrogate(), model.info(), config.batch_size(), st.rng);
    };
    return run_loop(model, spec, budget, config, config.surrogate_batches(), next, options);
}

}  // namespace tscuap
