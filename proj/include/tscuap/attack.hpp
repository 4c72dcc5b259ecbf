#pragma once

// The crafting loop: sample batches, tile the patch, backpropagate the loss
// through the classifier to the patch, take an optimizer step and project
// back onto the budget.

#include <atomic>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "tscuap/core.hpp"
#include "tscuap/datasets.hpp"
#include "tscuap/modelzoo.hpp"

namespace tscuap {

struct CraftLogRecord {
    int epoch = 0;
    int iteration = 0;
    double loss = 0.0;       // the loss head's own value
    double objective = 0.0;  // the minimized value
    double norm = 0.0;       // tiled perturbation norm after projection
    double wall_ms = 0.0;
};

using CraftLog = std::vector<CraftLogRecord>;

Json to_json(const CraftLogRecord& r);

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
    int t = 0;
};

struct CraftState {
    Patch patch;
    TileSpec spec;
    NormBudget budget;
    AttackConfig config;
    int epoch = 0;
    int iteration = 0;
    AdamMoments adam;
    std::mt19937_64 rng;
};

/// Initial state: zero patch (or uniform in the budget when the config asks
/// for it), fresh optimizer moments, rng seeded from config.seed.
CraftState initial_state(const TileSpec& spec, const NormBudget& budget, const AttackConfig& config,
                         int channels);

/// One optimizer update on a minimize-form gradient followed by projection.
/// Throws NumericError for non-finite gradients, ShapeError on shape mismatch.
CraftState step(CraftState state, const Array3& gradient_on_patch);

/// Tiled norm of the state's perturbation, and the budget check applied
/// after every iteration.
double tiled_norm(const CraftState& state);
bool within_budget(const CraftState& state);

struct CraftOptions {
    /// Called after every iteration with the post-step state.
    std::function<void(const CraftState&, const CraftLogRecord&)> observer;
    /// Polled between iterations; a set flag stops the run early.
    const std::atomic<bool>* cancel = nullptr;
};

struct CraftResult {
    Patch patch;
    Perturbation perturbation;
    CraftLog log;
    bool completed = true;
};

/// Objective value and patch gradient for one batch. Exposed for gradient
/// checks; `labels` may be empty for cos_sim.
struct PatchGradient {
    double loss = 0.0;
    double objective = 0.0;
    Array3 grad;
};
PatchGradient patch_gradient(const ClassifierAdapter& model, const Patch& patch, const TileSpec& spec,
                             const AttackConfig& config, const ImageBatch& batch,
                             const std::vector<int>& labels);

CraftResult craft(const SampledDataset& data, const ClassifierAdapter& model, const TileSpec& spec,
                  const NormBudget& budget, const AttackConfig& config, const CraftOptions& options = {});

/// Loads the dataset (resized to the model input) and crafts on it.
CraftResult craft(const DatasetSpec& dataset, const ClassifierAdapter& model, const TileSpec& spec,
                  const NormBudget& budget, const AttackConfig& config, const CraftOptions& options = {});

/// Same loop on synthesized surrogate inputs; each epoch runs
/// config.surrogate_batches iterations of batch_size surrogates.
CraftResult craft_data_free(const ClassifierAdapter& model, const TileSpec& spec, const NormBudget& budget,
                            const AttackConfig& config, const CraftOptions& options = {});

/// A surrogate batch as used by craft_data_free.
ImageBatch surrogate_batch(SurrogateKind kind, const ModelInfo& info, int count, std::mt19937_64& rng);

}  // namespace tscuap
