#pragma once

// Fooling-ratio metrics and the sweeps built on them: transfer matrices,
// position ablations and (c, n) x alpha data-efficiency grids.
//
// The reference label is always the model's clean prediction; dataset
// labels are never consulted for FR.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tscuap/artifact.hpp"
#include "tscuap/attack.hpp"
#include "tscuap/core.hpp"
#include "tscuap/datasets.hpp"
#include "tscuap/modelzoo.hpp"
#include "tscuap/tiling.hpp"

namespace tscuap {

struct EvalOptions {
    int eval_batch = 256;  // throughput only
    bool clamp_pixels = true;
};

/// Clean and perturbed predictions over a batch, as one report.
EvalReport evaluate_perturbation(const Perturbation& delta, const ClassifierAdapter& model,
                                 const ImageBatch& images, const std::vector<std::string>& ids,
                                 std::optional<int> target_label, const Json& uap_metadata,
                                 const EvalOptions& options = {});

EvalReport fooling_ratio(const Perturbation& delta, const ClassifierAdapter& model, const SampledDataset& testset,
                         const Json& uap_metadata = Json::object(), const EvalOptions& options = {});

EvalReport targeted_fooling_ratio(const Perturbation& delta, const ClassifierAdapter& model,
                                  const SampledDataset& testset, int target_label,
                                  const Json& uap_metadata = Json::object(), const EvalOptions& options = {});

/// Resizes the perturbation to (h, w) when needed, keeping an L-inf budget.
Perturbation fit_perturbation(const Perturbation& delta, const NormBudget& budget, int h, int w);

// ---------------------------------------------------------------------------
// Transfer

struct NamedArtifact {
    std::string id;
    UapArtifact artifact;
};

struct TransferCell {
    std::string source;  // artifact id (row)
    std::string target;  // model id (column)
    int alpha = 0;
    bool resized = false;
    std::optional<EvalReport> report;
    std::string error;  // set when the cell failed
};

struct TransferMatrix {
    std::vector<std::string> sources;
    std::vector<std::string> targets;
    std::vector<TransferCell> cells;  // row-major, sources x targets

    const TransferCell& at(std::size_t row, std::size_t col) const { return cells.at(row * targets.size() + col); }
};

using ModelLoader = std::function<std::shared_ptr<const ClassifierAdapter>(const std::string&)>;

struct SweepOptions {
    int workers = 1;
    EvalOptions eval;
    ModelLoader loader;  // defaults to load_classifier
};

/// Evaluates every (artifact, target) pair on testset_spec (loaded once per
/// target input shape). Cell failures are recorded and the sweep continues.
TransferMatrix transfer_sweep(const std::vector<NamedArtifact>& artifacts, const std::vector<std::string>& targets,
                              const DatasetSpec& testset_spec, const SweepOptions& options = {});

// ---------------------------------------------------------------------------
// Position ablation

/// One report per region; each region must live on the artifact's grid.
std::vector<EvalReport> position_ablation(const UapArtifact& artifact, const ClassifierAdapter& model,
                                          const SampledDataset& testset, const std::vector<MaskRegion>& regions,
                                          const EvalOptions& options = {});

// ---------------------------------------------------------------------------
// Data efficiency

struct DataEfficiencyCell {
    int c = 0;
    int n = 0;
    int alpha = 0;
    std::uint64_t seed = 0;
    int batch_size = 0;
    std::optional<double> fooling_ratio;
    std::string error;
};

struct DataEfficiencyTable {
    std::vector<std::pair<int, int>> grid;
    std::vector<int> alphas;
    std::vector<std::uint64_t> seeds;
    std::vector<DataEfficiencyCell> cells;  // grid x alphas x seeds, in that nesting order

    /// Median FR over seeds for one (c, n, alpha); nullopt if every seed failed.
    std::optional<double> median(std::pair<int, int> cn, int alpha) const;
};

struct DataEfficiencyOptions {
    std::string source_id = "desk10";
    std::vector<std::uint64_t> seeds{0};
    /// Batch size is reduced to the training-set size for small cells.
    bool shrink_batch = true;
    int workers = 1;
    EvalOptions eval;
};

/// For each (c, n) cell, each alpha and each seed: samples c x n training
/// images (seed), crafts with config (seed), and evaluates FR on `testset`.
DataEfficiencyTable data_efficiency_sweep(const std::vector<std::pair<int, int>>& grid,
                                          const std::vector<int>& alphas, const ClassifierAdapter& model,
                                          const NormBudget& budget, const AttackConfig& config,
                                          const SampledDataset& testset, const DataEfficiencyOptions& options = {});

// ---------------------------------------------------------------------------
// Serialization and rendering

Json to_json(const TransferCell& cell);
Json to_json(const DataEfficiencyCell& cell);
/// Newline-delimited records, one per cell.
std::string to_jsonl(const TransferMatrix& m);
std::string to_jsonl(const DataEfficiencyTable& t);

/// Rows = sources, columns = targets, FR in percent.
std::string render_markdown(const TransferMatrix& m);
/// Rows = alpha, columns = (c, n); median FR over seeds in percent.
std::string render_markdown(const DataEfficiencyTable& t);
/// One row per report: label, N, FR and TFR.
std::string render_markdown(const std::vector<std::pair<std::string, EvalReport>>& rows);

/// Runs fn(i) for i in [0, count) on at most `workers` threads.
void parallel_for(int count, int workers, const std::function<void(int)>& fn);

}  // namespace tscuap
