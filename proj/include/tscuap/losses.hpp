#pragma once

// Per-batch loss heads on classifier logits. Each returns the batch-mean
// value and its gradient w.r.t. the adversarial logits, in the loss's own
// sign convention. Objective wraps them into a uniform "minimize" form.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tscuap/core.hpp"

namespace tscuap {

/// (batch, classes) row-major logits.
using Logits = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LogitsBatch {
    Logits values;
    std::optional<std::vector<int>> labels;

    LogitsBatch(Logits v, std::optional<std::vector<int>> l = std::nullopt);

    int batch() const { return static_cast<int>(values.rows()); }
    int classes() const { return static_cast<int>(values.cols()); }
    const std::vector<int>& require_labels(const char* loss_name) const;
};

struct LossValue {
    double value = 0.0;
    Logits grad;  // d value / d adv_logits
};

/// Mean softmax cross-entropy against the batch labels (crafting maximizes).
LossValue loss_ce_untargeted(const LogitsBatch& adv);

/// Mean softmax cross-entropy against a constant target (crafting minimizes).
LossValue loss_ce_targeted(const LogitsBatch& adv, int target_label);

/// Mean of max(C_gt - max_{j != gt} C_j, -kappa) (crafting minimizes).
LossValue loss_df_margin(const LogitsBatch& adv, double kappa);

/// Mean row-wise cosine similarity between clean and adversarial logits
/// (crafting minimizes). Gradient is w.r.t. the adversarial logits only.
LossValue loss_cos_sim(const LogitsBatch& clean, const LogitsBatch& adv);

/// Per-sample raw margins C_gt - max_{j != gt} C_j, before the -kappa clamp.
std::vector<double> df_margins(const LogitsBatch& adv);

/// Loss ids accepted by configuration files.
std::vector<std::string> registered_losses();

/// A configured loss head in minimize form.
class Objective {
public:
    Objective(LossId id, double kappa, std::optional<int> target_label);

    LossId id() const { return id_; }
    bool needs_labels() const;
    bool needs_clean_logits() const { return id_ == LossId::CosSim; }

    struct Result {
        double loss;       // the head's own value, as logged
        double objective;  // value being minimized
        Logits grad;       // d objective / d adv_logits
    };

    /// `clean` is required for cos_sim; labels in `adv` for label-consuming heads.
    Result evaluate(const LogitsBatch& adv, const LogitsBatch* clean = nullptr) const;

private:
    LossId id_;
    double kappa_;
    std::optional<int> target_;
};

}  // namespace tscuap
