#include "tscuap/losses.hpp"

#include <cmath>
#include <limits>

namespace tscuap {

namespace {

void require_finite(const Logits& m, const char* what) {
    if (!m.allFinite()) throw NumericError(std::string(what) + " logits contain non-finite entries");
}

/// Mean CE of each row against labels[r]; gradient is softmax - onehot.
LossValue cross_entropy(const Logits& z, const std::vector<int>& labels) {
    const auto m = static_cast<int>(z.rows());
    LossValue out;
    out.grad.resize(z.rows(), z.cols());
    double total = 0.0;
    for (int r = 0; r < m; ++r) {
        const double peak = z.row(r).maxCoeff();
        double sum = 0.0;
        for (int k = 0; k < z.cols(); ++k) sum += std::exp(z(r, k) - peak);
        const double lse = peak + std::log(sum);
        total += lse - z(r, labels[r]);
        for (int k = 0; k < z.cols(); ++k) out.grad(r, k) = std::exp(z(r, k) - lse) / m;
        out.grad(r, labels[r]) -= 1.0 / m;
    }
    out.value = total / m;
    return out;
}

int runner_up(const Logits& z, int r, int gt) {
    int best = -1;
    for (int k = 0; k < z.cols(); ++k) {
        if (k == gt) continue;
        if (best < 0 || z(r, k) > z(r, best)) best = k;
    }
    return best;
}

}  // namespace

LogitsBatch::LogitsBatch(Logits v, std::optional<std::vector<int>> l)
    : values(std::move(v)), labels(std::move(l)) {
    require_finite(values, "batch");
    if (labels) {
        if (static_cast<Eigen::Index>(labels->size()) != values.rows()) {
            throw ShapeError("label vector length does not match batch size");
        }
        for (int y : *labels) {
            if (y < 0 || y >= values.cols()) {
                throw ValidationError("label " + std::to_string(y) + " outside [0, " +
                                      std::to_string(values.cols()) + ")");
            }
        }
    }
}

const std::vector<int>& LogitsBatch::require_labels(const char* loss_name) const {
    if (!labels) throw ValidationError(std::string(loss_name) + " requires labels");
    return *labels;
}

LossValue loss_ce_untargeted(const LogitsBatch& adv) {
    if (adv.batch() == 0) throw ValidationError("empty logits batch");
    return cross_entropy(adv.values, adv.require_labels("ce"));
}

LossValue loss_ce_targeted(const LogitsBatch& adv, int target_label) {
    if (adv.batch() == 0) throw ValidationError("empty logits batch");
    if (target_label < 0 || target_label >= adv.classes()) {
        throw ValidationError("target label " + std::to_string(target_label) + " out of range");
    }
    return cross_entropy(adv.values, std::vector<int>(adv.batch(), target_label));
}

std::vector<double> df_margins(const LogitsBatch& adv) {
    const auto& labels = adv.require_labels("df_margin");
    if (adv.classes() < 2) throw ValidationError("df_margin needs at least two classes");
    std::vector<double> out(adv.batch());
    for (int r = 0; r < adv.batch(); ++r) {
        out[r] = adv.values(r, labels[r]) - adv.values(r, runner_up(adv.values, r, labels[r]));
    }
    return out;
}

LossValue loss_df_margin(const LogitsBatch& adv, double kappa) {
    if (!(kappa >= 0.0)) throw ValidationError("kappa must be non-negative");
    if (adv.batch() == 0) throw ValidationError("empty logits batch");
    const auto& labels = adv.require_labels("df_margin");
    const auto margins = df_margins(adv);
    const int m = adv.batch();
    LossValue out;
    out.grad = Logits::Zero(adv.values.rows(), adv.values.cols());
    double total = 0.0;
    for (int r = 0; r < m; ++r) {
        if (margins[r] > -kappa) {
            total += margins[r];
            out.grad(r, labels[r]) += 1.0 / m;
            out.grad(r, runner_up(adv.values, r, labels[r])) -= 1.0 / m;
        } else {
            total += -kappa;
        }
    }
    out.value = total / m;
    return out;
}

LossValue loss_cos_sim(const LogitsBatch& clean, const LogitsBatch& adv) {
    if (clean.values.rows() != adv.values.rows() || clean.values.cols() != adv.values.cols()) {
        throw ShapeError("clean and adversarial logits differ in shape");
    }
    if (adv.batch() == 0) throw ValidationError("empty logits batch");
    const int m = adv.batch();
    LossValue out;
    out.grad.resize(adv.values.rows(), adv.values.cols());
    double total = 0.0;
    for (int r = 0; r < m; ++r) {
        const auto a = clean.values.row(r);
        const auto b = adv.values.row(r);
        const double aa = a.squaredNorm();
        const double bb = b.squaredNorm();
        if (aa == 0.0 || bb == 0.0) {
            throw NumericError("cos_sim undefined for a zero logit row (row " + std::to_string(r) + ")");
        }
        const double ab = a.dot(b);
        const double cos = ab / std::sqrt(aa * bb);
        total += cos;
        const double na_nb = std::sqrt(aa) * std::sqrt(bb);
        out.grad.row(r) = (a / na_nb - cos * b / bb) / m;
    }
    out.value = total / m;
    return out;
}

std::vector<std::string> registered_losses() {
    return {to_string(LossId::CrossEntropy), to_string(LossId::DfMargin),
            to_string(LossId::CosSim)};
}

// ---------------------------------------------------------------------------

Objective::Objective(LossId id, double kappa, std::optional<int> target_label)
    : id_(id), kappa_(kappa), target_(target_label) {
    if (!(kappa >= 0.0)) throw ValidationError("kappa must be non-negative");
    if (target_ && id_ != LossId::CrossEntropy) {
        throw ValidationError("only the ce loss has a targeted variant");
    }
}

bool Objective::needs_labels() const {
    if (id_ == LossId::CosSim) return false;
    return !(id_ == LossId::CrossEntropy && target_);
}

Objective::Result Objective::evaluate(const LogitsBatch& adv, const LogitsBatch* clean) const {
    switch (id_) {
        case LossId::CrossEntropy: {
            if (target_) {
                auto l = loss_ce_targeted(adv, *target_);
                return {l.value, l.value, std::move(l.grad)};
            }
            auto l = loss_ce_untargeted(adv);
            return {l.value, -l.value, -l.grad};
        }
        case LossId::DfMargin: {
            auto l = loss_df_margin(adv, kappa_);
            return {l.value, l.value, std::move(l.grad)};
        }
        case LossId::CosSim: {
            if (!clean) throw ValidationError("cos_sim requires clean logits");
            auto l = loss_cos_sim(*clean, adv);
            return {l.value, l.value, std::move(l.grad)};
        }
    }
    throw ValidationError("unhandled loss id");
}

}  // namespace tscuap
