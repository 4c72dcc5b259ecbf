#pragma once

// Domain types shared by crafting, evaluation and persistence.
//
// Images and perturbations are stored channels-last (HWC) in a [0,1] pixel
// scale. All types validate their invariants on construction and are
// immutable afterwards unless stated otherwise.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace tscuap {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value or combination of values violates a documented precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Two tensors (or a tensor and a geometry) disagree on shape.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A loss, gradient or norm became NaN/Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Lookup of a model, dataset or loss id failed.
class RegistryError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Dense storage

/// Rank-3 HWC array of float32.
struct Array3 {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<float> data;

    Array3() = default;
    Array3(int height, int width, int channels, float fill = 0.0f);
    Array3(int height, int width, int channels, std::vector<float> values);

    std::size_t size() const { return data.size(); }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * w + j) * c + k;
    }
    float& operator()(int i, int j, int k) { return data[index(i, j, k)]; }
    float operator()(int i, int j, int k) const { return data[index(i, j, k)]; }

    bool same_shape(const Array3& other) const {
        return h == other.h && w == other.w && c == other.c;
    }
    bool operator==(const Array3& other) const = default;
};

/// Rank-4 NHWC tensor. Used for image batches and inside the gradient engine.
template <typename T>
struct Tensor4 {
    int n = 0;
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(int batch, int height, int width, int channels, T fill = T(0))
        : n(batch), h(height), w(width), c(channels),
          data(static_cast<std::size_t>(batch) * height * width * channels, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(h) * w * c; }
    std::size_t index(int b, int i, int j, int k) const {
        return ((static_cast<std::size_t>(b) * h + i) * w + j) * c + k;
    }
    T& operator()(int b, int i, int j, int k) { return data[index(b, i, j, k)]; }
    T operator()(int b, int i, int j, int k) const { return data[index(b, i, j, k)]; }

    std::span<T> sample(int b) { return {data.data() + b * sample_size(), sample_size()}; }
    std::span<const T> sample(int b) const {
        return {data.data() + b * sample_size(), sample_size()};
    }
};

using ImageBatch = Tensor4<float>;

// ---------------------------------------------------------------------------
// Attack geometry and budget

/// Split ratio alpha together with the image geometry it must divide.
class TileSpec {
public:
    /// Throws ValidationError naming the dimension alpha does not divide.
    TileSpec(int alpha, int image_h, int image_w);

    int alpha() const { return alpha_; }
    int image_h() const { return image_h_; }
    int image_w() const { return image_w_; }
    int patch_h() const { return image_h_ / alpha_; }
    int patch_w() const { return image_w_ / alpha_; }

    bool operator==(const TileSpec&) const = default;

private:
    int alpha_;
    int image_h_;
    int image_w_;
};

TileSpec validate_tile_spec(int alpha, int image_h, int image_w);

enum class NormKind { Linf, L2 };

std::string to_string(NormKind p);
NormKind parse_norm_kind(const std::string& text);

class NormBudget {
public:
    NormBudget(NormKind p, double epsilon);

    NormKind p() const { return p_; }
    double epsilon() const { return epsilon_; }

    bool operator==(const NormBudget&) const = default;

private:
    NormKind p_;
    double epsilon_;
};

/// Largest float that does not exceed `value`. Used for L-inf clamps so that a
/// float32 patch never exceeds a double-precision budget.
float float_at_most(double value);

/// Parses "0.0392" or a fraction literal such as "10/255".
double parse_epsilon(const std::string& text);

// ---------------------------------------------------------------------------
// Patch and perturbation

/// The trainable local texture. Shape (h, w, c), c in {1, 3}, finite entries.
class Patch {
public:
    explicit Patch(Array3 values);

    const Array3& values() const { return values_; }
    int h() const { return values_.h; }
    int w() const { return values_.w; }
    int channels() const { return values_.c; }
    float max_abs() const;

    bool operator==(const Patch&) const = default;

private:
    Array3 values_;
};

Patch new_patch(const TileSpec& spec, int channels);

enum class PerturbationOrigin { Tiled, Resized, Masked, Loaded };

std::string to_string(PerturbationOrigin origin);

class Perturbation {
public:
    Perturbation(Array3 values, PerturbationOrigin origin);

    const Array3& values() const { return values_; }
    PerturbationOrigin origin() const { return origin_; }
    int h() const { return values_.h; }
    int w() const { return values_.w; }
    int channels() const { return values_.c; }

private:
    Array3 values_;
    PerturbationOrigin origin_;
};

// ---------------------------------------------------------------------------
// Attack configuration

enum class LossId { CrossEntropy, DfMargin, CosSim };
enum class StepRule { SignStep, Adam };
/// Where per-sample labels for label-consuming losses come from.
enum class LabelSource { GroundTruth, CleanPrediction };
/// Synthesized inputs for data-free crafting.
enum class SurrogateKind { Uniform, MeanImage };
/// Starting point of the patch. Zero unless the loss is cos_sim, whose
/// gradient vanishes at a zero perturbation.
enum class PatchInit { Zero, Uniform };

std::string to_string(LossId id);
std::string to_string(StepRule rule);
std::string to_string(LabelSource source);
std::string to_string(SurrogateKind kind);
std::string to_string(PatchInit init);
LossId parse_loss_id(const std::string& text);
StepRule parse_step_rule(const std::string& text);
LabelSource parse_label_source(const std::string& text);
SurrogateKind parse_surrogate_kind(const std::string& text);
PatchInit parse_patch_init(const std::string& text);

struct AttackConfigFields {
    int epochs = 20;
    int batch_size = 100;
    LossId loss = LossId::CrossEntropy;
    double kappa = 0.0;
    std::optional<int> target_label;
    StepRule step_rule = StepRule::Adam;
    double step_size = 0.01;
    std::uint64_t seed = 0;
    bool data_free = false;
    bool clamp_pixels = true;
    LabelSource label_source = LabelSource::GroundTruth;
    SurrogateKind surrogate = SurrogateKind::Uniform;
    int surrogate_batches = 10;
    std::optional<PatchInit> init;
};

/// Validated crafting configuration. Construction reports every violated
/// constraint in one ValidationError.
class AttackConfig {
public:
    explicit AttackConfig(AttackConfigFields fields);
    AttackConfig() : AttackConfig(AttackConfigFields{}) {}

    /// Checks target_label against the attacked model's class count.
    void check_against_classes(int class_count) const;

    const AttackConfigFields& fields() const { return f_; }
    int epochs() const { return f_.epochs; }
    int batch_size() const { return f_.batch_size; }
    LossId loss() const { return f_.loss; }
    double kappa() const { return f_.kappa; }
    const std::optional<int>& target_label() const { return f_.target_label; }
    StepRule step_rule() const { return f_.step_rule; }
    double step_size() const { return f_.step_size; }
    std::uint64_t seed() const { return f_.seed; }
    bool data_free() const { return f_.data_free; }
    bool clamp_pixels() const { return f_.clamp_pixels; }
    LabelSource label_source() const { return f_.label_source; }
    SurrogateKind surrogate() const { return f_.surrogate; }
    int surrogate_batches() const { return f_.surrogate_batches; }
    PatchInit init() const;

private:
    AttackConfigFields f_;
};

/// Lists every violated AttackConfig constraint (empty when valid).
std::vector<std::string> attack_config_violations(const AttackConfigFields& f);

// ---------------------------------------------------------------------------
// Datasets and reports

enum class Split { Train, Validation };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct DatasetSpec {
    std::string source_id;
    int class_count = 0;
    int classes_chosen = 0;
    int per_class = 0;
    Split split = Split::Train;
    std::uint64_t seed = 0;

    DatasetSpec() = default;
    DatasetSpec(std::string source, int class_count, int classes_chosen, int per_class,
                Split split, std::uint64_t seed);

    int total() const { return classes_chosen * per_class; }
};

Json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const Json& j);

/// Outcome of evaluating one perturbation on one model.
///
/// Ratios are derived from integer counts so they are exact rationals over N.
/// The per-sample log allows re-aggregation and auditing.
class EvalReport {
public:
    struct Sample {
        std::string id;
        int clean_label;
        int adv_label;
    };

    EvalReport(std::vector<Sample> samples, std::optional<int> target_label,
               std::string source_model, std::string target_model, Json uap_metadata);

    double fooling_ratio() const;
    std::optional<double> targeted_fooling_ratio() const;
    int n_evaluated() const { return static_cast<int>(samples_.size()); }
    int flipped() const { return flipped_; }
    std::optional<int> targeted_hits() const;
    const std::optional<int>& target_label() const { return target_label_; }
    const std::string& source_model() const { return source_model_; }
    const std::string& target_model() const { return target_model_; }
    const Json& uap_metadata() const { return uap_metadata_; }
    const std::vector<Sample>& samples() const { return samples_; }

private:
    std::vector<Sample> samples_;
    std::optional<int> target_label_;
    std::string source_model_;
    std::string target_model_;
    Json uap_metadata_;
    int flipped_ = 0;
    int targeted_hits_ = 0;
};

Json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const Json& j);

}  // namespace tscuap
