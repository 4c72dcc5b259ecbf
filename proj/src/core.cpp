#include "tscuap/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tscuap {

namespace {

template <typename E>
struct EnumName {
    E value;
    const char* name;
};

template <typename E, std::size_t N>
std::string enum_to_string(E value, const EnumName<E> (&table)[N]) {
    for (const auto& entry : table) {
        if (entry.value == value) return entry.name;
    }
    return "unknown";
}

template <typename E, std::size_t N>
E enum_from_string(const std::string& text, const EnumName<E> (&table)[N], const char* what) {
    for (const auto& entry : table) {
        if (text == entry.name) return entry.value;
    }
    std::ostringstream msg;
    msg << "unknown " << what << " '" << text << "' (expected one of:";
    for (const auto& entry : table) msg << ' ' << entry.name;
    msg << ')';
    throw ValidationError(msg.str());
}

constexpr EnumName<NormKind> kNormNames[] = {{NormKind::Linf, "inf"}, {NormKind::L2, "2"}};
constexpr EnumName<LossId> kLossNames[] = {
    {LossId::CrossEntropy, "ce"}, {LossId::DfMargin, "df_margin"}, {LossId::CosSim, "cos_sim"}};
constexpr EnumName<StepRule> kStepNames[] = {{StepRule::SignStep, "sign_step"},
                                             {StepRule::Adam, "adam"}};
constexpr EnumName<LabelSource> kLabelNames[] = {
    {LabelSource::GroundTruth, "ground_truth"}, {LabelSource::CleanPrediction, "clean_prediction"}};
constexpr EnumName<SurrogateKind> kSurrogateNames[] = {{SurrogateKind::Uniform, "uniform"},
                                                       {SurrogateKind::MeanImage, "mean_image"}};
constexpr EnumName<PatchInit> kInitNames[] = {{PatchInit::Zero, "zero"},
                                              {PatchInit::Uniform, "uniform"}};
constexpr EnumName<Split> kSplitNames[] = {{Split::Train, "train"},
                                           {Split::Validation, "validation"}};
constexpr EnumName<PerturbationOrigin> kOriginNames[] = {
    {PerturbationOrigin::Tiled, "tiled"},
    {PerturbationOrigin::Resized, "resized"},
    {PerturbationOrigin::Masked, "masked"},
    {PerturbationOrigin::Loaded, "loaded"}};

void require_finite(std::span<const float> values, const char* what) {
    for (float v : values) {
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + " contains a non-finite entry");
    }
}

}  // namespace

// ---------------------------------------------------------------------------

Array3::Array3(int height, int width, int channels, float fill)
    : h(height), w(width), c(channels) {
    if (height < 0 || width < 0 || channels < 0) throw ShapeError("negative array dimension");
    data.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Array3::Array3(int height, int width, int channels, std::vector<float> values)
    : h(height), w(width), c(channels), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(height) * width * channels) {
        throw ShapeError("array data length does not match its shape");
    }
}

// ---------------------------------------------------------------------------

TileSpec::TileSpec(int alpha, int image_h, int image_w)
    : alpha_(alpha), image_h_(image_h), image_w_(image_w) {
    if (alpha <= 0 || image_h <= 0 || image_w <= 0) {
        throw ValidationError("alpha and image dimensions must be positive");
    }
    std::vector<std::string> bad;
    if (image_h % alpha != 0) {
        bad.push_back("image_h=" + std::to_string(image_h) + " (remainder " +
                      std::to_string(image_h % alpha) + ")");
    }
    if (image_w % alpha != 0) {
        bad.push_back("image_w=" + std::to_string(image_w) + " (remainder " +
                      std::to_string(image_w % alpha) + ")");
    }
    if (!bad.empty()) {
        std::string msg = "alpha=" + std::to_string(alpha) + " does not divide ";
        for (std::size_t i = 0; i < bad.size(); ++i) msg += (i ? " and " : "") + bad[i];
        throw ValidationError(msg);
    }
}

TileSpec validate_tile_spec(int alpha, int image_h, int image_w) {
    return TileSpec(alpha, image_h, image_w);
}

std::string to_string(NormKind p) { return enum_to_string(p, kNormNames); }

NormKind parse_norm_kind(const std::string& text) {
    if (text == "linf" || text == "Linf" || text == "infinity") return NormKind::Linf;
    if (text == "l2" || text == "L2") return NormKind::L2;
    return enum_from_string(text, kNormNames, "norm");
}

NormBudget::NormBudget(NormKind p, double epsilon) : p_(p), epsilon_(epsilon) {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw ValidationError("epsilon must be a positive finite number");
    }
}

float float_at_most(double value) {
    auto f = static_cast<float>(value);
    if (static_cast<double>(f) > value) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
    return f;
}

double parse_epsilon(const std::string& text) {
    auto parse_number = [&](const std::string& part) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(part, &used);
        } catch (const std::exception&) {
            throw ValidationError("cannot parse epsilon '" + text + "'");
        }
        if (used != part.size()) throw ValidationError("cannot parse epsilon '" + text + "'");
        return v;
    };
    double value = 0.0;
    if (auto slash = text.find('/'); slash != std::string::npos) {
        double den = parse_number(text.substr(slash + 1));
        if (den == 0.0) throw ValidationError("epsilon fraction has a zero denominator");
        value = parse_number(text.substr(0, slash)) / den;
    } else {
        value = parse_number(text);
    }
    if (!(value > 0.0)) throw ValidationError("epsilon must be positive, got '" + text + "'");
    return value;
}

// ---------------------------------------------------------------------------

Patch::Patch(Array3 values) : values_(std::move(values)) {
    if (values_.h < 1 || values_.w < 1) throw ShapeError("patch must be at least 1x1");
    if (values_.c != 1 && values_.c != 3) throw ShapeError("patch channels must be 1 or 3");
    require_finite(values_.data, "patch");
}

float Patch::max_abs() const {
    float m = 0.0f;
    for (float v : values_.data) m = std::max(m, std::abs(v));
    return m;
}

Patch new_patch(const TileSpec& spec, int channels) {
    return Patch(Array3(spec.patch_h(), spec.patch_w(), channels, 0.0f));
}

std::string to_string(PerturbationOrigin origin) { return enum_to_string(origin, kOriginNames); }

Perturbation::Perturbation(Array3 values, PerturbationOrigin origin)
    : values_(std::move(values)), origin_(origin) {
    if (values_.h < 1 || values_.w < 1) throw ShapeError("perturbation must be at least 1x1");
    if (values_.c != 1 && values_.c != 3) throw ShapeError("perturbation channels must be 1 or 3");
    require_finite(values_.data, "perturbation");
}

// ---------------------------------------------------------------------------

std::string to_string(LossId id) { return enum_to_string(id, kLossNames); }
std::string to_string(StepRule rule) { return enum_to_string(rule, kStepNames); }
std::string to_string(LabelSource source) { return enum_to_string(source, kLabelNames); }
std::string to_string(SurrogateKind kind) { return enum_to_string(kind, kSurrogateNames); }
std::string to_string(PatchInit init) { return enum_to_string(init, kInitNames); }
std::string to_string(Split split) { return enum_to_string(split, kSplitNames); }

LossId parse_loss_id(const std::string& text) { return enum_from_string(text, kLossNames, "loss id"); }
StepRule parse_step_rule(const std::string& text) {
    if (text == "sign") return StepRule::SignStep;
    return enum_from_string(text, kStepNames, "step rule");
}
LabelSource parse_label_source(const std::string& text) {
    return enum_from_string(text, kLabelNames, "label source");
}
SurrogateKind parse_surrogate_kind(const std::string& text) {
    return enum_from_string(text, kSurrogateNames, "surrogate kind");
}
PatchInit parse_patch_init(const std::string& text) {
    return enum_from_string(text, kInitNames, "patch init");
}
Split parse_split(const std::string& text) {
    if (text == "val" || text == "test") return Split::Validation;
    return enum_from_string(text, kSplitNames, "split");
}

std::vector<std::string> attack_config_violations(const AttackConfigFields& f) {
    std::vector<std::string> out;
    if (f.epochs < 0) out.push_back("epochs must be non-negative");
    if (f.batch_size < 1) out.push_back("batch_size must be positive");
    if (!(f.kappa >= 0.0)) out.push_back("kappa must be non-negative");
    if (!(f.step_size > 0.0) || !std::isfinite(f.step_size)) out.push_back("step_size must be positive");
    if (f.target_label && *f.target_label < 0) out.push_back("target_label must be a class index");
    if (f.target_label && f.loss != LossId::CrossEntropy) {
        out.push_back("targeted crafting requires loss ce");
    }
    if (f.data_free && f.loss != LossId::CosSim) {
        out.push_back("data_free crafting requires loss cos_sim (the only label-free loss)");
    }
    if (f.data_free && f.target_label) out.push_back("data_free crafting cannot be targeted");
    if (f.surrogate_batches < 1) out.push_back("surrogate_batches must be positive");
    return out;
}

AttackConfig::AttackConfig(AttackConfigFields fields) : f_(std::move(fields)) {
    auto problems = attack_config_violations(f_);
    if (!problems.empty()) {
        std::string msg = "invalid attack config:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ValidationError(msg);
    }
}

void AttackConfig::check_against_classes(int class_count) const {
    if (f_.target_label && *f_.target_label >= class_count) {
        throw ValidationError("target_label " + std::to_string(*f_.target_label) +
                              " out of range for a " + std::to_string(class_count) + "-class model");
    }
}

PatchInit AttackConfig::init() const {
    if (f_.init) return *f_.init;
    return f_.loss == LossId::CosSim ? PatchInit::Uniform : PatchInit::Zero;
}

// ---------------------------------------------------------------------------

DatasetSpec::DatasetSpec(std::string source, int class_count_, int classes_chosen_, int per_class_,
                         Split split_, std::uint64_t seed_)
    : source_id(std::move(source)),
      class_count(class_count_),
      classes_chosen(classes_chosen_),
      per_class(per_class_),
      split(split_),
      seed(seed_) {
    if (class_count <= 0 || classes_chosen <= 0 || per_class <= 0) {
        throw ValidationError("dataset class_count, classes_chosen and per_class must be positive");
    }
    if (classes_chosen > class_count) {
        throw ValidationError("classes_chosen (" + std::to_string(classes_chosen) +
                              ") exceeds class_count (" + std::to_string(class_count) + ")");
    }
}

Json to_json(const DatasetSpec& spec) {
    return Json{{"source_id", spec.source_id},   {"class_count", spec.class_count},
                {"classes_chosen", spec.classes_chosen}, {"per_class", spec.per_class},
                {"split", to_string(spec.split)}, {"seed", spec.seed}};
}

DatasetSpec dataset_spec_from_json(const Json& j) {
    return DatasetSpec(j.at("source_id").get<std::string>(), j.at("class_count").get<int>(),
                       j.at("classes_chosen").get<int>(), j.at("per_class").get<int>(),
                       parse_split(j.at("split").get<std::string>()),
                       j.at("seed").get<std::uint64_t>());
}

// ---------------------------------------------------------------------------

EvalReport::EvalReport(std::vector<Sample> samples, std::optional<int> target_label,
                       std::string source_model, std::string target_model, Json uap_metadata)
    : samples_(std::move(samples)),
      target_label_(target_label),
      source_model_(std::move(source_model)),
      target_model_(std::move(target_model)),
      uap_metadata_(std::move(uap_metadata)) {
    if (samples_.empty()) throw ValidationError("an evaluation report needs at least one sample");
    for (const auto& s : samples_) {
        bool flipped = s.adv_label != s.clean_label;
        flipped_ += flipped ? 1 : 0;
        if (target_label_ && flipped && s.adv_label == *target_label_) ++targeted_hits_;
    }
    // targeted hits are a subset of flips by construction; keep the check explicit.
    if (targeted_hits_ > flipped_) throw ValidationError("targeted fooling ratio exceeds fooling ratio");
}

double EvalReport::fooling_ratio() const {
    return static_cast<double>(flipped_) / static_cast<double>(samples_.size());
}

std::optional<double> EvalReport::targeted_fooling_ratio() const {
    if (!target_label_) return std::nullopt;
    return static_cast<double>(targeted_hits_) / static_cast<double>(samples_.size());
}

std::optional<int> EvalReport::targeted_hits() const {
    if (!target_label_) return std::nullopt;
    return targeted_hits_;
}

Json to_json(const EvalReport& report) {
    Json samples = Json::array();
    for (const auto& s : report.samples()) samples.push_back({s.id, s.clean_label, s.adv_label});
    Json j{{"fooling_ratio", report.fooling_ratio()},
           {"targeted_fooling_ratio", nullptr},
           {"target_label", nullptr},
           {"n_evaluated", report.n_evaluated()},
           {"flipped", report.flipped()},
           {"source_model", report.source_model()},
           {"target_model", report.target_model()},
           {"uap_metadata", report.uap_metadata()},
           {"samples", std::move(samples)}};
    if (report.target_label()) {
        j["target_label"] = *report.target_label();
        j["targeted_fooling_ratio"] = *report.targeted_fooling_ratio();
        j["targeted_hits"] = *report.targeted_hits();
    }
    return j;
}

EvalReport eval_report_from_json(const Json& j) {
    std::vector<EvalReport::Sample> samples;
    for (const auto& s : j.at("samples")) {
        samples.push_back({s.at(0).get<std::string>(), s.at(1).get<int>(), s.at(2).get<int>()});
    }
    std::optional<int> target;
    if (!j.at("target_label").is_null()) target = j.at("target_label").get<int>();
    return EvalReport(std::move(samples), target, j.at("source_model").get<std::string>(),
                      j.at("target_model").get<std::string>(), j.value("uap_metadata", Json::object()));
}

}  // namespace tscuap
