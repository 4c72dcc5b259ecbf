#pragma once

// Classifier adapters and the model registry.
//
// An adapter consumes channels-last images in [0,1], applies its private
// per-channel normalization and returns (batch, K) logits. Adapters are
// read-only after construction and may be shared between threads.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tscuap/core.hpp"
#include "tscuap/losses.hpp"
#include "tscuap/nn.hpp"

namespace tscuap {

struct ModelInfo {
    std::string model_id;
    int input_h = 0;
    int input_w = 0;
    int channels = 3;
    int class_count = 0;
    /// Per-channel normalization applied after perturbation composition.
    /// Empty vectors mean identity.
    std::vector<float> mean;
    std::vector<float> std;
    bool grad_capable = true;
};

Json to_json(const ModelInfo& info);

/// Maps logits to d(objective)/d(logits).
using LogitsGradFn = std::function<Logits(const Logits&)>;

struct Backprop {
    Logits logits;
    ImageBatch input_grad;  // d objective / d images (pixel space)
};

enum class RangeCheck { Enforce, Skip };

class ClassifierAdapter {
public:
    explicit ClassifierAdapter(ModelInfo info);
    virtual ~ClassifierAdapter() = default;

    const ModelInfo& info() const { return info_; }

    /// Throws ShapeError/ValidationError on shape or [0,1] range violations
    /// (range checking can be skipped for unclamped compositions).
    Logits logits(const ImageBatch& images, RangeCheck check = RangeCheck::Enforce) const;

    /// Forward pass plus gradient of head(logits) w.r.t. the input pixels.
    Backprop backprop(const ImageBatch& images, const LogitsGradFn& head,
                      RangeCheck check = RangeCheck::Enforce) const;

protected:
    virtual Logits forward_normalized(const ImageBatch& x) const = 0;
    virtual Backprop backprop_normalized(const ImageBatch& x, const LogitsGradFn& head) const = 0;

private:
    void check_batch(const ImageBatch& images, RangeCheck check) const;
    ImageBatch normalize(const ImageBatch& images) const;

    ModelInfo info_;
};

/// argmax over logits; ties resolve to the lowest class index.
std::vector<int> argmax_rows(const Logits& logits);

/// Labels for a batch of [0,1] images. An empty batch yields an empty vector.
std::vector<int> predict(const ClassifierAdapter& adapter, const ImageBatch& images,
                         int eval_batch = 256);

/// Adapter backed by the in-tree gradient engine.
class NetworkClassifier final : public ClassifierAdapter {
public:
    NetworkClassifier(ModelInfo info, nn::Network<float> network);

    const nn::Network<float>& network() const { return net_; }

protected:
    Logits forward_normalized(const ImageBatch& x) const override;
    Backprop backprop_normalized(const ImageBatch& x, const LogitsGradFn& head) const override;

private:
    nn::Network<float> net_;
};

/// logits = W * flatten(x) + b with W of shape (K, h*w*c), computed in double.
/// Small and analytically tractable; used for toy fixtures and oracles.
class LinearClassifier final : public ClassifierAdapter {
public:
    LinearClassifier(ModelInfo info, Logits weights, Eigen::VectorXd bias);

    const Logits& weights() const { return w_; }
    const Eigen::VectorXd& bias() const { return b_; }

protected:
    Logits forward_normalized(const ImageBatch& x) const override;
    Backprop backprop_normalized(const ImageBatch& x, const LogitsGradFn& head) const override;

private:
    Logits w_;
    Eigen::VectorXd b_;
};

// ---------------------------------------------------------------------------
// Weight files: "TSCW", u32 version, u32 metadata length, JSON metadata
// (model info, layer list, training notes), one rank-1 float32 tensor.

void save_network_model(const std::string& path, const ModelInfo& info,
                        const nn::Network<float>& net, const Json& extra = Json::object());
std::unique_ptr<NetworkClassifier> load_network_model(const std::string& path,
                                                      const std::string& model_id = "");

// ---------------------------------------------------------------------------
// Registry

/// Directory holding registry.json and weight files. TSCUAP_MODEL_ROOT
/// overrides the built-in location.
std::string model_root();
/// Directory holding bundled data assets. TSCUAP_DATA_ROOT overrides it.
std::string data_root();

struct RegistryEntry {
    std::string model_id;
    std::string loader;  // "weights" or "unavailable"
    std::string file;
    std::string description;
    std::string reason;  // why an unavailable model cannot be loaded
    int input_h = 0;
    int input_w = 0;
    int channels = 3;
    int class_count = 0;
};

std::vector<RegistryEntry> registry_entries(const std::string& registry_path = "");
RegistryEntry registry_entry(const std::string& model_id, const std::string& registry_path = "");

/// Throws RegistryError for unknown ids (listing the available ones) and for
/// registered models whose weights are not present in this environment.
std::shared_ptr<const ClassifierAdapter> load_classifier(const std::string& model_id,
                                                         const std::string& registry_path = "");

}  // namespace tscuap
