#include "tscuap/modelzoo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>

#include "tscuap/binio.hpp"

#ifndef TSCUAP_DEFAULT_MODEL_DIR
#define TSCUAP_DEFAULT_MODEL_DIR "models"
#endif
#ifndef TSCUAP_DEFAULT_DATA_DIR
#define TSCUAP_DEFAULT_DATA_DIR "data"
#endif

namespace tscuap {

namespace fs = std::filesystem;

namespace {

constexpr char kWeightsMagic[4] = {'T', 'S', 'C', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

ImageBatch logits_to_batch(const Logits& g) {
    ImageBatch out(static_cast<int>(g.rows()), 1, 1, static_cast<int>(g.cols()));
    for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index k = 0; k < g.cols(); ++k) out(r, 0, 0, k) = static_cast<float>(g(r, k));
    return out;
}

Logits batch_to_logits(const ImageBatch& y) {
    Logits out(y.n, y.c);
    for (int r = 0; r < y.n; ++r)
        for (int k = 0; k < y.c; ++k) out(r, k) = y(r, 0, 0, k);
    return out;
}

}  // namespace

Json to_json(const ModelInfo& info) {
    return Json{{"model_id", info.model_id},
                {"input", {info.input_h, info.input_w, info.channels}},
                {"classes", info.class_count},
                {"mean", info.mean},
                {"std", info.std},
                {"grad_capable", info.grad_capable}};
}

// ---------------------------------------------------------------------------

ClassifierAdapter::ClassifierAdapter(ModelInfo info) : info_(std::move(info)) {
    if (info_.input_h <= 0 || info_.input_w <= 0 || info_.class_count <= 0) {
        throw ValidationError("model '" + info_.model_id + "' has a non-positive shape or class count");
    }
    if (info_.channels != 1 && info_.channels != 3) throw ValidationError("channels must be 1 or 3");
    auto check_norm = [&](const std::vector<float>& v, const char* what) {
        if (!v.empty() && static_cast<int>(v.size()) != info_.channels) {
            throw ValidationError(std::string("normalization ") + what + " must have one entry per channel");
        }
    };
    check_norm(info_.mean, "mean");
    check_norm(info_.std, "std");
    for (float s : info_.std) {
        if (!(s > 0.0f)) throw ValidationError("normalization std must be positive");
    }
}

void ClassifierAdapter::check_batch(const ImageBatch& images, RangeCheck check) const {
    if (images.n == 0) return;
    if (images.h != info_.input_h || images.w != info_.input_w || images.c != info_.channels) {
        throw ShapeError("model '" + info_.model_id + "' expects (" + std::to_string(info_.input_h) + ", " +
                         std::to_string(info_.input_w) + ", " + std::to_string(info_.channels) +
                         ") images, got (" + std::to_string(images.h) + ", " + std::to_string(images.w) +
                         ", " + std::to_string(images.c) + ")");
    }
    for (float v : images.data) {
        if (!std::isfinite(v)) throw ValidationError("image batch contains non-finite pixels");
        if (check == RangeCheck::Enforce && (v < 0.0f || v > 1.0f)) {
            throw ValidationError("image pixel outside [0, 1]");
        }
    }
}

ImageBatch ClassifierAdapter::normalize(const ImageBatch& images) const {
    ImageBatch x = images;
    if (info_.mean.empty() && info_.std.empty()) return x;
    const int c = x.c;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const int k = static_cast<int>(i % c);
        const float m = info_.mean.empty() ? 0.0f : info_.mean[k];
        const float s = info_.std.empty() ? 1.0f : info_.std[k];
        x.data[i] = (x.data[i] - m) / s;
    }
    return x;
}

Logits ClassifierAdapter::logits(const ImageBatch& images, RangeCheck check) const {
    check_batch(images, check);
    if (images.n == 0) return Logits(0, info_.class_count);
    return forward_normalized(normalize(images));
}

Backprop ClassifierAdapter::backprop(const ImageBatch& images, const LogitsGradFn& head,
                                     RangeCheck check) const {
    if (!info_.grad_capable) throw ValidationError("model '" + info_.model_id + "' is eval-only");
    check_batch(images, check);
    if (images.n == 0) throw ValidationError("cannot backpropagate an empty batch");
    Backprop out = backprop_normalized(normalize(images), head);
    if (!info_.std.empty()) {
        const int c = out.input_grad.c;
        for (std::size_t i = 0; i < out.input_grad.data.size(); ++i) {
            out.input_grad.data[i] /= info_.std[i % c];
        }
    }
    return out;
}

std::vector<int> argmax_rows(const Logits& logits) {
    std::vector<int> out(logits.rows());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < logits.cols(); ++k) {
            if (logits(r, k) > logits(r, best)) best = k;
        }
        out[r] = static_cast<int>(best);
    }
    return out;
}

std::vector<int> predict(const ClassifierAdapter& adapter, const ImageBatch& images, int eval_batch) {
    std::vector<int> out;
    out.reserve(images.n);
    eval_batch = std::max(1, eval_batch);
    for (int start = 0; start < images.n; start += eval_batch) {
        const int count = std::min(eval_batch, images.n - start);
        ImageBatch chunk(count, images.h, images.w, images.c);
        std::copy_n(images.data.begin() + start * images.sample_size(), chunk.size(), chunk.data.begin());
        auto labels = argmax_rows(adapter.logits(chunk));
        out.insert(out.end(), labels.begin(), labels.end());
    }
    return out;
}

// ---------------------------------------------------------------------------

NetworkClassifier::NetworkClassifier(ModelInfo info, nn::Network<float> network)
    : ClassifierAdapter(std::move(info)), net_(std::move(network)) {
    const auto& in = net_.input_shape();
    if (in.h != this->info().input_h || in.w != this->info().input_w || in.c != this->info().channels) {
        throw ShapeError("network input shape disagrees with model info");
    }
    if (net_.output_size() != this->info().class_count) {
        throw ShapeError("network output size disagrees with class count");
    }
}

Logits NetworkClassifier::forward_normalized(const ImageBatch& x) const {
    return batch_to_logits(net_.forward(x));
}

Backprop NetworkClassifier::backprop_normalized(const ImageBatch& x, const LogitsGradFn& head) const {
    auto trace = net_.forward_trace(x);
    Backprop out;
    out.logits = batch_to_logits(trace.output());
    Logits g = head(out.logits);
    if (g.rows() != out.logits.rows() || g.cols() != out.logits.cols()) {
        throw ShapeError("loss head returned a gradient of the wrong shape");
    }
    out.input_grad = net_.backward(trace, logits_to_batch(g));
    return out;
}

LinearClassifier::LinearClassifier(ModelInfo info, Logits weights, Eigen::VectorXd bias)
    : ClassifierAdapter(std::move(info)), w_(std::move(weights)), b_(std::move(bias)) {
    const auto d = static_cast<Eigen::Index>(this->info().input_h) * this->info().input_w * this->info().channels;
    if (w_.rows() != this->info().class_count || w_.cols() != d || b_.size() != w_.rows()) {
        throw ShapeError("linear classifier weights have the wrong shape");
    }
}

Logits LinearClassifier::forward_normalized(const ImageBatch& x) const {
    Logits out(x.n, w_.rows());
    const auto d = static_cast<Eigen::Index>(x.sample_size());
    for (int b = 0; b < x.n; ++b) {
        Eigen::VectorXd v(d);
        for (Eigen::Index i = 0; i < d; ++i) v[i] = x.data[b * d + i];
        out.row(b) = (w_ * v + b_).transpose();
    }
    return out;
}

Backprop LinearClassifier::backprop_normalized(const ImageBatch& x, const LogitsGradFn& head) const {
    Backprop out;
    out.logits = forward_normalized(x);
    Logits g = head(out.logits);
    Logits dx = g * w_;
    out.input_grad = ImageBatch(x.n, x.h, x.w, x.c);
    for (std::size_t i = 0; i < out.input_grad.data.size(); ++i) {
        out.input_grad.data[i] = static_cast<float>(dx.data()[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------

void save_network_model(const std::string& path, const ModelInfo& info, const nn::Network<float>& net,
                        const Json& extra) {
    Json meta = to_json(info);
    meta["layers"] = net.architecture();
    meta["extra"] = extra;
    const std::string doc = meta.dump();

    ByteWriter w;
    w.bytes(std::string_view(kWeightsMagic, 4));
    w.u32(kWeightsVersion);
    w.u32(static_cast<std::uint32_t>(doc.size()));
    w.bytes(doc);
    const auto params = net.flat_params();
    const std::uint32_t dims[] = {static_cast<std::uint32_t>(params.size())};
    w.tensor(dims, params);
    write_file_atomic(path, w.buffer());
}

std::unique_ptr<NetworkClassifier> load_network_model(const std::string& path, const std::string& model_id) {
    ByteReader r(read_file(path));
    if (r.bytes(4, "magic") != std::string_view(kWeightsMagic, 4)) {
        throw FormatError(FormatError::Kind::BadMagic, "'" + path + "' is not a weights file");
    }
    if (auto v = r.u32("version"); v != kWeightsVersion) {
        throw FormatError(FormatError::Kind::UnsupportedVersion, "weights version " + std::to_string(v));
    }
    const auto len = r.u32("metadata length");
    Json meta;
    try {
        meta = Json::parse(r.bytes(len, "metadata"));
    } catch (const Json::parse_error& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("weights metadata: ") + e.what());
    }
    const auto params = r.tensor("parameters");

    ModelInfo info;
    info.model_id = model_id.empty() ? meta.at("model_id").get<std::string>() : model_id;
    info.input_h = meta.at("input").at(0).get<int>();
    info.input_w = meta.at("input").at(1).get<int>();
    info.channels = meta.at("input").at(2).get<int>();
    info.class_count = meta.at("classes").get<int>();
    info.mean = meta.value("mean", std::vector<float>{});
    info.std = meta.value("std", std::vector<float>{});
    info.grad_capable = meta.value("grad_capable", true);

    nn::Network<float> net({info.input_h, info.input_w, info.channels}, meta.at("layers"));
    net.set_params(params.data);
    return std::make_unique<NetworkClassifier>(std::move(info), std::move(net));
}

// ---------------------------------------------------------------------------

std::string model_root() {
    if (const char* env = std::getenv("TSCUAP_MODEL_ROOT"); env && *env) return env;
    return TSCUAP_DEFAULT_MODEL_DIR;
}

std::string data_root() {
    if (const char* env = std::getenv("TSCUAP_DATA_ROOT"); env && *env) return env;
    return TSCUAP_DEFAULT_DATA_DIR;
}

std::vector<RegistryEntry> registry_entries(const std::string& registry_path) {
    const std::string path = registry_path.empty() ? (fs::path(model_root()) / "registry.json").string()
                                                   : registry_path;
    Json doc;
    try {
        doc = Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw RegistryError("model registry '" + path + "' is not valid JSON: " + e.what());
    } catch (const IoError&) {
        throw RegistryError("model registry '" + path + "' not found; set TSCUAP_MODEL_ROOT");
    }
    std::vector<RegistryEntry> out;
    for (const auto& [id, e] : doc.at("models").items()) {
        RegistryEntry entry;
        entry.model_id = id;
        entry.loader = e.value("loader", "weights");
        entry.file = e.value("file", "");
        if (!entry.file.empty() && fs::path(entry.file).is_relative()) {
            entry.file = (fs::path(path).parent_path() / entry.file).string();
        }
        entry.description = e.value("description", "");
        entry.reason = e.value("reason", "");
        if (e.contains("input")) {
            entry.input_h = e["input"].at(0).get<int>();
            entry.input_w = e["input"].at(1).get<int>();
            entry.channels = e["input"].at(2).get<int>();
        }
        entry.class_count = e.value("classes", 0);
        out.push_back(std::move(entry));
    }
    return out;
}

RegistryEntry registry_entry(const std::string& model_id, const std::string& registry_path) {
    auto entries = registry_entries(registry_path);
    for (auto& e : entries) {
        if (e.model_id == model_id) return e;
    }
    std::string ids;
    for (const auto& e : entries) ids += (ids.empty() ? "" : ", ") + e.model_id;
    throw RegistryError("unknown model id '" + model_id + "'; available: " + ids);
}

std::shared_ptr<const ClassifierAdapter> load_classifier(const std::string& model_id,
                                                         const std::string& registry_path) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<const ClassifierAdapter>> cache;

    const RegistryEntry entry = registry_entry(model_id, registry_path);
    if (entry.loader == "unavailable" || (entry.loader == "weights" && !fs::exists(entry.file))) {
        std::string msg = "pretrained weights for '" + model_id + "' are not available in this environment";
        if (!entry.file.empty()) msg += " (expected " + entry.file + ")";
        if (!entry.reason.empty()) msg += ": " + entry.reason;
        msg += "; the bundled desk-scale models are always available offline";
        throw RegistryError(msg);
    }
    if (entry.loader != "weights") throw RegistryError("unknown loader '" + entry.loader + "'");

    const std::string key = entry.file + "#" + model_id;
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    std::shared_ptr<const ClassifierAdapter> adapter = load_network_model(entry.file, model_id);
    cache.emplace(key, adapter);
    return adapter;
}

}  // namespace tscuap
