#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "tscuap/core.hpp"
#include "tscuap/datasets.hpp"
#include "tscuap/modelzoo.hpp"

namespace fixtures {

using namespace tscuap;

inline Array3 random_array(int h, int w, int c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Array3 a(h, w, c);
    for (float& v : a.data) v = static_cast<float>(u(rng));
    return a;
}

inline ImageBatch random_images(int n, int h, int w, int c, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ImageBatch b(n, h, w, c);
    for (float& v : b.data) v = u(rng);
    return b;
}

inline ModelInfo info(const std::string& id, int h, int w, int c, int k) {
    ModelInfo m;
    m.model_id = id;
    m.input_h = h;
    m.input_w = w;
    m.channels = c;
    m.class_count = k;
    return m;
}

inline std::shared_ptr<LinearClassifier> random_linear(int h, int w, int c, int k, std::uint64_t seed,
                                                       double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Logits W(k, h * w * c);
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = n(rng);
    Eigen::VectorXd b(k);
    for (int i = 0; i < k; ++i) b(i) = n(rng);
    return std::make_shared<LinearClassifier>(info("linear", h, w, c, k), W, b);
}

inline SampledDataset make_dataset(ImageBatch images, std::vector<int> labels, int class_count) {
    SampledDataset d;
    d.spec = DatasetSpec("fixture", class_count, class_count, 1, Split::Validation, 0);
    for (int i = 0; i < images.n; ++i) d.ids.push_back("fixture/" + std::to_string(i));
    d.images = std::move(images);
    d.labels = std::move(labels);
    return d;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() /
             ("tscuap_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace fixtures
