#pragma once

// Dataset sources and (c, n) stratified sampling.
//
// Sources:
//   desk10            bundled procedural 32x32 corpus: 10 classes, each the
//                     set of augmented crops of one public-domain photograph
//   cifar10           CIFAR-10 binary batches under $TSCUAP_CIFAR10_ROOT or
//                     <data root>/cifar-10-batches-bin
//   folder:<path>     <path>/<split>/<class>/*.png

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tscuap/core.hpp"

namespace tscuap {

class DataSource {
public:
    virtual ~DataSource() = default;

    virtual std::string id() const = 0;
    virtual int class_count() const = 0;
    virtual int items_in_class(Split split, int cls) const = 0;
    virtual Array3 load(Split split, int cls, int item) const = 0;
    /// Shape images are resized to when the caller does not ask for one.
    virtual std::optional<std::pair<int, int>> native_shape() const { return std::nullopt; }
    virtual std::string class_name(int cls) const { return std::to_string(cls); }

    std::string item_id(Split split, int cls, int item) const;
};

std::unique_ptr<DataSource> open_source(const std::string& source_id);
std::vector<std::string> known_sources();

struct SampledDataset {
    DatasetSpec spec;
    ImageBatch images;  // (N, h, w, c) in [0,1]
    std::vector<int> labels;
    std::vector<std::string> ids;

    int size() const { return images.n; }
    /// Copies the listed samples into a new batch.
    ImageBatch gather(std::span<const int> indices) const;
    /// Histogram of labels (index = class id).
    std::vector<int> class_histogram() const;
};

/// Chooses `c` classes uniformly at random, then `n` distinct items per
/// class uniformly at random. Deterministic in `seed`. Images are resized
/// (bilinear) to `shape` when given, else to the source's native shape.
SampledDataset sample_dataset(const std::string& source_id, int c, int n, Split split,
                              std::uint64_t seed,
                              std::optional<std::pair<int, int>> shape = std::nullopt);
SampledDataset sample_dataset(const DatasetSpec& spec,
                              std::optional<std::pair<int, int>> shape = std::nullopt);

/// Renders one desk10 item directly from a source photograph; exposed so the
/// generator can be tested without the bundled files.
Array3 render_desk_crop(const Array3& source, std::uint64_t item_seed, int out_size = 32);

}  // namespace tscuap
