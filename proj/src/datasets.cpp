#include "tscuap/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>

#include "tscuap/binio.hpp"
#include "tscuap/image_io.hpp"
#include "tscuap/modelzoo.hpp"
#include "tscuap/tiling.hpp"

namespace tscuap {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// ---------------------------------------------------------------------------
// desk10

constexpr int kDeskTrainPerClass = 1000;
constexpr int kDeskValidationPerClass = 300;

class DeskSource final : public DataSource {
public:
    DeskSource() {
        const fs::path dir = fs::path(data_root()) / "desk_sources";
        const fs::path manifest = dir / "manifest.json";
        Json doc;
        try {
            doc = Json::parse(read_file(manifest.string()));
        } catch (const std::exception& e) {
            throw RegistryError("desk10 sources missing (" + manifest.string() +
                                "); set TSCUAP_DATA_ROOT: " + e.what());
        }
        for (const auto& cls : doc.at("classes")) {
            names_.push_back(cls.at("name").get<std::string>());
            files_.push_back((dir / cls.at("file").get<std::string>()).string());
        }
    }

    std::string id() const override { return "desk10"; }
    int class_count() const override { return static_cast<int>(names_.size()); }
    int items_in_class(Split split, int) const override {
        return split == Split::Train ? kDeskTrainPerClass : kDeskValidationPerClass;
    }
    std::optional<std::pair<int, int>> native_shape() const override { return std::pair{32, 32}; }
    std::string class_name(int cls) const override { return names_.at(cls); }

    Array3 load(Split split, int cls, int item) const override {
        const std::uint64_t seed =
            mix(mix(split == Split::Train ? 0x7a11ull : 0x5a1dull, static_cast<std::uint64_t>(cls)),
                static_cast<std::uint64_t>(item));
        return render_desk_crop(source(cls), seed);
    }

private:
    const Array3& source(int cls) const {
        std::lock_guard lock(mu_);
        auto it = cache_.find(cls);
        if (it == cache_.end()) {
            Array3 img = read_png(files_.at(cls));
            if (img.c == 1) {
                Array3 rgb(img.h, img.w, 3);
                for (int i = 0; i < img.h; ++i)
                    for (int j = 0; j < img.w; ++j)
                        for (int k = 0; k < 3; ++k) rgb(i, j, k) = img(i, j, 0);
                img = std::move(rgb);
            }
            it = cache_.emplace(cls, std::move(img)).first;
        }
        return it->second;
    }

    std::vector<std::string> names_;
    std::vector<std::string> files_;
    mutable std::mutex mu_;
    mutable std::map<int, Array3> cache_;
};

// ---------------------------------------------------------------------------
// cifar10 binary batches: records of 1 label byte + 3072 bytes (R, G, B planes).

constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

class CifarSource final : public DataSource {
public:
    explicit CifarSource(std::string root) : root_(std::move(root)) {
        index(Split::Train, {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                             "data_batch_4.bin", "data_batch_5.bin"});
        index(Split::Validation, {"test_batch.bin"});
    }

    std::string id() const override { return "cifar10"; }
    int class_count() const override { return 10; }
    int items_in_class(Split split, int cls) const override {
        return static_cast<int>(items_.at(split_key(split)).at(cls).size());
    }
    std::optional<std::pair<int, int>> native_shape() const override { return std::pair{32, 32}; }
    std::string class_name(int cls) const override {
        static const char* names[] = {"airplane", "automobile", "bird", "cat", "deer",
                                      "dog", "frog", "horse", "ship", "truck"};
        return names[cls];
    }

    Array3 load(Split split, int cls, int item) const override {
        const auto& [file, offset] = items_.at(split_key(split)).at(cls).at(item);
        std::ifstream in(file, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(offset));
        std::string rec(kCifarRecord, '\0');
        in.read(rec.data(), static_cast<std::streamsize>(kCifarRecord));
        if (!in) throw IoError("short read in '" + file + "'");
        Array3 img(32, 32, 3);
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < 32; ++i)
                for (int j = 0; j < 32; ++j) {
                    const auto byte = static_cast<unsigned char>(rec[1 + k * 1024 + i * 32 + j]);
                    img(i, j, k) = static_cast<float>(byte) / 255.0f;
                }
        return img;
    }

private:
    static int split_key(Split s) { return s == Split::Train ? 0 : 1; }

    void index(Split split, std::initializer_list<const char*> files) {
        auto& per_class = items_[split_key(split)];
        per_class.assign(10, {});
        bool any = false;
        for (const char* name : files) {
            const fs::path p = fs::path(root_) / name;
            if (!fs::exists(p)) continue;
            any = true;
            const std::string bytes = read_file(p.string());
            if (bytes.size() % kCifarRecord != 0) {
                throw FormatError(FormatError::Kind::Malformed, "'" + p.string() + "' is not a CIFAR-10 batch");
            }
            for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
                const auto label = static_cast<unsigned char>(bytes[off]);
                if (label >= 10) throw FormatError(FormatError::Kind::Malformed, "CIFAR-10 label out of range");
                per_class[label].push_back({p.string(), off});
            }
        }
        if (!any) {
            throw RegistryError("no CIFAR-10 " + to_string(split) + " batches under '" + root_ +
                                "'; set TSCUAP_CIFAR10_ROOT");
        }
    }

    std::string root_;
    std::map<int, std::vector<std::vector<std::pair<std::string, std::size_t>>>> items_;
};

// ---------------------------------------------------------------------------
// folder:<root>/<split>/<class>/*.png

class FolderSource final : public DataSource {
public:
    explicit FolderSource(std::string root) : root_(std::move(root)) {
        for (Split split : {Split::Train, Split::Validation}) {
            fs::path dir = fs::path(root_) / to_string(split);
            if (split == Split::Validation && !fs::exists(dir)) dir = fs::path(root_) / "val";
            if (!fs::is_directory(dir)) continue;
            std::vector<std::string> classes;
            for (const auto& e : fs::directory_iterator(dir)) {
                if (e.is_directory()) classes.push_back(e.path().filename().string());
            }
            std::sort(classes.begin(), classes.end());
            if (classes_.empty()) classes_ = classes;
            auto& per_class = files_[split == Split::Train ? 0 : 1];
            per_class.assign(classes_.size(), {});
            for (std::size_t c = 0; c < classes_.size(); ++c) {
                const fs::path cdir = dir / classes_[c];
                if (!fs::is_directory(cdir)) continue;
                for (const auto& f : fs::directory_iterator(cdir)) {
                    auto ext = f.path().extension().string();
                    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
                    if (ext == ".png") per_class[c].push_back(f.path().string());
                }
                std::sort(per_class[c].begin(), per_class[c].end());
            }
        }
        if (classes_.empty()) throw RegistryError("folder source '" + root_ + "' has no <split>/<class> directories");
    }

    std::string id() const override { return "folder:" + root_; }
    int class_count() const override { return static_cast<int>(classes_.size()); }
    int items_in_class(Split split, int cls) const override {
        auto it = files_.find(split == Split::Train ? 0 : 1);
        if (it == files_.end()) return 0;
        return static_cast<int>(it->second.at(cls).size());
    }
    std::string class_name(int cls) const override { return classes_.at(cls); }
    Array3 load(Split split, int cls, int item) const override {
        Array3 img = read_png(files_.at(split == Split::Train ? 0 : 1).at(cls).at(item));
        if (img.c == 1) {
            Array3 rgb(img.h, img.w, 3);
            for (std::size_t i = 0; i < img.data.size(); ++i)
                for (int k = 0; k < 3; ++k) rgb.data[i * 3 + k] = img.data[i];
            return rgb;
        }
        return img;
    }

private:
    std::string root_;
    std::vector<std::string> classes_;
    std::map<int, std::vector<std::vector<std::string>>> files_;
};

std::string cifar_root() {
    if (const char* env = std::getenv("TSCUAP_CIFAR10_ROOT"); env && *env) return env;
    return (fs::path(data_root()) / "cifar-10-batches-bin").string();
}

}  // namespace

std::string DataSource::item_id(Split split, int cls, int item) const {
    return id() + "/" + to_string(split) + "/" + std::to_string(cls) + "/" + std::to_string(item);
}

std::unique_ptr<DataSource> open_source(const std::string& source_id) {
    if (source_id == "desk10") return std::make_unique<DeskSource>();
    if (source_id == "cifar10") return std::make_unique<CifarSource>(cifar_root());
    if (source_id.rfind("folder:", 0) == 0) return std::make_unique<FolderSource>(source_id.substr(7));
    throw RegistryError("unknown dataset source '" + source_id + "'; known: desk10, cifar10, folder:<path>");
}

std::vector<std::string> known_sources() { return {"desk10", "cifar10", "folder:<path>"}; }

ImageBatch SampledDataset::gather(std::span<const int> indices) const {
    ImageBatch out(static_cast<int>(indices.size()), images.h, images.w, images.c);
    const std::size_t s = images.sample_size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(images.data.begin() + indices[i] * s, s, out.data.begin() + i * s);
    }
    return out;
}

std::vector<int> SampledDataset::class_histogram() const {
    std::vector<int> h(spec.class_count, 0);
    for (int y : labels) ++h.at(y);
    return h;
}

SampledDataset sample_dataset(const std::string& source_id, int c, int n, Split split, std::uint64_t seed,
                              std::optional<std::pair<int, int>> shape) {
    auto source = open_source(source_id);
    DatasetSpec spec(source_id, source->class_count(), c, n, split, seed);

    std::vector<int> short_classes;
    for (int k = 0; k < source->class_count(); ++k) {
        if (source->items_in_class(split, k) < n) short_classes.push_back(k);
    }
    if (source->class_count() - static_cast<int>(short_classes.size()) < c) {
        throw ValidationError("source '" + source_id + "' (" + to_string(split) + ") has fewer than " +
                              std::to_string(c) + " classes with at least " + std::to_string(n) + " items");
    }

    std::mt19937_64 rng(mix(seed, 0xda7aull));
    std::vector<int> eligible;
    for (int k = 0; k < source->class_count(); ++k) {
        if (std::find(short_classes.begin(), short_classes.end(), k) == short_classes.end()) eligible.push_back(k);
    }
    std::shuffle(eligible.begin(), eligible.end(), rng);
    std::vector<int> chosen(eligible.begin(), eligible.begin() + c);
    std::sort(chosen.begin(), chosen.end());

    if (!shape) shape = source->native_shape();
    SampledDataset out;
    out.spec = spec;
    std::vector<Array3> images;
    for (int cls : chosen) {
        std::vector<int> items(source->items_in_class(split, cls));
        std::iota(items.begin(), items.end(), 0);
        std::shuffle(items.begin(), items.end(), rng);
        for (int i = 0; i < n; ++i) {
            Array3 img = source->load(split, cls, items[i]);
            if (!shape) shape = std::pair{img.h, img.w};
            if (img.h != shape->first || img.w != shape->second) {
                img = resize_bilinear(img, shape->first, shape->second);
                for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
            }
            images.push_back(std::move(img));
            out.labels.push_back(cls);
            out.ids.push_back(source->item_id(split, cls, items[i]));
        }
    }
    const Array3& first = images.front();
    out.images = ImageBatch(static_cast<int>(images.size()), first.h, first.w, first.c);
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::copy(images[i].data.begin(), images[i].data.end(),
                  out.images.data.begin() + i * out.images.sample_size());
    }
    return out;
}

SampledDataset sample_dataset(const DatasetSpec& spec, std::optional<std::pair<int, int>> shape) {
    return sample_dataset(spec.source_id, spec.classes_chosen, spec.per_class, spec.split, spec.seed, shape);
}

Array3 render_desk_crop(const Array3& src, std::uint64_t item_seed, int out_size) {
    std::mt19937_64 rng(item_seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    const int H = src.h;
    const int W = src.w;
    const int max_side = std::max(40, static_cast<int>(std::min(H, W) * 0.7));
    const int size = static_cast<int>(uniform(40.0, max_side));
    const int y0 = static_cast<int>(u01(rng) * (H - size + 1));
    const int x0 = static_cast<int>(u01(rng) * (W - size + 1));
    const bool flip = u01(rng) < 0.5;
    const bool gray = u01(rng) < 0.3;
    const double contrast = uniform(0.6, 1.2);
    const double brightness = uniform(-0.15, 0.15);
    double tint[3];
    for (double& t : tint) t = uniform(-0.1, 0.1);
    std::normal_distribution<double> noise(0.0, 0.06);

    Array3 out(out_size, out_size, 3);
    const double scale = static_cast<double>(size) / out_size;
    for (int i = 0; i < out_size; ++i) {
        const double sy = std::clamp((i + 0.5) * scale - 0.5 + y0, 0.0, H - 1.0);
        const int ya = static_cast<int>(sy);
        const int yb = std::min(ya + 1, H - 1);
        const double ty = sy - ya;
        for (int j = 0; j < out_size; ++j) {
            const int jj = flip ? out_size - 1 - j : j;
            const double sx = std::clamp((jj + 0.5) * scale - 0.5 + x0, 0.0, W - 1.0);
            const int xa = static_cast<int>(sx);
            const int xb = std::min(xa + 1, W - 1);
            const double tx = sx - xa;
            double px[3];
            for (int k = 0; k < 3; ++k) {
                const double top = src(ya, xa, k) + tx * (src(ya, xb, k) - src(ya, xa, k));
                const double bot = src(yb, xa, k) + tx * (src(yb, xb, k) - src(yb, xa, k));
                px[k] = top + ty * (bot - top);
            }
            if (gray) {
                const double m = (px[0] + px[1] + px[2]) / 3.0;
                px[0] = px[1] = px[2] = m;
            }
            for (int k = 0; k < 3; ++k) {
                double v = (px[k] - 0.5) * contrast + 0.5 + brightness + tint[k] + noise(rng);
                out(i, j, k) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

}  // namespace tscuap
