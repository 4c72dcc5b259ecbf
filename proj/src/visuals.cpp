#include "tscuap/visuals.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "tscuap/binio.hpp"
#include "tscuap/image_io.hpp"
#include "tscuap/tiling.hpp"

namespace tscuap {

namespace fs = std::filesystem;

std::vector<std::uint8_t> rescale_for_display(const Array3& values, double* lo_out, double* hi_out) {
    double lo = 0.0;
    double hi = 0.0;
    if (!values.data.empty()) {
        const auto [mn, mx] = std::minmax_element(values.data.begin(), values.data.end());
        lo = *mn;
        hi = *mx;
    }
    if (lo_out) *lo_out = lo;
    if (hi_out) *hi_out = hi;
    std::vector<std::uint8_t> px(values.size(), 128);
    if (hi > lo) {
        for (std::size_t i = 0; i < px.size(); ++i) {
            const double t = (values.data[i] - lo) / (hi - lo);
            px[i] = static_cast<std::uint8_t>(std::clamp(std::lround(t * 255.0), 0L, 255L));
        }
    }
    return px;
}

std::vector<std::string> render_visuals(const UapArtifact& artifact, const SampledDataset* samples,
                                        const std::string& out_dir, const VisualsOptions& options) {
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    const Perturbation delta = artifact.perturbation();
    const Array3& d = delta.values();

    double lo = 0.0;
    double hi = 0.0;
    const auto px = rescale_for_display(d, &lo, &hi);
    const std::string uap_png = (fs::path(out_dir) / (options.stem + ".png")).string();
    write_png(uap_png, d.h, d.w, d.c, px);
    written.push_back(uap_png);

    Json side{{"image", options.stem + ".png"},
              {"rescale", "min-max"},
              {"min", lo},
              {"max", hi},
              {"constant_fallback", !(hi > lo)},
              {"alpha", artifact.spec.alpha()},
              {"epsilon", artifact.budget.epsilon()},
              {"norm", to_string(artifact.budget.p())},
              {"pairs", Json::array()}};

    if (samples) {
        const ImageBatch& imgs = samples->images;
        if (imgs.h != d.h || imgs.w != d.w || imgs.c != d.c) {
            throw ShapeError("sample images do not match the perturbation shape");
        }
        const int count = std::min(options.max_pairs, imgs.n);
        for (int b = 0; b < count; ++b) {
            Array3 clean(imgs.h, imgs.w, imgs.c);
            auto s = imgs.sample(b);
            std::copy(s.begin(), s.end(), clean.data.begin());
            Array3 adv = clean;
            for (std::size_t i = 0; i < adv.data.size(); ++i) {
                adv.data[i] = std::clamp(adv.data[i] + d.data[i], 0.0f, 1.0f);
            }
            const std::string cp = (fs::path(out_dir) / ("clean_" + std::to_string(b) + ".png")).string();
            const std::string ap = (fs::path(out_dir) / ("perturbed_" + std::to_string(b) + ".png")).string();
            write_png(cp, clean);
            write_png(ap, adv);
            written.push_back(cp);
            written.push_back(ap);
            side["pairs"].push_back({{"id", samples->ids.at(b)},
                                     {"clean", fs::path(cp).filename().string()},
                                     {"perturbed", fs::path(ap).filename().string()}});
        }
    }
    const std::string side_path = (fs::path(out_dir) / (options.stem + ".json")).string();
    write_file_atomic(side_path, side.dump(2) + "\n");
    written.push_back(side_path);
    return written;
}

}  // namespace tscuap
