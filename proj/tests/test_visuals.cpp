#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "tscuap/binio.hpp"
#include "tscuap/image_io.hpp"
#include "tscuap/tiling.hpp"
#include "tscuap/visuals.hpp"

using namespace tscuap;

namespace {

UapArtifact artifact(int alpha, std::uint64_t seed) {
    const TileSpec spec(alpha, 32, 32);
    std::mt19937_64 rng(seed);
    const NormBudget budget(NormKind::Linf, 0.04);
    Patch v = project_linf(Patch(fixtures::random_array(spec.patch_h(), spec.patch_w(), 3, rng, -0.04, 0.04)), 0.04);
    return UapArtifact{v, spec, budget, Json::object()};
}

}  // namespace

TEST(Rescale, SpansFullRange) {
    std::mt19937_64 rng(1);
    const Array3 a = fixtures::random_array(5, 5, 3, rng, -0.03, 0.02);
    double lo = 0, hi = 0;
    const auto px = rescale_for_display(a, &lo, &hi);
    EXPECT_EQ(*std::min_element(px.begin(), px.end()), 0);
    EXPECT_EQ(*std::max_element(px.begin(), px.end()), 255);
    EXPECT_EQ(lo, *std::min_element(a.data.begin(), a.data.end()));
    EXPECT_EQ(hi, *std::max_element(a.data.begin(), a.data.end()));
}

TEST(Rescale, ConstantInputIsMidGray) {
    for (float v : {0.0f, 0.3f}) {
        const auto px = rescale_for_display(Array3(3, 3, 3, v));
        EXPECT_TRUE(std::all_of(px.begin(), px.end(), [](std::uint8_t p) { return p == 128; }));
    }
}

TEST(Render, UapImageShowsTileBlocks) {
    const auto art = artifact(4, 2);
    const auto dir = fixtures::temp_dir("visuals_blocks");
    render_visuals(art, nullptr, dir.string());
    const Array3 img = read_png((dir / "uap.png").string());
    ASSERT_EQ(img.h, 32);
    ASSERT_EQ(img.w, 32);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j)
            for (int k = 0; k < 3; ++k) ASSERT_EQ(img(i, j, k), img(i % 8, j % 8, k)) << i << "," << j;

    const Json side = Json::parse(read_file((dir / "uap.json").string()));
    EXPECT_EQ(side["alpha"], 4);
    EXPECT_FALSE(side["constant_fallback"].get<bool>());
    EXPECT_LT(side["min"].get<double>(), side["max"].get<double>());
}

TEST(Render, WritesSamplePairs) {
    const auto art = artifact(2, 3);
    const auto samples = sample_dataset("desk10", 2, 3, Split::Validation, 0);
    const auto dir = fixtures::temp_dir("visuals_pairs");
    VisualsOptions opts;
    opts.max_pairs = 4;
    const auto written = render_visuals(art, &samples, dir.string(), opts);
    EXPECT_EQ(written.size(), 2u + 2u * 4u);
    for (int i = 0; i < 4; ++i) {
        EXPECT_TRUE(std::filesystem::exists(dir / ("clean_" + std::to_string(i) + ".png")));
        EXPECT_TRUE(std::filesystem::exists(dir / ("perturbed_" + std::to_string(i) + ".png")));
    }
    const Array3 clean = read_png((dir / "clean_0.png").string());
    EXPECT_EQ(clean.h, 32);
}

TEST(Render, ZeroPerturbationFallsBackToMidGray) {
    const TileSpec spec(8, 32, 32);
    const UapArtifact art{new_patch(spec, 3), spec, NormBudget(NormKind::Linf, 0.1), Json::object()};
    const auto dir = fixtures::temp_dir("visuals_zero");
    render_visuals(art, nullptr, dir.string());
    const Array3 img = read_png((dir / "uap.png").string());
    for (float v : img.data) ASSERT_FLOAT_EQ(v, 128.0f / 255.0f);
    EXPECT_TRUE(Json::parse(read_file((dir / "uap.json").string()))["constant_fallback"].get<bool>());
}
