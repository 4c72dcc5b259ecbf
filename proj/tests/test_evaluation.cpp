#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "tscuap/evaluation.hpp"
#include "tscuap/tiling.hpp"

using namespace tscuap;

namespace {

// Predicts floor(3 * mean pixel), capped at 2. Eval-only.
class BrightnessBins final : public ClassifierAdapter {
public:
    BrightnessBins(int h, int w) : ClassifierAdapter(make_info(h, w)) {}

protected:
    Logits forward_normalized(const ImageBatch& x) const override {
        Logits z = Logits::Zero(x.n, 3);
        for (int b = 0; b < x.n; ++b) {
            const auto s = x.sample(b);
            double mean = 0;
            for (float v : s) mean += v;
            mean /= s.size();
            z(b, std::min(2, static_cast<int>(std::floor(3 * mean + 1e-9)))) = 1.0;
        }
        return z;
    }
    Backprop backprop_normalized(const ImageBatch&, const LogitsGradFn&) const override {
        throw ValidationError("eval-only");
    }

private:
    static ModelInfo make_info(int h, int w) {
        ModelInfo m = fixtures::info("bins", h, w, 3, 3);
        m.grad_capable = false;
        return m;
    }
};

ImageBatch constant_images(const std::vector<float>& levels, int h, int w) {
    ImageBatch b(static_cast<int>(levels.size()), h, w, 3);
    for (int i = 0; i < b.n; ++i) std::fill(b.sample(i).begin(), b.sample(i).end(), levels[i]);
    return b;
}

Perturbation constant_delta(float v, int h, int w) { return Perturbation(Array3(h, w, 3, v), PerturbationOrigin::Loaded); }

std::vector<std::string> ids(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("s" + std::to_string(i));
    return out;
}

// Random linear model whose logits are centred on mid-gray images, so that
// predictions vary across inputs.
std::shared_ptr<LinearClassifier> centred_linear(int k, std::uint64_t seed) {
    const auto base = fixtures::random_linear(4, 4, 3, k, seed);
    const Eigen::VectorXd bias = -0.5 * base->weights().rowwise().sum().transpose();
    return std::make_shared<LinearClassifier>(base->info(), base->weights(), bias);
}

UapArtifact random_artifact(int alpha, std::uint64_t seed, double eps = 10.0 / 255) {
    const TileSpec spec(alpha, 32, 32);
    std::mt19937_64 rng(seed);
    Patch v(fixtures::random_array(spec.patch_h(), spec.patch_w(), 3, rng, -eps, eps));
    v = project_linf(v, eps);
    const NormBudget budget(NormKind::Linf, eps);
    Json meta = artifact_metadata(spec, budget, AttackConfig(), "desk_cnn_cifar10", std::nullopt);
    return UapArtifact{v, spec, budget, meta};
}

}  // namespace

TEST(FoolingRatio, ZeroPerturbationFoolsNothing) {
    const auto model = fixtures::random_linear(4, 4, 3, 5, 2);
    std::mt19937_64 rng(1);
    const auto x = fixtures::random_images(20, 4, 4, 3, rng);
    const auto r = evaluate_perturbation(constant_delta(0.0f, 4, 4), *model, x, ids(20), 3, Json::object());
    EXPECT_EQ(r.fooling_ratio(), 0.0);
    EXPECT_EQ(*r.targeted_fooling_ratio(), 0.0);
}

TEST(FoolingRatio, ThreeSampleEnumeration) {
    // Clean bins 0, 1, 2; after +0.3: 1, 2, 2 (the last saturates at 1.0).
    BrightnessBins model(2, 2);
    const auto x = constant_images({0.1f, 0.4f, 0.7f}, 2, 2);
    const auto r = evaluate_perturbation(constant_delta(0.3f, 2, 2), model, x, ids(3), 2, Json::object());
    EXPECT_EQ(r.flipped(), 2);
    EXPECT_EQ(r.fooling_ratio(), 2.0 / 3.0);
    EXPECT_EQ(*r.targeted_hits(), 1);
    EXPECT_EQ(*r.targeted_fooling_ratio(), 1.0 / 3.0);
    EXPECT_LE(*r.targeted_fooling_ratio(), r.fooling_ratio());
}

TEST(FoolingRatio, FlipEverythingGivesOne) {
    BrightnessBins model(2, 2);
    const auto x = constant_images({0.1f, 0.4f, 0.05f, 0.45f}, 2, 2);
    const auto r = evaluate_perturbation(constant_delta(0.3f, 2, 2), model, x, ids(4), std::nullopt, Json::object());
    EXPECT_EQ(r.fooling_ratio(), 1.0);
    EXPECT_FALSE(r.targeted_fooling_ratio());
}

TEST(FoolingRatio, ReferenceIsCleanPredictionNotGroundTruth) {
    BrightnessBins model(2, 2);
    const auto testset = fixtures::make_dataset(constant_images({0.1f, 0.4f}, 2, 2), {2, 2}, 3);
    EXPECT_EQ(fooling_ratio(constant_delta(0.0f, 2, 2), model, testset).fooling_ratio(), 0.0);
}

TEST(FoolingRatio, InvariantToSampleOrderAndEvalBatch) {
    const auto model = centred_linear(4, 6);
    std::mt19937_64 rng(2);
    const auto x = fixtures::random_images(30, 4, 4, 3, rng);
    const Perturbation d(fixtures::random_array(4, 4, 3, rng, -0.2, 0.2), PerturbationOrigin::Loaded);
    const auto base = evaluate_perturbation(d, *model, x, ids(30), 1, Json::object());
    EXPECT_GT(base.flipped(), 0);

    std::vector<int> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ImageBatch shuffled(30, 4, 4, 3);
    for (int i = 0; i < 30; ++i) std::copy_n(x.sample(perm[i]).begin(), x.sample_size(), shuffled.sample(i).begin());
    EvalOptions small;
    small.eval_batch = 7;
    const auto other = evaluate_perturbation(d, *model, shuffled, ids(30), 1, Json::object(), small);
    EXPECT_EQ(other.flipped(), base.flipped());
    EXPECT_EQ(other.targeted_hits(), base.targeted_hits());
}

TEST(FoolingRatio, RejectsShapeMismatchAndBadTarget) {
    const auto model = fixtures::random_linear(4, 4, 3, 4, 6);
    std::mt19937_64 rng(2);
    const auto x = fixtures::random_images(3, 4, 4, 3, rng);
    EXPECT_THROW(evaluate_perturbation(constant_delta(0, 8, 8), *model, x, ids(3), std::nullopt, {}), ShapeError);
    EXPECT_THROW(evaluate_perturbation(constant_delta(0, 4, 4), *model, x, ids(3), 4, {}), ValidationError);
}

TEST(FoolingRatio, TargetedNeverExceedsUntargetedOnRandomReports) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const auto model = centred_linear(3, trial);
        const auto x = fixtures::random_images(15, 4, 4, 3, rng);
        const Perturbation d(fixtures::random_array(4, 4, 3, rng, -0.3, 0.3), PerturbationOrigin::Loaded);
        const auto r = evaluate_perturbation(d, *model, x, ids(15), trial % 3, Json::object());
        EXPECT_LE(*r.targeted_fooling_ratio(), r.fooling_ratio());
    }
}

TEST(FitPerturbation, ResizeKeepsLinfBudget) {
    const auto art = random_artifact(4, 3);
    const auto fitted = fit_perturbation(art.perturbation(), art.budget, 48, 40);
    EXPECT_EQ(fitted.origin(), PerturbationOrigin::Resized);
    EXPECT_EQ(fitted.h(), 48);
    EXPECT_LE(measure_norm(fitted.values(), NormKind::Linf), art.budget.epsilon());
    EXPECT_EQ(fit_perturbation(art.perturbation(), art.budget, 32, 32).values(), art.perturbation().values());
}

TEST(Transfer, SixArtifactsTwoModelsGiveTwelveCells) {
    std::vector<NamedArtifact> arts;
    int a = 1;
    for (int i = 0; i < 6; ++i, a *= 2) arts.push_back({"a" + std::to_string(a), random_artifact(a, i)});
    const std::vector<std::string> targets{"desk_cnn_cifar10", "desk_cnn_b_cifar10"};
    const DatasetSpec ts("desk10", 10, 10, 2, Split::Validation, 1);
    SweepOptions opts;
    opts.workers = 2;
    const auto m = transfer_sweep(arts, targets, ts, opts);
    ASSERT_EQ(m.cells.size(), 12u);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 2; ++c) {
            const auto& cell = m.at(r, c);
            EXPECT_EQ(cell.source, arts[r].id);
            EXPECT_EQ(cell.target, targets[c]);
            ASSERT_TRUE(cell.report) << cell.error;
            EXPECT_EQ(cell.report->n_evaluated(), 20);
        }
    std::istringstream lines(to_jsonl(m));
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
        const Json j = Json::parse(line);
        EXPECT_TRUE(j.contains("report"));
        ++count;
    }
    EXPECT_EQ(count, 12);
    EXPECT_NE(render_markdown(m).find("desk_cnn_b_cifar10"), std::string::npos);
}

TEST(Transfer, SingleCellAgreesWithDirectEvaluation) {
    const auto art = random_artifact(2, 9, 0.1);
    const DatasetSpec ts("desk10", 10, 10, 3, Split::Validation, 4);
    const auto m = transfer_sweep({{"x", art}}, {"desk_cnn_cifar10"}, ts);
    ASSERT_TRUE(m.at(0, 0).report);
    const auto model = load_classifier("desk_cnn_cifar10");
    const auto direct = fooling_ratio(art.perturbation(), *model, sample_dataset(ts));
    EXPECT_EQ(m.at(0, 0).report->flipped(), direct.flipped());
}

TEST(Transfer, FailedTargetIsRecordedAndSweepContinues) {
    const auto art = random_artifact(2, 1);
    const DatasetSpec ts("desk10", 10, 2, 2, Split::Validation, 0);
    const auto m = transfer_sweep({{"x", art}}, {"resnet50", "desk_cnn_cifar10"}, ts);
    EXPECT_FALSE(m.at(0, 0).report);
    EXPECT_FALSE(m.at(0, 0).error.empty());
    EXPECT_TRUE(m.at(0, 1).report);
}

TEST(Ablation, FullMaskMatchesUnmaskedAndCornersAreSubsets) {
    const auto art = random_artifact(4, 5, 0.15);
    const auto model = load_classifier("desk_cnn_cifar10");
    const auto ts = sample_dataset("desk10", 10, 5, Split::Validation, 2);
    std::vector<MaskRegion> regions;
    for (auto k : {MaskKind::Full, MaskKind::TopLeft, MaskKind::BottomRight}) regions.emplace_back(k, art.spec);
    const auto reports = position_ablation(art, *model, ts, regions);
    ASSERT_EQ(reports.size(), 3u);
    EXPECT_EQ(reports[0].flipped(), fooling_ratio(art.perturbation(), *model, ts).flipped());
    EXPECT_EQ(reports[1].uap_metadata()["mask"], "top_left");
    EXPECT_THROW(position_ablation(art, *model, ts, {MaskRegion(MaskKind::Full, TileSpec(2, 32, 32))}),
                 ValidationError);
}

TEST(DataEfficiency, CellCountAndBatchShrinking) {
    const auto model = load_classifier("desk_cnn_cifar10");
    const auto ts = sample_dataset("desk10", 10, 2, Split::Validation, 0);
    AttackConfigFields f;
    f.epochs = 1;
    DataEfficiencyOptions opts;
    opts.seeds = {0, 1};
    const auto t = data_efficiency_sweep({{2, 2}, {3, 1}}, {1, 8}, *model, NormBudget(NormKind::Linf, 10.0 / 255),
                                         AttackConfig(f), ts, opts);
    ASSERT_EQ(t.cells.size(), 8u);
    for (const auto& c : t.cells) {
        ASSERT_TRUE(c.fooling_ratio) << c.error;
        EXPECT_EQ(c.batch_size, c.c * c.n);
    }
    EXPECT_EQ(t.cells[0].c, 2);
    EXPECT_EQ(t.cells[0].alpha, 1);
    EXPECT_EQ(t.cells[1].seed, 1u);
    EXPECT_TRUE(t.median({2, 2}, 8));
    EXPECT_FALSE(t.median({5, 5}, 8));
}

TEST(DataEfficiency, MedianOfSeeds) {
    DataEfficiencyTable t{{{1, 1}}, {2}, {0, 1, 2}, {}};
    for (double fr : {0.5, 0.1, 0.3}) t.cells.push_back({1, 1, 2, 0, 1, fr, ""});
    EXPECT_EQ(*t.median({1, 1}, 2), 0.3);
    t.cells.push_back({1, 1, 2, 3, 1, std::nullopt, "failed"});
    EXPECT_EQ(*t.median({1, 1}, 2), 0.3);
}

TEST(Reports, JsonRoundTripReaggregates) {
    const auto model = centred_linear(4, 6);
    std::mt19937_64 rng(7);
    const auto x = fixtures::random_images(11, 4, 4, 3, rng);
    const Perturbation d(fixtures::random_array(4, 4, 3, rng, -0.3, 0.3), PerturbationOrigin::Loaded);
    const auto r = evaluate_perturbation(d, *model, x, ids(11), 0, Json{{"alpha", 1}});
    const auto back = eval_report_from_json(Json::parse(to_json(r).dump()));
    EXPECT_EQ(back.fooling_ratio(), r.fooling_ratio());
    EXPECT_EQ(back.targeted_hits(), r.targeted_hits());
    int flipped = 0;
    for (const auto& s : back.samples()) flipped += s.clean_label != s.adv_label;
    EXPECT_EQ(flipped, r.flipped());
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
    std::vector<int> hits(50, 0);
    parallel_for(50, 4, [&](int i) { ++hits[i]; });
    EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 50);
}
