#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "tscuap/losses.hpp"

using namespace tscuap;

namespace {

Logits rows(std::initializer_list<std::initializer_list<double>> values) {
    Logits m(values.size(), values.begin()->size());
    int r = 0;
    for (const auto& row : values) {
        int c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

Logits random_logits(int m, int k, std::mt19937_64& rng, double scale = 3.0) {
    std::normal_distribution<double> n(0.0, scale);
    Logits z(m, k);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
    return z;
}

std::vector<int> random_labels(int m, int k, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, k - 1);
    std::vector<int> y(m);
    for (int& v : y) v = u(rng);
    return y;
}

// Central finite differences of f at z.
Logits numeric_grad(const std::function<double(const Logits&)>& f, const Logits& z, double h = 1e-6) {
    Logits g(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        Logits a = z, b = z;
        a.data()[i] += h;
        b.data()[i] -= h;
        g.data()[i] = (f(a) - f(b)) / (2 * h);
    }
    return g;
}

double rel(const Logits& a, const Logits& b) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

const double kLn1pE2 = std::log1p(std::exp(2.0));

}  // namespace

TEST(CrossEntropy, HandValues) {
    EXPECT_NEAR(loss_ce_untargeted(LogitsBatch(rows({{2, 0}}), std::vector<int>{1})).value, kLn1pE2, 1e-12);
    EXPECT_NEAR(kLn1pE2, 2.1269, 1e-4);
    EXPECT_NEAR(loss_ce_targeted(LogitsBatch(rows({{0, 2}})), 0).value, kLn1pE2, 1e-12);
    for (int k : {2, 5, 10}) {
        const Logits u = Logits::Constant(3, k, 0.7);
        EXPECT_NEAR(loss_ce_untargeted(LogitsBatch(u, std::vector<int>{0, 1, 1})).value, std::log(k), 1e-12);
        EXPECT_NEAR(loss_ce_targeted(LogitsBatch(u), k - 1).value, std::log(k), 1e-12);
    }
    EXPECT_LT(loss_ce_untargeted(LogitsBatch(rows({{60, 0, 0}}), std::vector<int>{0})).value, 1e-20);
    EXPECT_LT(loss_ce_targeted(LogitsBatch(rows({{0, 0, 60}})), 2).value, 1e-20);
}

TEST(CrossEntropy, MissingLabelsAndBadTarget) {
    EXPECT_THROW(loss_ce_untargeted(LogitsBatch(rows({{1, 2}}))), ValidationError);
    EXPECT_THROW(loss_ce_targeted(LogitsBatch(rows({{1, 2}})), 2), ValidationError);
    EXPECT_THROW(LogitsBatch(rows({{1, 2}}), std::vector<int>{3}), ValidationError);
    EXPECT_THROW(LogitsBatch(rows({{1, NAN}})), NumericError);
}

TEST(CrossEntropy, ShiftInvariance) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 10; ++t) {
        const Logits z = random_logits(6, 7, rng);
        const auto y = random_labels(6, 7, rng);
        Logits s = z;
        for (int r = 0; r < s.rows(); ++r) s.row(r).array() += 100.0 * (r + 1);
        EXPECT_NEAR(loss_ce_untargeted(LogitsBatch(z, y)).value, loss_ce_untargeted(LogitsBatch(s, y)).value, 1e-6);
        EXPECT_NEAR(loss_ce_targeted(LogitsBatch(z), 3).value, loss_ce_targeted(LogitsBatch(s), 3).value, 1e-6);
    }
}

TEST(DfMargin, HandValues) {
    const std::vector<int> gt0{0};
    EXPECT_DOUBLE_EQ(loss_df_margin(LogitsBatch(rows({{3, 1, 0}}), gt0), 0.0).value, 2.0);
    EXPECT_DOUBLE_EQ(loss_df_margin(LogitsBatch(rows({{0, 5, 0}}), gt0), 1.0).value, -1.0);
    EXPECT_DOUBLE_EQ(loss_df_margin(LogitsBatch(rows({{4, 4, 1}}), gt0), 0.0).value, 0.0);
    EXPECT_THROW(loss_df_margin(LogitsBatch(rows({{1, 2}})), 0.0), ValidationError);
}

TEST(DfMargin, BoundedBelowByMinusKappa) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
        const double kappa = t % 5;
        const Logits z = random_logits(8, 5, rng);
        const LogitsBatch b(z, random_labels(8, 5, rng));
        const double v = loss_df_margin(b, kappa).value;
        EXPECT_GE(v, -kappa);
        const auto margins = df_margins(b);
        bool all_clamped = true;
        for (double m : margins) all_clamped &= m <= -kappa;
        EXPECT_EQ(v == -kappa, all_clamped);
    }
}

TEST(CosSim, HandValues) {
    const Logits c = rows({{1, 2, 3}, {-1, 0.5, 2}});
    EXPECT_NEAR(loss_cos_sim(LogitsBatch(c), LogitsBatch(c)).value, 1.0, 1e-12);
    EXPECT_NEAR(loss_cos_sim(LogitsBatch(c), LogitsBatch(-c)).value, -1.0, 1e-12);
    EXPECT_NEAR(loss_cos_sim(LogitsBatch(rows({{1, 0}})), LogitsBatch(rows({{1, 1}}))).value, 1.0 / std::sqrt(2.0),
                1e-12);
    EXPECT_THROW(loss_cos_sim(LogitsBatch(rows({{0, 0}})), LogitsBatch(rows({{1, 1}}))), NumericError);
    EXPECT_THROW(loss_cos_sim(LogitsBatch(rows({{1, 0}})), LogitsBatch(rows({{1, 1, 1}}))), ShapeError);
}

TEST(CosSim, RangeProperty) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        const double v =
            loss_cos_sim(LogitsBatch(random_logits(4, 6, rng)), LogitsBatch(random_logits(4, 6, rng))).value;
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Gradients, MatchCentralDifferences) {
    std::mt19937_64 rng(4);
    int df_checked = 0;
    for (int t = 0; t < 10; ++t) {
        const Logits z = random_logits(5, 6, rng);
        const auto y = random_labels(5, 6, rng);
        const Logits clean = random_logits(5, 6, rng);

        auto ce = [&](const Logits& x) { return loss_ce_untargeted(LogitsBatch(x, y)).value; };
        EXPECT_LE(rel(loss_ce_untargeted(LogitsBatch(z, y)).grad, numeric_grad(ce, z)), 1e-3);

        auto tce = [&](const Logits& x) { return loss_ce_targeted(LogitsBatch(x), 2).value; };
        EXPECT_LE(rel(loss_ce_targeted(LogitsBatch(z), 2).grad, numeric_grad(tce, z)), 1e-3);

        auto cs = [&](const Logits& x) { return loss_cos_sim(LogitsBatch(clean), LogitsBatch(x)).value; };
        EXPECT_LE(rel(loss_cos_sim(LogitsBatch(clean), LogitsBatch(z)).grad, numeric_grad(cs, z)), 1e-3);

        // df_margin: skip points near the clamp or a runner-up tie.
        const double kappa = 1.0;
        const LogitsBatch b(z, y);
        bool near_kink = false;
        for (double m : df_margins(b)) near_kink |= std::abs(m + kappa) < 1e-3;
        for (int r = 0; r < z.rows(); ++r) {
            std::vector<double> others;
            for (int k = 0; k < z.cols(); ++k)
                if (k != y[r]) others.push_back(z(r, k));
            std::sort(others.rbegin(), others.rend());
            near_kink |= others[0] - others[1] < 1e-3;
        }
        if (near_kink) continue;
        auto df = [&](const Logits& x) { return loss_df_margin(LogitsBatch(x, y), kappa).value; };
        EXPECT_LE(rel(loss_df_margin(b, kappa).grad, numeric_grad(df, z)), 1e-3);
        ++df_checked;
    }
    EXPECT_GT(df_checked, 5);
}

TEST(Objective, UniformMinimizeForm) {
    const LogitsBatch adv(rows({{2, 0}}), std::vector<int>{1});
    const Objective ce(LossId::CrossEntropy, 0, std::nullopt);
    const auto r = ce.evaluate(adv);
    EXPECT_NEAR(r.loss, kLn1pE2, 1e-12);
    EXPECT_NEAR(r.objective, -kLn1pE2, 1e-12);
    EXPECT_TRUE(r.grad.isApprox(-loss_ce_untargeted(adv).grad));

    const Objective tce(LossId::CrossEntropy, 0, 0);
    EXPECT_FALSE(tce.needs_labels());
    EXPECT_NEAR(tce.evaluate(LogitsBatch(rows({{0, 2}}))).objective, kLn1pE2, 1e-12);

    const Objective cs(LossId::CosSim, 0, std::nullopt);
    EXPECT_TRUE(cs.needs_clean_logits());
    EXPECT_THROW(cs.evaluate(adv), ValidationError);
    EXPECT_THROW(Objective(LossId::DfMargin, -1, std::nullopt), ValidationError);
    EXPECT_THROW(Objective(LossId::CosSim, 0, 1), ValidationError);
}

TEST(Registry, ListsThreeLosses) {
    const auto ids = registered_losses();
    EXPECT_EQ(ids, (std::vector<std::string>{"ce", "df_margin", "cos_sim"}));
}
