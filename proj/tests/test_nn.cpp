#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "tscuap/nn.hpp"

using namespace tscuap;
using fixtures::rel_err;

namespace {

Json small_cnn() {
    return Json::array({
        {{"type", "conv2d"}, {"in", 2}, {"out", 3}, {"kernel", 3}},
        {{"type", "relu"}},
        {{"type", "maxpool2"}},
        {{"type", "conv2d"}, {"in", 3}, {"out", 4}, {"kernel", 3}},
        {{"type", "relu"}},
        {{"type", "global_avg_pool"}},
        {{"type", "dense"}, {"in", 4}, {"out", 5}},
    });
}

Json flat_net() {
    return Json::array({
        {{"type", "conv2d"}, {"in", 2}, {"out", 3}, {"kernel", 3}},
        {{"type", "relu"}},
        {{"type", "maxpool2"}},
        {{"type", "dense"}, {"in", 3 * 3 * 3}, {"out", 4}},
    });
}

Tensor4<double> random_input(int n, int h, int w, int c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor4<double> x(n, h, w, c);
    for (double& v : x.data) v = u(rng);
    return x;
}

// Scalar probe s(x) = sum_k r_k * out_k, so d s / d out = r.
double probe(const nn::Network<double>& net, const Tensor4<double>& x, const Tensor4<double>& r) {
    const auto y = net.forward(x);
    double s = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * r.data[i];
    return s;
}

void check_gradients(const Json& arch, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    nn::Network<double> net({h, w, 2}, arch);
    net.init_params(seed);
    const auto x = random_input(2, h, w, 2, rng);
    Tensor4<double> r(2, 1, 1, net.output_size());
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& v : r.data) v = g(rng);

    std::vector<double> dparams;
    const auto trace = net.forward_trace(x);
    const auto dx = net.backward(trace, r, &dparams);

    const double hstep = 1e-6;
    std::uniform_int_distribution<std::size_t> pick_x(0, x.data.size() - 1);
    for (int probe_i = 0; probe_i < 10; ++probe_i) {
        const std::size_t i = pick_x(rng);
        auto a = x, b = x;
        a.data[i] += hstep;
        b.data[i] -= hstep;
        const double fd = (probe(net, a, r) - probe(net, b, r)) / (2 * hstep);
        EXPECT_LT(std::abs(fd - dx.data[i]), 1e-6 + 1e-4 * std::abs(fd)) << "input " << i;
    }

    const auto params = net.flat_params();
    std::uniform_int_distribution<std::size_t> pick_p(0, params.size() - 1);
    for (int probe_i = 0; probe_i < 10; ++probe_i) {
        const std::size_t i = pick_p(rng);
        auto pa = params, pb = params;
        pa[i] += hstep;
        pb[i] -= hstep;
        nn::Network<double> na = net, nb = net;
        na.set_params(pa);
        nb.set_params(pb);
        const double fd = (probe(na, x, r) - probe(nb, x, r)) / (2 * hstep);
        EXPECT_LT(std::abs(fd - dparams[i]), 1e-6 + 1e-4 * std::abs(fd)) << "param " << i;
    }
}

}  // namespace

TEST(Network, GapArchitectureGradientsMatchFiniteDifferences) { check_gradients(small_cnn(), 8, 8, 3); }

TEST(Network, DenseOnFeatureMapGradientsMatchFiniteDifferences) { check_gradients(flat_net(), 6, 6, 4); }

TEST(Network, ConvSamePaddingKeepsSpatialShape) {
    nn::Network<double> net({5, 7, 2}, Json::array({{{"type", "conv2d"}, {"in", 2}, {"out", 3}, {"kernel", 3}},
                                                    {{"type", "global_avg_pool"}}}));
    EXPECT_EQ(net.output_size(), 3);
}

TEST(Network, ConvHandExample) {
    // 1x1 kernel: output = w * x + b per pixel.
    nn::Network<double> net({2, 2, 1}, Json::array({{{"type", "conv2d"}, {"in", 1}, {"out", 1}, {"kernel", 1}},
                                                    {{"type", "global_avg_pool"}}}));
    net.set_params(std::vector<double>{2.0, 0.5});
    Tensor4<double> x(1, 2, 2, 1);
    x.data = {1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(net.forward(x).data[0], 2.0 * 2.5 + 0.5);
}

TEST(Network, MaxPoolRoutesGradientToArgmax) {
    nn::MaxPool2<double> pool;
    Tensor4<double> x(1, 2, 2, 1);
    x.data = {0.1, 0.9, 0.3, 0.2};
    const auto y = pool.forward(x);
    ASSERT_EQ(y.data.size(), 1u);
    EXPECT_DOUBLE_EQ(y.data[0], 0.9);
    Tensor4<double> dy(1, 1, 1, 1, 1.0);
    const auto dx = pool.backward(x, y, dy, nullptr);
    EXPECT_EQ(dx.data, (std::vector<double>{0, 1, 0, 0}));
}

TEST(Network, RejectsWrongInputShape) {
    nn::Network<float> net({8, 8, 2}, small_cnn());
    EXPECT_THROW(net.forward(Tensor4<float>(1, 8, 8, 3)), ShapeError);
}

TEST(Network, RejectsUnknownLayer) {
    EXPECT_THROW(nn::Network<float>({4, 4, 1}, Json::array({{{"type", "softmax"}}})), ValidationError);
}

TEST(Network, RequiresSingletonSpatialOutput) {
    EXPECT_THROW(nn::Network<float>({4, 4, 1}, Json::array({{{"type", "relu"}}})), ShapeError);
}

TEST(Network, CastPreservesOutputs) {
    nn::Network<float> net({8, 8, 2}, small_cnn());
    net.init_params(9);
    const auto dnet = net.cast<double>();
    std::mt19937_64 rng(5);
    const auto xd = random_input(3, 8, 8, 2, rng);
    Tensor4<float> xf(3, 8, 8, 2);
    for (std::size_t i = 0; i < xd.data.size(); ++i) xf.data[i] = static_cast<float>(xd.data[i]);
    const auto yf = net.forward(xf);
    const auto yd = dnet.forward(xd);
    for (std::size_t i = 0; i < yf.data.size(); ++i) EXPECT_LT(rel_err(yf.data[i], yd.data[i]), 1e-4);
}

TEST(Network, InitIsDeterministicInSeed) {
    nn::Network<float> a({8, 8, 2}, small_cnn()), b({8, 8, 2}, small_cnn()), c({8, 8, 2}, small_cnn());
    a.init_params(1);
    b.init_params(1);
    c.init_params(2);
    EXPECT_EQ(a.flat_params(), b.flat_params());
    EXPECT_NE(a.flat_params(), c.flat_params());
}

TEST(Network, BatchSamplesAreIndependent) {
    nn::Network<double> net({8, 8, 2}, small_cnn());
    net.init_params(4);
    std::mt19937_64 rng(8);
    const auto x = random_input(2, 8, 8, 2, rng);
    Tensor4<double> first(1, 8, 8, 2);
    std::copy(x.sample(0).begin(), x.sample(0).end(), first.data.begin());
    const auto both = net.forward(x);
    const auto one = net.forward(first);
    for (int k = 0; k < net.output_size(); ++k) EXPECT_NEAR(both.data[k], one.data[k], 1e-12);
}
