#pragma once

// Minimal NHWC feed-forward gradient engine.
//
// Layers are stateless apart from their parameters; forward/backward are
// const and allocate their own workspace, so one network may serve
// concurrent forward calls. Templated on the scalar so gradient checks can
// run the exact same code in double precision.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tscuap/core.hpp"

namespace tscuap::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

struct Shape3 {
    int h = 0;
    int w = 0;
    int c = 0;
    std::size_t size() const { return static_cast<std::size_t>(h) * w * c; }
    bool operator==(const Shape3&) const = default;
};

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual Json config() const = 0;
    virtual Shape3 output_shape(Shape3 in) const = 0;
    virtual Tensor4<T> forward(const Tensor4<T>& x) const = 0;
    /// Returns dL/dx. When `dparams` is non-null, dL/dparams is accumulated
    /// into it (param_count() entries).
    virtual Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& y, const Tensor4<T>& dy,
                                T* dparams) const = 0;

    std::size_t param_count() const { return params_.size(); }
    std::span<T> params() { return params_; }
    std::span<const T> params() const { return params_; }

protected:
    std::vector<T> params_;
};

/// k x k convolution, stride 1, zero "same" padding. Weights are stored as a
/// (k*k*cin, cout) matrix followed by cout biases.
template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(int cin, int cout, int kernel) : cin_(cin), cout_(cout), k_(kernel) {
        if (kernel % 2 == 0) throw ValidationError("conv kernel size must be odd");
        this->params_.assign(static_cast<std::size_t>(k_) * k_ * cin_ * cout_ + cout_, T(0));
    }

    Json config() const override {
        return {{"type", "conv2d"}, {"in", cin_}, {"out", cout_}, {"kernel", k_}};
    }
    Shape3 output_shape(Shape3 in) const override {
        if (in.c != cin_) throw ShapeError("conv2d input channel mismatch");
        return {in.h, in.w, cout_};
    }

    Tensor4<T> forward(const Tensor4<T>& x) const override {
        output_shape({x.h, x.w, x.c});
        Mat<T> col = im2col(x);
        Tensor4<T> y(x.n, x.h, x.w, cout_);
        MatMap<T> ym(y.data.data(), col.rows(), cout_);
        ym.noalias() = col * weights();
        ym.rowwise() += bias();
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>&, const Tensor4<T>& dy,
                        T* dparams) const override {
        const Eigen::Index rows = static_cast<Eigen::Index>(x.n) * x.h * x.w;
        ConstMatMap<T> dym(dy.data.data(), rows, cout_);
        if (dparams) {
            Mat<T> col = im2col(x);
            MatMap<T> dw(dparams, patch_len(), cout_);
            dw.noalias() += col.transpose() * dym;
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(dparams + patch_len() * cout_, cout_);
            db += dym.colwise().sum();
        }
        Mat<T> dcol = dym * weights().transpose();
        return col2im(dcol, x);
    }

private:
    Eigen::Index patch_len() const { return static_cast<Eigen::Index>(k_) * k_ * cin_; }
    ConstMatMap<T> weights() const { return {this->params_.data(), patch_len(), cout_}; }
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias() const {
        return {this->params_.data() + patch_len() * cout_, cout_};
    }

    Mat<T> im2col(const Tensor4<T>& x) const {
        const int pad = k_ / 2;
        Mat<T> col = Mat<T>::Zero(static_cast<Eigen::Index>(x.n) * x.h * x.w, patch_len());
        for (int b = 0; b < x.n; ++b) {
            for (int i = 0; i < x.h; ++i) {
                for (int j = 0; j < x.w; ++j) {
                    T* dst = col.data() + ((static_cast<Eigen::Index>(b) * x.h + i) * x.w + j) * patch_len();
                    for (int di = 0; di < k_; ++di) {
                        const int si = i + di - pad;
                        if (si < 0 || si >= x.h) continue;
                        for (int dj = 0; dj < k_; ++dj) {
                            const int sj = j + dj - pad;
                            if (sj < 0 || sj >= x.w) continue;
                            const T* src = &x.data[x.index(b, si, sj, 0)];
                            std::copy(src, src + cin_, dst + (di * k_ + dj) * cin_);
                        }
                    }
                }
            }
        }
        return col;
    }

    Tensor4<T> col2im(const Mat<T>& dcol, const Tensor4<T>& x) const {
        const int pad = k_ / 2;
        Tensor4<T> dx(x.n, x.h, x.w, x.c);
        for (int b = 0; b < x.n; ++b) {
            for (int i = 0; i < x.h; ++i) {
                for (int j = 0; j < x.w; ++j) {
                    const T* src = dcol.data() + ((static_cast<Eigen::Index>(b) * x.h + i) * x.w + j) * patch_len();
                    for (int di = 0; di < k_; ++di) {
                        const int si = i + di - pad;
                        if (si < 0 || si >= x.h) continue;
                        for (int dj = 0; dj < k_; ++dj) {
                            const int sj = j + dj - pad;
                            if (sj < 0 || sj >= x.w) continue;
                            T* dst = &dx.data[dx.index(b, si, sj, 0)];
                            const T* s = src + (di * k_ + dj) * cin_;
                            for (int c = 0; c < cin_; ++c) dst[c] += s[c];
                        }
                    }
                }
            }
        }
        return dx;
    }

    int cin_;
    int cout_;
    int k_;
};

template <typename T>
class Relu final : public Layer<T> {
public:
    Json config() const override { return {{"type", "relu"}}; }
    Shape3 output_shape(Shape3 in) const override { return in; }
    Tensor4<T> forward(const Tensor4<T>& x) const override {
        Tensor4<T> y = x;
        for (T& v : y.data) v = v > T(0) ? v : T(0);
        return y;
    }
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>&, const Tensor4<T>& dy,
                        T*) const override {
        Tensor4<T> dx = dy;
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            if (!(x.data[i] > T(0))) dx.data[i] = T(0);
        }
        return dx;
    }
};

/// 2x2 max pooling with stride 2; ties route the gradient to the first max.
template <typename T>
class MaxPool2 final : public Layer<T> {
public:
    Json config() const override { return {{"type", "maxpool2"}}; }
    Shape3 output_shape(Shape3 in) const override {
        if (in.h % 2 || in.w % 2) throw ShapeError("maxpool2 needs even spatial dimensions");
        return {in.h / 2, in.w / 2, in.c};
    }
    Tensor4<T> forward(const Tensor4<T>& x) const override {
        output_shape({x.h, x.w, x.c});
        Tensor4<T> y(x.n, x.h / 2, x.w / 2, x.c);
        for (int b = 0; b < x.n; ++b)
            for (int i = 0; i < y.h; ++i)
                for (int j = 0; j < y.w; ++j)
                    for (int c = 0; c < x.c; ++c) {
                        T m = x(b, 2 * i, 2 * j, c);
                        m = std::max(m, x(b, 2 * i, 2 * j + 1, c));
                        m = std::max(m, x(b, 2 * i + 1, 2 * j, c));
                        m = std::max(m, x(b, 2 * i + 1, 2 * j + 1, c));
                        y(b, i, j, c) = m;
                    }
        return y;
    }
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& y, const Tensor4<T>& dy,
                        T*) const override {
        Tensor4<T> dx(x.n, x.h, x.w, x.c);
        for (int b = 0; b < x.n; ++b)
            for (int i = 0; i < y.h; ++i)
                for (int j = 0; j < y.w; ++j)
                    for (int c = 0; c < x.c; ++c) {
                        const T m = y(b, i, j, c);
                        int di = 0, dj = 0;
                        if (x(b, 2 * i, 2 * j, c) == m) {
                        } else if (x(b, 2 * i, 2 * j + 1, c) == m) {
                            dj = 1;
                        } else if (x(b, 2 * i + 1, 2 * j, c) == m) {
                            di = 1;
                        } else {
                            di = 1;
                            dj = 1;
                        }
                        dx(b, 2 * i + di, 2 * j + dj, c) += dy(b, i, j, c);
                    }
        return dx;
    }
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
public:
    Json config() const override { return {{"type", "global_avg_pool"}}; }
    Shape3 output_shape(Shape3 in) const override { return {1, 1, in.c}; }
    Tensor4<T> forward(const Tensor4<T>& x) const override {
        Tensor4<T> y(x.n, 1, 1, x.c);
        const T inv = T(1) / T(x.h * x.w);
        for (int b = 0; b < x.n; ++b) {
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j)
                    for (int c = 0; c < x.c; ++c) y(b, 0, 0, c) += x(b, i, j, c);
            for (int c = 0; c < x.c; ++c) y(b, 0, 0, c) *= inv;
        }
        return y;
    }
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>&, const Tensor4<T>& dy,
                        T*) const override {
        Tensor4<T> dx(x.n, x.h, x.w, x.c);
        const T inv = T(1) / T(x.h * x.w);
        for (int b = 0; b < x.n; ++b)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j)
                    for (int c = 0; c < x.c; ++c) dx(b, i, j, c) = dy(b, 0, 0, c) * inv;
        return dx;
    }
};

/// Fully connected layer on the flattened (h*w*c) input. Weights are an
/// (in, out) matrix followed by out biases; output shape is (1, 1, out).
template <typename T>
class Dense final : public Layer<T> {
public:
    Dense(int in, int out) : in_(in), out_(out) {
        this->params_.assign(static_cast<std::size_t>(in) * out + out, T(0));
    }
    Json config() const override { return {{"type", "dense"}, {"in", in_}, {"out", out_}}; }
    Shape3 output_shape(Shape3 in) const override {
        if (static_cast<int>(in.size()) != in_) throw ShapeError("dense input size mismatch");
        return {1, 1, out_};
    }
    Tensor4<T> forward(const Tensor4<T>& x) const override {
        output_shape({x.h, x.w, x.c});
        Tensor4<T> y(x.n, 1, 1, out_);
        ConstMatMap<T> xm(x.data.data(), x.n, in_);
        MatMap<T> ym(y.data.data(), x.n, out_);
        ym.noalias() = xm * weights();
        ym.rowwise() += bias();
        return y;
    }
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>&, const Tensor4<T>& dy,
                        T* dparams) const override {
        ConstMatMap<T> xm(x.data.data(), x.n, in_);
        ConstMatMap<T> dym(dy.data.data(), x.n, out_);
        if (dparams) {
            MatMap<T> dw(dparams, in_, out_);
            dw.noalias() += xm.transpose() * dym;
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(dparams + in_ * out_, out_);
            db += dym.colwise().sum();
        }
        Tensor4<T> dx(x.n, x.h, x.w, x.c);
        MatMap<T> dxm(dx.data.data(), x.n, in_);
        dxm.noalias() = dym * weights().transpose();
        return dx;
    }

private:
    ConstMatMap<T> weights() const { return {this->params_.data(), in_, out_}; }
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias() const {
        return {this->params_.data() + static_cast<std::size_t>(in_) * out_, out_};
    }

    int in_;
    int out_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const Json& cfg) {
    const auto type = cfg.at("type").get<std::string>();
    if (type == "conv2d") {
        return std::make_unique<Conv2d<T>>(cfg.at("in").get<int>(), cfg.at("out").get<int>(),
                                           cfg.value("kernel", 3));
    }
    if (type == "relu") return std::make_unique<Relu<T>>();
    if (type == "maxpool2") return std::make_unique<MaxPool2<T>>();
    if (type == "global_avg_pool") return std::make_unique<GlobalAvgPool<T>>();
    if (type == "dense") return std::make_unique<Dense<T>>(cfg.at("in").get<int>(), cfg.at("out").get<int>());
    throw ValidationError("unknown layer type '" + type + "'");
}

/// A sequential network mapping (n, h, w, c) inputs to (n, 1, 1, K) outputs.
template <typename T>
class Network {
public:
    /// Activations of a forward pass: acts[0] is the input, acts[i + 1] the
    /// output of layer i.
    struct Trace {
        std::vector<Tensor4<T>> acts;
        const Tensor4<T>& output() const { return acts.back(); }
    };

    Network(Shape3 input, const Json& layers) : input_(input) {
        Shape3 s = input;
        for (const auto& cfg : layers) {
            layers_.push_back(make_layer<T>(cfg));
            s = layers_.back()->output_shape(s);
        }
        if (s.h != 1 || s.w != 1) throw ShapeError("network must end in a (1, 1, K) output");
        output_size_ = s.c;
    }

    Network(const Network& other) : Network(other.input_, other.architecture()) {
        set_params(other.flat_params());
    }
    Network& operator=(const Network& other) {
        if (this != &other) *this = Network(other);
        return *this;
    }
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const Shape3& input_shape() const { return input_; }
    int output_size() const { return output_size_; }
    std::size_t layer_count() const { return layers_.size(); }

    Json architecture() const {
        Json out = Json::array();
        for (const auto& l : layers_) out.push_back(l->config());
        return out;
    }

    Tensor4<T> forward(const Tensor4<T>& x) const {
        check_input(x);
        Tensor4<T> cur = x;
        for (const auto& l : layers_) cur = l->forward(cur);
        return cur;
    }

    Trace forward_trace(const Tensor4<T>& x) const {
        check_input(x);
        Trace t;
        t.acts.reserve(layers_.size() + 1);
        t.acts.push_back(x);
        for (const auto& l : layers_) t.acts.push_back(l->forward(t.acts.back()));
        return t;
    }

    /// Backpropagates `dout` (shape of the output). Parameter gradients are
    /// accumulated into `dparams` (param_count() entries) when non-null.
    Tensor4<T> backward(const Trace& trace, const Tensor4<T>& dout, std::vector<T>* dparams = nullptr) const {
        if (dparams && dparams->size() != param_count()) dparams->assign(param_count(), T(0));
        std::vector<std::size_t> offsets(layers_.size() + 1, 0);
        for (std::size_t i = 0; i < layers_.size(); ++i) offsets[i + 1] = offsets[i] + layers_[i]->param_count();

        Tensor4<T> grad = dout;
        for (std::size_t idx = layers_.size(); idx-- > 0;) {
            T* dp = (dparams && layers_[idx]->param_count()) ? dparams->data() + offsets[idx] : nullptr;
            grad = layers_[idx]->backward(trace.acts[idx], trace.acts[idx + 1], grad, dp);
        }
        return grad;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l->param_count();
        return n;
    }

    std::vector<T> flat_params() const {
        std::vector<T> out;
        out.reserve(param_count());
        for (const auto& l : layers_) {
            auto p = std::as_const(*l).params();
            out.insert(out.end(), p.begin(), p.end());
        }
        return out;
    }

    template <typename U>
    void set_params(std::span<const U> flat) {
        if (flat.size() != param_count()) throw ShapeError("parameter vector length mismatch");
        std::size_t off = 0;
        for (auto& l : layers_) {
            auto p = l->params();
            for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<T>(flat[off + i]);
            off += p.size();
        }
    }
    template <typename U>
    void set_params(const std::vector<U>& flat) {
        set_params(std::span<const U>(flat));
    }

    /// He-uniform weights, zero biases.
    void init_params(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& l : layers_) {
            auto p = l->params();
            if (p.empty()) continue;
            const Json cfg = l->config();
            const int out = cfg.at("out").get<int>();
            const std::size_t nw = p.size() - out;
            const double fan_in = static_cast<double>(nw) / out;
            std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
            for (std::size_t i = 0; i < nw; ++i) p[i] = static_cast<T>(dist(rng));
            for (std::size_t i = nw; i < p.size(); ++i) p[i] = T(0);
        }
    }

    template <typename U>
    Network<U> cast() const {
        Network<U> out(input_, architecture());
        out.set_params(flat_params());
        return out;
    }

private:
    void check_input(const Tensor4<T>& x) const {
        if (x.h != input_.h || x.w != input_.w || x.c != input_.c) {
            throw ShapeError("network input shape (" + std::to_string(x.h) + ", " + std::to_string(x.w) +
                             ", " + std::to_string(x.c) + ") does not match (" + std::to_string(input_.h) +
                             ", " + std::to_string(input_.w) + ", " + std::to_string(input_.c) + ")");
        }
    }

    Shape3 input_;
    int output_size_ = 0;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace tscuap::nn
