// Trains a desk-scale classifier on the desk10 corpus and writes a weights
// file loadable through the model registry.

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include <CLI11.hpp>

#include "tscuap/datasets.hpp"
#include "tscuap/losses.hpp"
#include "tscuap/modelzoo.hpp"
#include "tscuap/nn.hpp"

using namespace tscuap;

namespace {

Json architecture(const std::string& arch, int width) {
    Json layers = Json::array();
    layers.push_back({{"type", "conv2d"}, {"in", 3}, {"out", width}, {"kernel", 3}});
    layers.push_back({{"type", "relu"}});
    layers.push_back({{"type", "maxpool2"}});
    layers.push_back({{"type", "conv2d"}, {"in", width}, {"out", 2 * width}, {"kernel", 3}});
    layers.push_back({{"type", "relu"}});
    layers.push_back({{"type", "maxpool2"}});
    if (arch == "gap") {
        layers.push_back({{"type", "conv2d"}, {"in", 2 * width}, {"out", 4 * width}, {"kernel", 3}});
        layers.push_back({{"type", "relu"}});
        layers.push_back({{"type", "global_avg_pool"}});
        layers.push_back({{"type", "dense"}, {"in", 4 * width}, {"out", 10}});
    } else if (arch == "fc") {
        layers.push_back({{"type", "dense"}, {"in", 8 * 8 * 2 * width}, {"out", 64}});
        layers.push_back({{"type", "relu"}});
        layers.push_back({{"type", "dense"}, {"in", 64}, {"out", 10}});
    } else {
        throw ValidationError("unknown architecture '" + arch + "' (gap or fc)");
    }
    return layers;
}

double accuracy(const nn::Network<float>& net, const SampledDataset& data) {
    int correct = 0;
    const int step = 250;
    for (int b = 0; b < data.size(); b += step) {
        std::vector<int> idx(std::min(step, data.size() - b));
        std::iota(idx.begin(), idx.end(), b);
        const auto y = net.forward(data.gather(idx));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const float* row = y.data.data() + i * y.c;
            const int pred = static_cast<int>(std::max_element(row, row + y.c) - row);
            correct += pred == data.labels[idx[i]] ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / data.size();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train a desk-scale classifier on desk10"};
    std::string out = "models/desk_cnn_cifar10.tscw";
    std::string model_id = "desk_cnn_cifar10";
    std::string arch = "gap";
    int width = 16;
    int epochs = 14;
    int per_class = 600;
    int val_per_class = 200;
    int batch = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    app.add_option("--out", out, "weights file to write");
    app.add_option("--model-id", model_id, "id stored in the weights file");
    app.add_option("--arch", arch, "gap or fc");
    app.add_option("--width", width, "channels of the first conv layer");
    app.add_option("--epochs", epochs);
    app.add_option("--per-class", per_class, "training images per class");
    app.add_option("--val-per-class", val_per_class, "validation images per class");
    app.add_option("--batch", batch);
    app.add_option("--lr", lr, "Adam learning rate");
    app.add_option("--seed", seed);
    CLI11_PARSE(app, argc, argv);

    try {
        const auto t0 = std::chrono::steady_clock::now();
        const SampledDataset train = sample_dataset("desk10", 10, per_class, Split::Train, seed + 1);
        const SampledDataset val = sample_dataset("desk10", 10, val_per_class, Split::Validation, seed + 2);
        std::cerr << "data ready: " << train.size() << " train, " << val.size() << " validation\n";

        nn::Network<float> net({32, 32, 3}, architecture(arch, width));
        net.init_params(seed);
        const std::size_t np = net.param_count();
        std::vector<float> params = net.flat_params();
        std::vector<double> m(np, 0.0), v(np, 0.0);
        std::vector<float> grad;
        std::mt19937_64 rng(seed + 3);
        std::vector<int> order(train.size());
        int t = 0;
        for (int e = 0; e < epochs; ++e) {
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            double loss_sum = 0.0;
            int batches = 0;
            for (int b = 0; b < train.size(); b += batch) {
                const int count = std::min(batch, train.size() - b);
                std::span<const int> idx(order.data() + b, count);
                const ImageBatch x = train.gather(idx);
                std::vector<int> y;
                for (int i : idx) y.push_back(train.labels[i]);

                auto trace = net.forward_trace(x);
                const auto& o = trace.output();
                Logits z(o.n, o.c);
                for (int r = 0; r < o.n; ++r)
                    for (int k = 0; k < o.c; ++k) z(r, k) = o(r, 0, 0, k);
                const LossValue lv = loss_ce_untargeted(LogitsBatch(z, y));
                Tensor4<float> dout(o.n, 1, 1, o.c);
                for (int r = 0; r < o.n; ++r)
                    for (int k = 0; k < o.c; ++k) dout(r, 0, 0, k) = static_cast<float>(lv.grad(r, k));
                grad.assign(np, 0.0f);
                net.backward(trace, dout, &grad);

                ++t;
                const double c1 = 1.0 - std::pow(0.9, t);
                const double c2 = 1.0 - std::pow(0.999, t);
                for (std::size_t i = 0; i < np; ++i) {
                    m[i] = 0.9 * m[i] + 0.1 * grad[i];
                    v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
                    params[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8));
                }
                net.set_params(params);
                loss_sum += lv.value;
                ++batches;
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cerr << "epoch " << e << " loss " << loss_sum / batches << " val_acc " << accuracy(net, val) << " ("
                      << secs << " s)\n";
        }

        const double acc = accuracy(net, val);
        ModelInfo info{model_id, 32, 32, 3, 10, {}, {}, true};
        Json extra{{"corpus", "desk10"},
                   {"arch", arch},
                   {"width", width},
                   {"epochs", epochs},
                   {"train_per_class", per_class},
                   {"batch", batch},
                   {"lr", lr},
                   {"seed", seed},
                   {"validation_accuracy", acc},
                   {"validation_size", val.size()}};
        save_network_model(out, info, net, extra);
        std::cout << Json{{"out", out}, {"validation_accuracy", acc}}.dump() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
