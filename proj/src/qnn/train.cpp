#include <cmath>
#include <numeric>
#include <sstream>

#include "rowflip/errors.hpp"
#include "rowflip/qnn.hpp"
#include "rowflip/rng.hpp"

namespace rf::qnn {

Params init_params(const Architecture& a, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 1));
    Params p = Params::zeros_like(a);
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const auto& l = a.layers[i];
        if (!l.weighted()) continue;
        const double fan_in = l.kind == LayerKind::Conv2d ? static_cast<double>(l.in.c) * l.kernel * l.kernel
                                                          : static_cast<double>(l.in.size());
        const double sd = std::sqrt(2.0 / fan_in);
        for (auto& w : p.w[i]) w = sd * rng.normal();
    }
    return p;
}

namespace {

// Weights replaced by their quantize-dequantize image; biases untouched.
Params fake_quantize(const Architecture& a, const Params& master, int bits) {
    Params out = master;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (!a.layers[i].weighted()) continue;
        auto qz = quantize(master.w[i], bits);
        out.w[i] = dequantize(qz.q, qz.delta_w);
    }
    return out;
}

double lr_at(const TrainConfig& cfg, int epoch) {
    double lr = cfg.lr;
    if (epoch >= cfg.epochs / 2) lr *= 0.1;
    if (epoch >= (3 * cfg.epochs) / 4) lr *= 0.1;
    return lr;
}

}  // namespace

TrainResult train_small(const Architecture& a, const Dataset& d, const TrainConfig& cfg, std::uint64_t seed) {
    a.validate();
    if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("epochs must be >= 0 and batch >= 1");
    if (!(a.input == d.input) || a.class_count != d.class_count)
        throw ShapeError("architecture does not match the dataset");

    Params master = init_params(a, seed);
    Params velocity = Params::zeros_like(a);
    Rng rng(derive_seed(seed, 2));
    const std::size_t n = d.train_y.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainResult res;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        const double lr = lr_at(cfg, epoch);
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch));
            std::vector<std::size_t> rows(order.begin() + start, order.begin() + end);
            Tensor xb = gather_rows(d.train_x, rows);
            std::vector<int> yb(rows.size());
            for (std::size_t k = 0; k < rows.size(); ++k) yb[k] = d.train_y[rows[k]];

            // Straight-through: gradients taken at the quantized weights update the real ones.
            const Params q = fake_quantize(a, master, cfg.bits);
            const Gradients g = loss_gradients(a, q, xb, yb, cfg.exec);
            loss_sum += g.stats.loss;
            ++steps;
            for (std::size_t i = 0; i < a.layers.size(); ++i) {
                for (std::size_t k = 0; k < master.w[i].size(); ++k) {
                    const double gk = g.grad.w[i][k] + cfg.weight_decay * master.w[i][k];
                    velocity.w[i][k] = cfg.momentum * velocity.w[i][k] + gk;
                    master.w[i][k] -= lr * velocity.w[i][k];
                }
                for (std::size_t k = 0; k < master.b[i].size(); ++k) {
                    velocity.b[i][k] = cfg.momentum * velocity.b[i][k] + g.grad.b[i][k];
                    master.b[i][k] -= lr * velocity.b[i][k];
                }
            }
        }
        res.epoch_loss.push_back(steps ? loss_sum / steps : 0.0);
        if (!std::isfinite(res.epoch_loss.back()))
            throw TrainingFailure("training diverged at epoch " + std::to_string(epoch));
    }

    res.model = quantize_params(a, master, cfg.bits);
    res.test_acc = loss_and_accuracy(res.model, d.test_x, d.test_y, cfg.exec).acc;
    if (res.test_acc < cfg.accuracy_floor) {
        std::ostringstream msg;
        msg << "test accuracy " << res.test_acc << " below floor " << cfg.accuracy_floor << " after " << cfg.epochs
            << " epochs; epoch losses:";
        for (double l : res.epoch_loss) msg << ' ' << l;
        throw TrainingFailure(msg.str());
    }
    return res;
}

}  // namespace rf::qnn
