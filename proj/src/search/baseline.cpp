#include <set>

#include "rowflip/errors.hpp"
#include "rowflip/rng.hpp"
#include "rowflip/search.hpp"

namespace rf::search {

std::vector<double> random_flip_drops(const qnn::QuantizedModel& m, const qnn::Tensor& x, const std::vector<int>& y,
                                      int n, int trials, std::uint64_t seed, Exec exec) {
    const std::size_t total = m.weight_count() * static_cast<std::size_t>(m.bits);
    if (n < 0 || trials < 1) throw ConfigError("need n >= 0 and at least one trial");
    if (static_cast<std::size_t>(n) > total) throw ConfigError("more flips requested than the model has bits");
    const double base = qnn::loss_and_accuracy(m, x, y, exec).acc;

    // Global bit index -> (layer, index, bit), layers in model order.
    std::vector<std::size_t> layers = m.weighted_layers();
    std::vector<double> drops;
    for (int t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        std::set<std::size_t> picked;
        while (picked.size() < static_cast<std::size_t>(n)) picked.insert(rng.below(total));
        qnn::QuantizedModel copy = m;
        for (std::size_t gbi : picked) {
            std::size_t w = gbi / static_cast<std::size_t>(m.bits);
            const int bit = static_cast<int>(gbi % static_cast<std::size_t>(m.bits));
            for (std::size_t li : layers) {
                const std::size_t sz = copy.layers[li].weight_q.size();
                if (w < sz) {
                    qnn::flip_bit(copy, {li, w, bit});
                    break;
                }
                w -= sz;
            }
        }
        drops.push_back(base - qnn::loss_and_accuracy(copy, x, y, exec).acc);
    }
    return drops;
}

}  // namespace rf::search
