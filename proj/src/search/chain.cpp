#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rowflip/errors.hpp"
#include "rowflip/search.hpp"

namespace rf::search {

std::vector<image::TargetBit> BitChain::bits() const {
    std::vector<image::TargetBit> out;
    for (const auto& s : steps) out.push_back(s.bit);
    return out;
}

std::vector<image::ChainRecord> BitChain::records(const image::WeightImage& img) const {
    std::vector<image::ChainRecord> out;
    for (const auto& s : steps) out.push_back({s.bit, s.acc, img.file_page(s.bit.page)});
    return out;
}

double BitChain::mode0_fraction() const {
    if (steps.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& s : steps) n += s.bit.mode == 0;
    return double(n) / double(steps.size());
}

namespace {

bool reached(const qnn::LossAcc& s, const SearchConfig& cfg) {
    return cfg.objective == Objective::Untargeted ? s.acc <= cfg.target_accuracy : s.acc >= cfg.target_fraction;
}

std::size_t unused_frames(const std::vector<std::uint64_t>& frames, const std::set<std::uint64_t>& reserved) {
    std::size_t n = 0;
    for (auto f : frames) n += reserved.count(f) == 0;
    return n;
}

}  // namespace

BitChain search_chain(const qnn::QuantizedModel& m, const EvalBatch& batch, const dram::FlipProfile* profile,
                      const SearchConfig& cfg) {
    if (cfg.p < 1 || cfg.p_max < cfg.p) throw ConfigError("need 1 <= p <= p_max");
    if (!(cfg.target_accuracy > 0.0 && cfg.target_accuracy < 1.0)) throw ConfigError("target accuracy must be in (0, 1)");
    if (cfg.max_iterations < 0) throw ConfigError("max iterations must be non-negative");
    if (cfg.min_flippable < 1) throw ConfigError("min_flippable must be at least 1");

    qnn::QuantizedModel cur = m;
    const image::WeightImage img = image::WeightImage::build(m);
    const qnn::Architecture arch = m.architecture();
    const qnn::LossAcc clean = qnn::loss_and_accuracy(cur, batch.x, batch.y, cfg.exec);

    BitChain chain;
    chain.clean_loss = clean.loss;
    chain.clean_acc = clean.acc;
    if (reached(clean, cfg)) {
        chain.feasible = true;
        chain.stop_reason = "target reached";
        return chain;
    }
    if (cfg.use_profile && (profile == nullptr || profile->empty())) {
        chain.stop_reason = "empty profile";
        return chain;
    }

    std::set<int> used_pages;
    std::set<std::uint64_t> reserved = cfg.reserved_frames;
    const std::size_t total_bits = m.weight_count() * static_cast<std::size_t>(m.bits);

    for (int it = 0; it < cfg.max_iterations; ++it) {
        const qnn::Gradients g = qnn::weight_gradients(cur, batch.x, batch.y, cfg.exec);
        const qnn::BitGradients bg = qnn::bit_gradients(g.grad, cur);

        std::vector<Candidate> flippable;
        int p = cfg.p;
        for (;;) {
            flippable.clear();
            for (auto& c : gbr_rank(cur, bg, img, p, cfg.objective)) {
                if (cfg.protected_bits.count(c.ref) || cfg.protected_layers.count(c.ref.layer)) continue;
                if (cfg.use_profile) {
                    if (used_pages.count(c.bit.page)) continue;
                    c.locations = unused_frames(profile->frames(c.bit.bop, c.bit.mode), reserved);
                    if (c.locations == 0) continue;
                }
                flippable.push_back(c);
            }
            if (flippable.size() >= static_cast<std::size_t>(cfg.min_flippable) || p >= cfg.p_max || static_cast<std::size_t>(p) >= total_bits) break;
            p = std::min(cfg.p_max, p * 2);
        }
        if (flippable.empty()) {
            chain.stop_reason = "no flippable candidate";
            return chain;
        }

        const qnn::CachedBatch cached(arch, qnn::dequantize(cur), batch.x, batch.y, cfg.exec);
        for (auto& c : flippable) {
            const auto& layer = cur.layers[c.ref.layer];
            const std::int32_t q = qnn::flip_value(layer.weight_q[c.ref.index], c.ref.bit, cur.bits);
            const qnn::LossAcc r = cached.with_weight(c.ref.layer, c.ref.index, static_cast<double>(q) * layer.delta_w);
            c.loss = std::isnan(r.loss) ? std::numeric_limits<double>::infinity() : r.loss;
            c.acc = r.acc;
        }
        const Candidate best = *std::min_element(flippable.begin(), flippable.end(), [&](const Candidate& a, const Candidate& b) {
            return better(a, b, cfg.objective);
        });

        ChainStep step;
        step.ref = best.ref;
        step.bit = best.bit;
        step.loss = best.loss;
        step.acc = best.acc;
        step.evaluated = flippable.size();
        step.p_used = p;
        if (cfg.use_profile) {
            used_pages.insert(best.bit.page);
            for (auto f : profile->frames(best.bit.bop, best.bit.mode))
                if (!reserved.count(f)) {
                    step.frame = f;
                    break;
                }
            reserved.insert(step.frame);
        }
        if (cfg.record_candidates) step.candidates = flippable;
        qnn::flip_bit(cur, best.ref);
        chain.steps.push_back(std::move(step));

        qnn::LossAcc now;
        now.loss = best.loss;
        now.acc = best.acc;
        if (reached(now, cfg)) {
            chain.feasible = true;
            chain.stop_reason = "target reached";
            return chain;
        }
    }
    chain.stop_reason = "iteration budget exhausted";
    return chain;
}

std::vector<BitChain> search_chains(const qnn::QuantizedModel& m, const EvalBatch& batch,
                                    const dram::FlipProfile* profile, const SearchConfig& cfg, int k) {
    if (k < 1) throw ConfigError("chain count must be at least 1");
    std::vector<BitChain> out;
    SearchConfig c = cfg;
    for (int i = 0; i < k; ++i) {
        out.push_back(search_chain(m, batch, profile, c));
        for (const auto& s : out.back().steps) {
            c.protected_bits.insert(s.ref);
            if (c.use_profile) c.reserved_frames.insert(s.frame);
        }
    }
    return out;
}

std::vector<BitChain> protect_topn_rounds(const qnn::QuantizedModel& m, const EvalBatch& batch,
                                          const SearchConfig& cfg, int rounds) {
    if (rounds < 1) throw ConfigError("rounds must be at least 1");
    std::vector<BitChain> out;
    SearchConfig c = cfg;
    c.use_profile = false;
    for (int r = 0; r < rounds; ++r) {
        out.push_back(search_chain(m, batch, nullptr, c));
        for (const auto& s : out.back().steps) c.protected_bits.insert(s.ref);
    }
    return out;
}

std::string trace_csv(const BitChain& c) {
    std::ostringstream out;
    out.precision(17);
    out << "iteration,candidates_evaluated,layer,index,bit,page,bop,mode,loss,accuracy\n";
    out << 0 << ",0,,,,,,," << c.clean_loss << ',' << c.clean_acc << '\n';
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
        const auto& s = c.steps[i];
        out << i + 1 << ',' << s.evaluated << ',' << s.ref.layer << ',' << s.ref.index << ',' << s.ref.bit << ','
            << s.bit.page << ',' << s.bit.bop << ',' << s.bit.mode << ',' << s.loss << ',' << s.acc << '\n';
    }
    return out.str();
}

}  // namespace rf::search
