#include <doctest.h>

#include <algorithm>
#include <set>

#include "rowflip/errors.hpp"
#include "rowflip/search.hpp"

using namespace rf;
using namespace rf::search;
using qnn::BitRef;

namespace {

struct Fixture {
    qnn::Dataset data;
    qnn::QuantizedModel model;
};

// 4-class blobs and an 8704-weight net, so the image spans three pages.
const Fixture& trained() {
    static const Fixture f = [] {
        qnn::BlobSpec bs;
        bs.classes = 4;
        bs.input = {1, 8, 8};
        bs.train_per_class = 60;
        bs.test_per_class = 40;
        bs.noise = 1.5;
        bs.seed = 5;
        Fixture x;
        x.data = qnn::make_blobs(bs);
        const auto a = qnn::ModelBuilder({1, 8, 8}).flatten().fc(128).relu().fc(4).build();
        qnn::TrainConfig tc;
        tc.epochs = 6;
        tc.lr = 0.01;
        x.model = qnn::train_small(a, x.data, tc, 3).model;
        return x;
    }();
    return f;
}

// Every (bop, dir) on every page-sized frame 0..frames-1: nothing is ruled
// out by direction or offset.
dram::FlipProfile dense_profile(std::uint64_t frames) {
    std::vector<dram::ProfileEntry> e;
    for (std::uint64_t f = 0; f < frames; ++f)
        for (int bop = 0; bop < dram::kPageBits; ++bop)
            for (int dir = 0; dir < 2; ++dir) e.push_back({f, bop, dir, 1.0});
    return dram::FlipProfile(std::move(e));
}

SearchConfig quick_cfg() {
    SearchConfig c;
    c.p = 5;
    c.min_flippable = 5;
    c.batch_size = 80;
    c.target_accuracy = 0.3;
    c.max_iterations = 12;
    return c;
}

}  // namespace

TEST_CASE("gbr_rank equals an exhaustive sort of the bit gradients") {
    const auto a = qnn::ModelBuilder({1, 1, 8}).flatten().fc(2).build();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto m = qnn::quantize_params(a, qnn::init_params(a, seed), 8);
        REQUIRE(m.weight_count() == 16);
        Rng r(seed);
        std::vector<double> xv(8 * 6);
        for (auto& v : xv) v = r.normal();
        const qnn::Tensor x({6, 1, 1, 8}, xv);
        const std::vector<int> y{0, 1, 1, 0, 1, 0};
        const auto bg = qnn::bit_gradients(qnn::weight_gradients(m, x, y).grad, m);
        const auto img = image::WeightImage::build(m);
        for (auto obj : {Objective::Untargeted, Objective::Targeted}) {
            // Oracle: all 128 bits, keep those whose toggle moves the loss the wanted
            // way to first order, sort by |g| descending then (index, bit).
            std::vector<std::tuple<double, std::size_t, int>> all;
            for (std::size_t i = 0; i < 16; ++i)
                for (int b = 0; b < 8; ++b) {
                    const double g = bg.at({1, i, b});
                    const double dl = qnn::bit_of(m.layers[1].weight_q[i], b) ? -g : g;
                    if (obj == Objective::Untargeted ? dl >= 0 : dl <= 0) all.emplace_back(-std::abs(g), i, b);
                }
            std::sort(all.begin(), all.end());
            const auto got = gbr_rank(m, bg, img, 4, obj);
            REQUIRE(got.size() == 4);
            for (std::size_t k = 0; k < 4; ++k) {
                CHECK(got[k].ref == BitRef{1, std::get<1>(all[k]), std::get<2>(all[k])});
                CHECK(got[k].bit.mode == (qnn::bit_of(m.layers[1].weight_q[got[k].ref.index], got[k].ref.bit) ? 0 : 1));
            }
            CHECK(gbr_rank(m, bg, img, 1000, obj).size() == all.size());
        }
    }
}

TEST_CASE("all-zero gradients fall back to the (index, bit) order and are still evaluated") {
    const auto a = qnn::ModelBuilder({1, 1, 4}).flatten().fc(3).build();
    const auto m = qnn::quantize_params(a, qnn::init_params(a, 2), 8);
    const qnn::Tensor x({2, 1, 1, 4}, std::vector<double>(8, 0.0));
    const std::vector<int> y{0, 2};
    const auto bg = qnn::bit_gradients(qnn::weight_gradients(m, x, y).grad, m);
    const auto got = gbr_rank(m, bg, image::WeightImage::build(m), 3, Objective::Untargeted);
    REQUIRE(got.size() == 3);
    CHECK(got[0].ref == BitRef{1, 0, 0});
    CHECK(got[1].ref == BitRef{1, 0, 1});
    CHECK(got[2].ref == BitRef{1, 0, 2});
    // Zero inputs: the flip is a dead path and the loss does not move.
    const EvalBatch b{x, y};
    const auto base = qnn::loss_and_accuracy(m, x, y);
    CHECK(evaluate_candidate(m, got[0].ref, b).loss == base.loss);
}

TEST_CASE("evaluate_candidate leaves the model untouched") {
    const auto& f = trained();
    SearchConfig c = quick_cfg();
    const auto b = make_eval_batch(f.data, c);
    const auto h = qnn::model_hash(f.model);
    auto copy = f.model;
    const auto r = evaluate_candidate(copy, {1, 100, 7}, b);
    CHECK(qnn::model_hash(copy) == h);
    auto flipped = f.model;
    qnn::flip_bit(flipped, {1, 100, 7});
    CHECK(r.loss == qnn::loss_and_accuracy(flipped, b.x, b.y).loss);
}

TEST_CASE("ranking order") {
    Candidate a, b;
    a.acc = b.acc = 0.5;
    a.loss = b.loss = 2.0;
    a.locations = 3;
    b.locations = 7;
    a.ref = {1, 0, 0};
    b.ref = {1, 5, 0};
    CHECK(better(b, a, Objective::Untargeted));
    CHECK_FALSE(better(a, b, Objective::Untargeted));
    b.locations = 3;
    CHECK(better(a, b, Objective::Untargeted));  // lower ref last
    a.loss = 2.5;
    CHECK(better(a, b, Objective::Untargeted));
    CHECK(better(b, a, Objective::Targeted));
    a.acc = 0.4;
    CHECK(better(a, b, Objective::Untargeted));
    CHECK(better(b, a, Objective::Targeted));
}

TEST_CASE("FBS accepts only matching offset and direction") {
    const auto& f = trained();
    auto m = f.model;
    // Weight 605 of the first layer holds page 1 bytes 605; make its MSB a 1 so
    // the 1->0 flip at bop 4847 exists.
    m.layers[1].weight_q[605] = -3;
    SearchConfig c = quick_cfg();
    c.max_iterations = 1;
    c.min_flippable = 1;
    c.p = 1;
    c.p_max = 1 << 20;
    const auto b = make_eval_batch(f.data, c);
    const BitRef r{1, 605, 7};
    const auto bg = qnn::bit_gradients(qnn::weight_gradients(m, b.x, b.y).grad, m);
    // Pick the objective under which this toggle is a candidate.
    c.objective = bg.at(r) * -1.0 >= 0.0 ? Objective::Untargeted : Objective::Targeted;
    c.target_fraction = 0.999;

    const dram::FlipProfile match({{3, 4847, 0, 1.0}});
    const auto chain = search_chain(m, b, &match, c);
    REQUIRE(chain.steps.size() == 1);
    CHECK(chain.steps[0].bit == image::TargetBit{1, 4847, 0});
    CHECK(chain.steps[0].ref == r);
    CHECK(chain.steps[0].frame == 3);

    const dram::FlipProfile opposite({{3, 4847, 1, 1.0}});
    const auto none = search_chain(m, b, &opposite, c);
    CHECK(none.steps.empty());
    CHECK_FALSE(none.feasible);

    c.protected_bits.insert(r);
    CHECK(search_chain(m, b, &match, c).steps.empty());
}

TEST_CASE("empty profile is infeasible with zero flips") {
    const auto& f = trained();
    const auto b = make_eval_batch(f.data, quick_cfg());
    const dram::FlipProfile empty;
    const auto c = search_chain(f.model, b, &empty, quick_cfg());
    CHECK(c.steps.empty());
    CHECK_FALSE(c.feasible);
    CHECK_FALSE(search_chain(f.model, b, nullptr, quick_cfg()).feasible);
}

TEST_CASE("chains respect one flip per page, frame reuse, direction and masks") {
    const auto& f = trained();
    const auto img = image::WeightImage::build(f.model);
    REQUIRE(img.page_count() == 3);
    const auto prof = dense_profile(6);
    SearchConfig c = quick_cfg();
    c.protected_layers.insert(3);
    c.max_iterations = 3;
    const auto b = make_eval_batch(f.data, c);
    const auto chains = search_chains(f.model, b, &prof, c, 3);
    std::set<std::uint64_t> frames;
    std::set<BitRef> refs;
    for (const auto& ch : chains) {
        std::set<int> pages;
        auto cur = img;
        for (const auto& s : ch.steps) {
            CHECK(pages.insert(s.bit.page).second);
            CHECK(frames.insert(s.frame).second);
            CHECK(refs.insert(s.ref).second);
            CHECK(s.ref.layer != 3);
            CHECK(img.bit_to_addr(s.ref) == s.bit.addr());
            CHECK(cur.stored_bit(s.bit.addr()) == image::from_bit(s.bit.mode));
            bool listed = false;
            for (const auto& e : prof.at_frame(s.frame)) listed = listed || (e.bop == s.bit.bop && e.dir == s.bit.mode);
            CHECK(listed);
            cur.apply_flips({s.bit});
        }
        CHECK(ch.steps.size() <= 3);
    }
    CHECK(frames.size() >= 3);
}

TEST_CASE("each committed step is the best of an exhaustive evaluation") {
    const auto& f = trained();
    SearchConfig c = quick_cfg();
    c.use_profile = false;
    c.record_candidates = true;
    c.target_accuracy = 0.05;
    c.max_iterations = 6;
    const auto b = make_eval_batch(f.data, c);
    const auto chain = search_chain(f.model, b, nullptr, c);
    REQUIRE(chain.steps.size() >= 5);
    auto cur = f.model;
    for (const auto& s : chain.steps) {
        std::vector<Candidate> full = s.candidates;
        for (auto& cand : full) {
            const auto r = evaluate_candidate(cur, cand.ref, b, Exec::Serial);
            cand.loss = r.loss;
            cand.acc = r.acc;
        }
        const auto best = *std::min_element(full.begin(), full.end(), [](const Candidate& x, const Candidate& y) {
            return better(x, y, Objective::Untargeted);
        });
        CHECK(best.ref == s.ref);
        CHECK(best.acc == s.acc);
        CHECK(best.loss == s.loss);
        qnn::flip_bit(cur, s.ref);
    }
}

TEST_CASE("search leaves its input model alone and records real accuracies") {
    const auto& f = trained();
    SearchConfig c = quick_cfg();
    const auto b = make_eval_batch(f.data, c);
    const auto prof = dense_profile(3);
    const auto h = qnn::model_hash(f.model);
    const auto chain = search_chain(f.model, b, &prof, c);
    CHECK(qnn::model_hash(f.model) == h);
    REQUIRE_FALSE(chain.steps.empty());
    const auto after = image::apply_to_model(f.model, chain.bits());
    CHECK(qnn::loss_and_accuracy(after, b.x, b.y).acc == chain.terminal_acc());
}

TEST_CASE("targeted search on a single-class batch of that class needs no flips") {
    const auto& f = trained();
    SearchConfig c = quick_cfg();
    c.objective = Objective::Targeted;
    c.target_class = 2;
    c.target_fraction = 0.9;
    EvalBatch b = make_eval_batch(f.data, c);
    for (int y : b.y) CHECK(y == 2);
    // A batch drawn only from samples the model already puts in class 2.
    std::vector<std::size_t> rows;
    const auto z = qnn::forward(f.model, f.data.test_x);
    for (std::size_t i = 0; i < f.data.test_y.size(); ++i) {
        const auto* p = &z.values[i * 4];
        if (std::max_element(p, p + 4) - p == 2) rows.push_back(i);
    }
    REQUIRE_FALSE(rows.empty());
    const EvalBatch own{qnn::gather_rows(f.data.test_x, rows), std::vector<int>(rows.size(), 2)};
    const auto prof = dense_profile(3);
    const auto chain = search_chain(f.model, own, &prof, c);
    CHECK(chain.feasible);
    CHECK(chain.steps.empty());
}

TEST_CASE("top-N protection rounds") {
    const auto& f = trained();
    SearchConfig c = quick_cfg();
    const auto b = make_eval_batch(f.data, c);
    const auto one = protect_topn_rounds(f.model, b, c, 1);
    SearchConfig plain = c;
    plain.use_profile = false;
    const auto ref = search_chain(f.model, b, nullptr, plain);
    REQUIRE(one.size() == 1);
    CHECK(one[0].bits() == ref.bits());

    const auto rounds = protect_topn_rounds(f.model, b, c, 4);
    std::set<BitRef> seen;
    for (const auto& r : rounds) {
        for (const auto& s : r.steps) CHECK(seen.count(s.ref) == 0);
        for (const auto& s : r.steps) seen.insert(s.ref);
    }
}

TEST_CASE("random flip baseline") {
    const auto& f = trained();
    const auto zero = random_flip_drops(f.model, f.data.test_x, f.data.test_y, 0, 4, 1);
    for (double d : zero) CHECK(d == 0.0);
    const auto a = random_flip_drops(f.model, f.data.test_x, f.data.test_y, 20, 5, 9);
    const auto b2 = random_flip_drops(f.model, f.data.test_x, f.data.test_y, 20, 5, 9);
    CHECK(a == b2);
    CHECK(a.size() == 5);
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK_THROWS_AS(median({}), ConfigError);
}

TEST_CASE("trace has one line per step plus the clean row") {
    const auto& f = trained();
    SearchConfig c = quick_cfg();
    const auto b = make_eval_batch(f.data, c);
    const auto prof = dense_profile(3);
    const auto chain = search_chain(f.model, b, &prof, c);
    const auto t = trace_csv(chain);
    CHECK(static_cast<std::size_t>(std::count(t.begin(), t.end(), '\n')) == chain.steps.size() + 2);
}
