#include "owdet/retrieval.hpp"

#include <cmath>

#include "doctest.h"

using namespace owdet;

namespace {

MemoryTriplet proto_triplet(std::int64_t step, std::vector<std::vector<double>> protos,
                            std::vector<std::string> labels) {
    MemoryTriplet t;
    t.step = step;
    t.labels = std::move(labels);
    t.prototypes = std::move(protos);
    return t;
}

std::vector<double> unit(std::vector<double> v) {
    double sq = 0.0;
    for (const double x : v) sq += x * x;
    for (auto& x : v) x /= std::sqrt(sq);
    return v;
}

Detection det(double cx, double cy, double w, double h, const std::string& cls, double score) {
    return Detection{{cx, cy, w, h}, cls, score};
}

DetectorConfig retrieval_detector_config() {
    DetectorConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.l_fusion = 2;
    c.n_queries = 4;
    c.grid_h = 2;
    c.grid_w = 2;
    c.image_h = 8;
    c.image_w = 8;
    c.prompt_length = 2;
    c.lora_rank = 2;
    c.lora_layers = 2;
    c.ffn_hidden = 16;
    c.text_layers = 1;
    c.image_layers = 1;
    c.decoder_layers = 1;
    c.vocab = Vocabulary::from_class_names({"solid circle", "striped square", "dotted bar"});
    return c;
}

}  // namespace

TEST_CASE("a stored prototype retrieves its own step") {
    MemoryPool pool;
    const auto psi = unit({1, 2, 3, 4});
    pool.memorize(proto_triplet(1, {psi}, {"a"}));
    RetrievalConfig cfg;
    const auto outcome = retrieve(psi, pool, cfg);
    CHECK(outcome.retrieved == std::vector<std::size_t>{0});
    CHECK(outcome.step_scores[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(outcome.fallback);
}

TEST_CASE("orthogonal queries fall back") {
    MemoryPool pool;
    pool.memorize(proto_triplet(1, {{1, 0, 0, 0}}, {"a"}));
    RetrievalConfig cfg;
    const auto outcome = retrieve({0, 1, 0, 0}, pool, cfg);
    CHECK(outcome.fallback);
    CHECK(outcome.retrieved.empty());
    CHECK(outcome.step_scores[0] == doctest::Approx(0.0));
}

TEST_CASE("only steps clearing tau are retrieved") {
    // step scores: cos = 0.95 and 0.50 against the query axis
    MemoryPool pool;
    pool.memorize(proto_triplet(1, {unit({0.95, std::sqrt(1 - 0.95 * 0.95), 0, 0})}, {"a"}));
    pool.memorize(proto_triplet(2, {unit({0.50, std::sqrt(1 - 0.25), 0, 0})}, {"b"}));
    RetrievalConfig cfg;  // tau = 0.89
    const auto outcome = retrieve({1, 0, 0, 0}, pool, cfg);
    CHECK(outcome.retrieved == std::vector<std::size_t>{0});
    CHECK(outcome.step_scores[0] == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(outcome.step_scores[1] == doctest::Approx(0.50).epsilon(1e-12));
}

TEST_CASE("step score is the max over class prototypes") {
    MemoryPool pool;
    pool.memorize(proto_triplet(1, {{0, 1, 0, 0}, unit({0.99, 0.1411, 0, 0})}, {"a", "b"}));
    RetrievalConfig cfg;
    const auto outcome = retrieve({1, 0, 0, 0}, pool, cfg);
    CHECK(outcome.step_scores[0] == doctest::Approx(0.99).epsilon(1e-3));
    CHECK_FALSE(outcome.fallback);
}

TEST_CASE("threshold monotonicity and the extremes") {
    MemoryPool pool;
    pool.memorize(proto_triplet(1, {unit({0.9, 0.4359, 0, 0})}, {"a"}));
    pool.memorize(proto_triplet(2, {unit({0.5, 0.8660, 0, 0})}, {"b"}));
    pool.memorize(proto_triplet(3, {{0, 0, 1, 0}}, {"c"}));
    const std::vector<double> query = {1, 0, 0, 0};
    std::size_t prev = 4;
    for (const double tau : {-1.0, 0.0, 0.4, 0.85, 0.95, 1.5}) {
        RetrievalConfig cfg;
        cfg.tau = tau;
        const auto outcome = retrieve(query, pool, cfg);
        CHECK(outcome.retrieved.size() <= prev);  // raising tau never enlarges the set
        prev = outcome.retrieved.size();
        if (tau == -1.0) CHECK(outcome.retrieved.size() == pool.size());
        if (tau > 1.0) CHECK(outcome.fallback);
    }
}

TEST_CASE("oracle retrieval returns the true step and falls back on unseen") {
    MemoryPool pool;
    pool.memorize(proto_triplet(1, {{1, 0, 0, 0}}, {"a"}));
    pool.memorize(proto_triplet(2, {{0, 1, 0, 0}}, {"b"}));
    pool.memorize(proto_triplet(3, {{0, 0, 1, 0}}, {"c"}));

    const auto seen = oracle_retrieve(pool, 3);
    CHECK(seen.retrieved == std::vector<std::size_t>{2});
    CHECK_FALSE(seen.fallback);

    const auto unseen = oracle_retrieve(pool, std::nullopt);
    CHECK(unseen.fallback);

    CHECK_THROWS_AS(oracle_retrieve(pool, 9), InputError);
}

TEST_CASE("nms keeps the single detection and drops same-class duplicates") {
    RetrievalConfig cfg;
    const auto single = nms({det(0.5, 0.5, 0.2, 0.2, "a", 0.7)}, cfg.nms_iou);
    CHECK(single.size() == 1);

    const auto dup = nms({det(0.5, 0.5, 0.2, 0.2, "a", 0.9), det(0.5, 0.5, 0.2, 0.2, "a", 0.8)},
                         cfg.nms_iou);
    REQUIRE(dup.size() == 1);
    CHECK(dup[0].score == 0.9);
}

TEST_CASE("nms keeps lightly overlapping boxes") {
    // xyxy [0,0,1,1] and [0.9,0,1.9,1]: IoU = 0.1/1.9, below 0.5
    const auto kept = nms({Detection{from_corners(0, 0, 1, 1), "a", 0.9},
                           Detection{from_corners(0.9, 0, 1.9, 1), "a", 0.8}},
                          0.5);
    CHECK(kept.size() == 2);
    CHECK(kept[0].score == 0.9);  // sorted by score
}

TEST_CASE("nms ignores other classes and is a fixed point") {
    std::vector<Detection> dets = {det(0.5, 0.5, 0.2, 0.2, "a", 0.9),
                                   det(0.5, 0.5, 0.2, 0.2, "b", 0.8),
                                   det(0.52, 0.5, 0.2, 0.2, "a", 0.7),
                                   det(0.1, 0.1, 0.1, 0.1, "a", 0.6)};
    const auto once = nms(dets, 0.5);
    CHECK(once.size() == 3);  // the 0.7 'a' duplicate is suppressed
    const auto twice = nms(once, 0.5);
    REQUIRE(twice.size() == once.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(twice[i].score == once[i].score);
        CHECK(twice[i].class_name == once[i].class_name);
    }
    // output is a subset of the input
    for (const auto& kept : once) {
        bool found = false;
        for (const auto& d : dets) found = found || (d.score == kept.score && d.class_name == kept.class_name);
        CHECK(found);
    }
}

TEST_CASE("nms tie-break prefers the smaller box") {
    const auto kept = nms({det(0.5, 0.5, 0.4, 0.4, "a", 0.8), det(0.5, 0.5, 0.3, 0.3, "a", 0.8)},
                          0.3);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].box.w == 0.3);
}

TEST_CASE("empty pool inference is bit-identical to the zero-shot path") {
    Rng rng(30);
    Detector base(retrieval_detector_config(), rng);
    base.freeze();
    MemoryPool pool;
    RetrievalConfig cfg;
    const std::vector<std::string> labels = {"solid circle", "dotted bar"};

    Rng img_rng(31);
    ImageSample img;
    img.height = 8;
    img.width = 8;
    img.pixels.resize(8 * 8 * 3);
    for (auto& p : img.pixels) p = img_rng.uniform();

    RetrievalOutcome outcome;
    const auto via_pool = infer(base, pool, img, cfg, labels, &outcome);
    const auto zero_shot = infer_zero_shot(base, img, cfg, labels);
    CHECK(outcome.fallback);
    REQUIRE(via_pool.size() == zero_shot.size());
    for (std::size_t i = 0; i < via_pool.size(); ++i) {
        CHECK(via_pool[i].score == zero_shot[i].score);
        CHECK(via_pool[i].box.cx == zero_shot[i].box.cx);
        CHECK(via_pool[i].class_name == zero_shot[i].class_name);
    }
}

TEST_CASE("retrieved triplets bound the output class set") {
    Rng rng(33);
    Detector base(retrieval_detector_config(), rng);
    base.freeze();

    Rng mem_rng(34);
    MemoryPool pool;
    for (std::int64_t step = 1; step <= 2; ++step) {
        auto [con, inc] = init_step_memories(MemoryPool{}, base.config().memory_config(), mem_rng);
        MemoryTriplet t;
        t.step = step;
        t.labels = step == 1 ? std::vector<std::string>{"solid circle"}
                             : std::vector<std::string>{"striped square"};
        t.prototypes = {step == 1 ? unit({1, 1, 0, 0, 0, 0, 0, 0}) : unit({0, 0, 1, 1, 0, 0, 0, 0})};
        t.concept_memory = std::move(con);
        t.interaction_memory = std::move(inc);
        pool.memorize(std::move(t));
    }
    RetrievalConfig cfg;
    cfg.tau = -1.0;  // force both triplets
    Rng img_rng(35);
    ImageSample img;
    img.height = 8;
    img.width = 8;
    img.pixels.resize(8 * 8 * 3);
    for (auto& p : img.pixels) p = img_rng.uniform();

    const auto dets = infer(base, pool, img, cfg, {"dotted bar"});
    CHECK_FALSE(dets.empty());
    for (const auto& d : dets)
        CHECK((d.class_name == "solid circle" || d.class_name == "striped square"));
}

TEST_CASE("last-triplet inference requires a pool") {
    Rng rng(36);
    Detector base(retrieval_detector_config(), rng);
    MemoryPool pool;
    ImageSample img;
    img.height = 8;
    img.width = 8;
    img.pixels.assign(8 * 8 * 3, 0.5);
    CHECK_THROWS_AS(infer_last_triplet(base, pool, img, RetrievalConfig{}, {"solid circle"}),
                    InputError);
}

TEST_CASE("retrieval config validation bounds tau and nms") {
    RetrievalConfig ok;
    ok.validate();
    RetrievalConfig bad_tau;
    bad_tau.tau = 1.5;
    CHECK_THROWS_AS(bad_tau.validate(), ConfigError);
    RetrievalConfig bad_nms;
    bad_nms.nms_iou = 0.0;
    CHECK_THROWS_AS(bad_nms.validate(), ConfigError);
}
