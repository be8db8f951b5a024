#include "owdet/memory.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "owdet/container.hpp"
#include "owdet/detector.hpp"

using namespace owdet;

namespace {

MemoryInitConfig tiny_memory_config() {
    MemoryInitConfig c;
    c.prompt_length = 3;
    c.d_model = 8;
    c.lora_rank = 2;
    c.lora_layers = 2;
    c.tie_qk = true;
    return c;
}

DetectorConfig tiny_detector_config() {
    DetectorConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.l_fusion = 2;
    c.n_queries = 4;
    c.grid_h = 2;
    c.grid_w = 2;
    c.image_h = 8;
    c.image_w = 8;
    c.prompt_length = 3;
    c.lora_rank = 2;
    c.lora_layers = 2;
    c.ffn_hidden = 16;
    c.text_layers = 1;
    c.image_layers = 1;
    c.decoder_layers = 1;
    c.vocab = Vocabulary::from_class_names({"red blob", "blue blob"});
    return c;
}

MemoryTriplet make_triplet(std::int64_t step, Rng& rng, const MemoryInitConfig& cfg) {
    MemoryTriplet t;
    t.step = step;
    t.labels = {"class-a", "class-b"};
    for (int k = 0; k < 2; ++k) {
        std::vector<double> proto(static_cast<std::size_t>(cfg.d_model));
        double sq = 0.0;
        for (auto& v : proto) {
            v = rng.gaussian();
            sq += v * v;
        }
        for (auto& v : proto) v /= std::sqrt(sq);
        t.prototypes.push_back(std::move(proto));
    }
    MemoryPool empty;
    auto [con, inc] = init_step_memories(empty, cfg, rng);
    for (auto& layer : inc.layers)
        for (LoraPair* p : layer.active_pairs())
            for (auto& v : p->up.mutable_values()) v = rng.gaussian(0.0, 0.1);
    t.concept_memory = std::move(con);
    t.interaction_memory = std::move(inc);
    return t;
}

// A flat-color image with one centered box instance.
ImageSample color_patch_image(double r, double g, double b, const std::string& label) {
    ImageSample img;
    img.height = 8;
    img.width = 8;
    img.pixels.resize(8 * 8 * 3);
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x) {
            img.pixel(y, x, 0) = r * (0.5 + 0.5 * ((x + y) % 2));
            img.pixel(y, x, 1) = g * (0.5 + 0.5 * ((x + y) % 2));
            img.pixel(y, x, 2) = b * (0.5 + 0.5 * ((x + y) % 2));
        }
    img.boxes.push_back({0.5, 0.5, 0.5, 0.5});
    img.class_names.push_back(label);
    return img;
}

}  // namespace

TEST_CASE("step-1 initialization zeroes every up-projection") {
    Rng rng(1);
    MemoryPool pool;
    auto [con, inc] = init_step_memories(pool, tiny_memory_config(), rng);
    CHECK(con.prompt.shape() == Shape{3, 8});
    REQUIRE(inc.layers.size() == 2);
    for (const auto& layer : inc.layers) {
        CHECK(layer.tied);
        for (const LoraPair* p : layer.active_pairs()) {
            for (const double v : p->up.values()) CHECK(v == 0.0);
            bool any_nonzero = false;
            for (const double v : p->down.values()) any_nonzero = any_nonzero || v != 0.0;
            CHECK(any_nonzero);
        }
    }
}

TEST_CASE("later steps copy the previous triplet and stay isolated from the pool") {
    Rng rng(2);
    const MemoryInitConfig cfg = tiny_memory_config();
    MemoryPool pool;
    pool.memorize(make_triplet(1, rng, cfg));
    const auto stored_prompt = pool.triplet(0).concept_memory.prompt.values();

    auto [con, inc] = init_step_memories(pool, cfg, rng);
    CHECK(con.prompt.values() == stored_prompt);
    CHECK(inc.layers[0].t_from_i_qk.down.values() ==
          pool.triplet(0).interaction_memory.layers[0].t_from_i_qk.down.values());

    // mutating the returned memories must not touch the pool
    con.prompt.mutable_values()[0] += 42.0;
    inc.layers[0].t_from_i_qk.down.mutable_values()[0] += 42.0;
    CHECK(pool.triplet(0).concept_memory.prompt.values() == stored_prompt);
}

TEST_CASE("memorize enforces contiguous steps") {
    Rng rng(3);
    const MemoryInitConfig cfg = tiny_memory_config();
    MemoryPool pool;
    CHECK_THROWS_AS(pool.memorize(make_triplet(3, rng, cfg)), InputError);
    pool.memorize(make_triplet(1, rng, cfg));
    CHECK(pool.size() == 1);
    pool.memorize(make_triplet(2, rng, cfg));
    CHECK(pool.size() == 2);
    CHECK_THROWS_AS(pool.memorize(make_triplet(2, rng, cfg)), InputError);
    CHECK_THROWS_AS(pool.memorize(make_triplet(4, rng, cfg)), InputError);
}

TEST_CASE("prototypes are unit vectors and identical crops reproduce one embedding") {
    Rng det_rng(4);
    Detector det(tiny_detector_config(), det_rng);
    det.freeze();

    ImageSample img = color_patch_image(0.9, 0.1, 0.1, "red blob");
    PrototypeConfig pc;
    pc.crops_per_class = 4;
    pc.margin_jitter = 0.0;  // all crops identical
    Rng rng(5);
    auto protos = build_prototypes({img}, {"red blob"}, det, pc, rng);
    REQUIRE(protos.count("red blob"));

    const auto& psi = protos["red blob"];
    double sq = 0.0;
    for (const double v : psi) sq += v * v;
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-9));

    NoGradGuard guard;
    ImageSample crop = crop_and_resize(img, img.boxes[0], pc.margin, 8, 8);
    const auto g = det.encode_image(crop).global_embedding.values();
    for (std::size_t i = 0; i < psi.size(); ++i) CHECK(psi[i] == doctest::Approx(g[i]).epsilon(1e-9));
}

TEST_CASE("distinct classes give distinguishable prototypes") {
    Rng det_rng(6);
    Detector det(tiny_detector_config(), det_rng);
    det.freeze();
    ImageSample red = color_patch_image(0.9, 0.1, 0.1, "red blob");
    ImageSample blue = color_patch_image(0.1, 0.2, 0.95, "blue blob");
    PrototypeConfig pc;
    Rng rng(7);
    auto protos = build_prototypes({red, blue}, {"red blob", "blue blob"}, det, pc, rng);
    double dot = 0.0;
    for (std::size_t i = 0; i < protos["red blob"].size(); ++i)
        dot += protos["red blob"][i] * protos["blue blob"][i];
    CHECK(dot < 0.99);
}

TEST_CASE("missing instances for a class is an integrity error") {
    Rng det_rng(8);
    Detector det(tiny_detector_config(), det_rng);
    ImageSample red = color_patch_image(0.9, 0.1, 0.1, "red blob");
    PrototypeConfig pc;
    Rng rng(9);
    CHECK_THROWS_AS(build_prototypes({red}, {"blue blob"}, det, pc, rng), InputError);
}

TEST_CASE("pool save/load/save is byte-identical and empty pools round-trip") {
    Rng rng(10);
    const MemoryInitConfig cfg = tiny_memory_config();
    MemoryPool pool(nlohmann::json{{"note", "test"}});
    pool.memorize(make_triplet(1, rng, cfg));
    pool.memorize(make_triplet(2, rng, cfg));

    const std::string p1 = "/tmp/owdet_pool_a.bin", p2 = "/tmp/owdet_pool_b.bin";
    save_pool(pool, p1);
    MemoryPool loaded = load_pool(p1);
    CHECK(loaded.size() == 2);
    save_pool(loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    MemoryPool empty;
    save_pool(empty, p1);
    CHECK(load_pool(p1).empty());
}

TEST_CASE("corrupted files are rejected without partial pools") {
    Rng rng(11);
    MemoryPool pool;
    pool.memorize(make_triplet(1, rng, tiny_memory_config()));
    const std::string path = "/tmp/owdet_pool_corrupt.bin";
    save_pool(pool, path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    SUBCASE("flipped payload byte breaks the checksum") {
        std::string corrupt = bytes;
        corrupt[corrupt.size() / 2] = static_cast<char>(corrupt[corrupt.size() / 2] ^ 0x5A);
        std::ofstream(path, std::ios::binary) << corrupt;
        CHECK_THROWS_AS(load_pool(path), DataError);
    }

    SUBCASE("bad magic") {
        std::string corrupt = bytes;
        corrupt[0] = 'X';
        std::ofstream(path, std::ios::binary) << corrupt;
        CHECK_THROWS_AS(load_pool(path), DataError);
    }

    SUBCASE("bad version") {
        std::string corrupt = bytes;
        corrupt[4] = 0x7F;
        std::ofstream(path, std::ios::binary) << corrupt;
        CHECK_THROWS_AS(load_pool(path), DataError);
    }

    SUBCASE("100-trial truncation fuzz never yields a pool") {
        Rng fuzz(12);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t cut = 1 + static_cast<std::size_t>(
                                            fuzz.uniform_index(static_cast<std::uint64_t>(bytes.size() - 1)));
            std::ofstream(path, std::ios::binary) << bytes.substr(0, cut);
            CHECK_THROWS_AS(load_pool(path), DataError);
        }
    }
}

TEST_CASE("added-parameter accounting is affine in lora layers") {
    MemoryInitConfig cfg;
    cfg.prompt_length = 10;
    cfg.d_model = 32;
    cfg.lora_rank = 2;
    cfg.tie_qk = true;

    cfg.lora_layers = 0;
    CHECK(count_added_params(cfg).total == 10 * 32);

    std::vector<std::int64_t> totals;
    for (std::int64_t l = 0; l <= 6; ++l) {
        cfg.lora_layers = l;
        totals.push_back(count_added_params(cfg).total);
    }
    const std::int64_t increment = totals[1] - totals[0];
    for (std::size_t i = 1; i < totals.size(); ++i)
        CHECK(totals[i] - totals[i - 1] == increment);
    CHECK(increment == 4 * 2 * 2 * 32);  // tied: 4 pairs of (r x d) + (d x r)

    cfg.tie_qk = false;
    cfg.lora_layers = 1;
    CHECK(count_added_params(cfg).lora_total == 6 * 2 * 2 * 32);
}

TEST_CASE("interaction memory param_count matches the accounting") {
    Rng rng(13);
    const MemoryInitConfig cfg = tiny_memory_config();
    MemoryPool pool;
    auto [con, inc] = init_step_memories(pool, cfg, rng);
    CHECK(inc.param_count() == count_added_params(cfg).lora_total);
}
