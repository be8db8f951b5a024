#include "owdet/bench.hpp"

#include <set>

#include "doctest.h"
#include "owdet/errors.hpp"

using namespace owdet;

namespace {

TaskConfig small_task() {
    TaskConfig c;
    c.subsets = 3;
    c.classes_per_subset = 2;
    c.shots = 2;
    c.eval_per_subset = 3;
    c.pretrain_classes = 4;
    c.pretrain_shots = 2;
    c.pretrain_eval_per_class = 1;
    c.unseen_classes = 2;
    c.unseen_eval_images = 3;
    return c;
}

}  // namespace

TEST_CASE("same seed twice gives byte-identical datasets") {
    const TaskConfig cfg = small_task();
    ContinualTask a = generate_synthetic_task(cfg, 99);
    ContinualTask b = generate_synthetic_task(cfg, 99);
    REQUIRE(a.subsets.size() == b.subsets.size());
    for (std::size_t t = 0; t < a.subsets.size(); ++t) {
        REQUIRE(a.subsets[t].train.size() == b.subsets[t].train.size());
        for (std::size_t i = 0; i < a.subsets[t].train.size(); ++i)
            CHECK(a.subsets[t].train[i].pixels == b.subsets[t].train[i].pixels);
        for (std::size_t i = 0; i < a.subsets[t].eval.size(); ++i)
            CHECK(a.subsets[t].eval[i].pixels == b.subsets[t].eval[i].pixels);
    }
    ContinualTask c = generate_synthetic_task(cfg, 123);
    CHECK(a.subsets[0].train[0].pixels != c.subsets[0].train[0].pixels);
}

TEST_CASE("label sets are pairwise disjoint and unseen never overlaps seen") {
    ContinualTask task = generate_synthetic_task(small_task(), 7);
    std::set<std::string> seen;
    for (const auto& subset : task.subsets)
        for (const auto& label : subset.labels) CHECK(seen.insert(label).second);
    for (const auto& label : task.unseen_labels) CHECK_FALSE(seen.count(label));
    for (const auto& label : task.pretrain.labels) CHECK_FALSE(seen.count(label));
}

TEST_CASE("every subset carries exactly shots training images per class") {
    const TaskConfig cfg = small_task();
    ContinualTask task = generate_synthetic_task(cfg, 8);
    for (const auto& subset : task.subsets) {
        CHECK(subset.train.size() ==
              static_cast<std::size_t>(cfg.shots * cfg.classes_per_subset));
        for (const auto& label : subset.labels) {
            std::int64_t images_with_label = 0;
            std::int64_t instances = 0;
            for (const auto& img : subset.train) {
                bool has = false;
                for (const auto& name : img.class_names)
                    if (name == label) {
                        has = true;
                        ++instances;
                    }
                images_with_label += has ? 1 : 0;
            }
            CHECK(images_with_label == cfg.shots);
            CHECK(instances >= cfg.shots);
        }
    }
}

TEST_CASE("boxes are inside the unit square with bounded instance counts") {
    const TaskConfig cfg = small_task();
    ContinualTask task = generate_synthetic_task(cfg, 9);
    auto check_images = [&](const std::vector<ImageSample>& images) {
        for (const auto& img : images) {
            CHECK(img.boxes.size() >= 1);
            CHECK(img.boxes.size() <= static_cast<std::size_t>(cfg.max_instances));
            for (const auto& b : img.boxes) {
                const CornerBox c = to_corners(b);
                CHECK(c.x0 >= 0.0);
                CHECK(c.y0 >= 0.0);
                CHECK(c.x1 <= 1.0);
                CHECK(c.y1 <= 1.0);
                CHECK(b.w > 0.0);
                CHECK(b.h > 0.0);
            }
            for (const double p : img.pixels) {
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
            }
        }
    };
    for (const auto& subset : task.subsets) {
        check_images(subset.train);
        check_images(subset.eval);
    }
    check_images(task.unseen_eval);
}

TEST_CASE("class budget beyond the shape-pattern grid is a config error") {
    TaskConfig cfg = small_task();
    cfg.subsets = 10;
    cfg.classes_per_subset = 3;  // 30 continual + unseen > 30 off-diagonal combos
    CHECK_THROWS_AS(generate_synthetic_task(cfg, 1), ConfigError);
}

TEST_CASE("pretrain covers every shape and pattern word") {
    TaskConfig cfg = small_task();
    cfg.pretrain_classes = 6;
    ContinualTask task = generate_synthetic_task(cfg, 10);
    std::set<int> shapes, patterns;
    for (const auto& spec : task.pretrain.classes) {
        shapes.insert(static_cast<int>(spec.shape));
        patterns.insert(static_cast<int>(spec.pattern));
    }
    CHECK(shapes.size() == 6);
    CHECK(patterns.size() == 6);
}

TEST_CASE("task save/load round trip preserves pixels and boxes") {
    const TaskConfig cfg = small_task();
    ContinualTask task = generate_synthetic_task(cfg, 11);
    const std::string dir = "/tmp/owdet_task_roundtrip";
    std::system(("mkdir -p " + dir).c_str());
    save_task(task, dir);
    ContinualTask loaded = load_task(dir);

    REQUIRE(loaded.subsets.size() == task.subsets.size());
    CHECK(loaded.vocab.tokens() == task.vocab.tokens());
    for (std::size_t t = 0; t < task.subsets.size(); ++t) {
        CHECK(loaded.subsets[t].labels == task.subsets[t].labels);
        REQUIRE(loaded.subsets[t].train.size() == task.subsets[t].train.size());
        for (std::size_t i = 0; i < task.subsets[t].train.size(); ++i) {
            CHECK(loaded.subsets[t].train[i].pixels == task.subsets[t].train[i].pixels);
            CHECK(loaded.subsets[t].train[i].class_names == task.subsets[t].train[i].class_names);
        }
    }
    CHECK(loaded.unseen_labels == task.unseen_labels);
}

TEST_CASE("eval access counters track reads") {
    ContinualTask task = generate_synthetic_task(small_task(), 12);
    CHECK(task.access_counts().eval_reads.empty());
    task.eval_images(0);
    task.eval_images(0);
    task.eval_images(1);
    task.unseen_eval_images();
    const auto counts = task.access_counts();
    CHECK(counts.eval_reads[0] == 2);
    CHECK(counts.eval_reads[1] == 1);
    CHECK(counts.eval_reads[2] == 0);
    CHECK(counts.unseen_eval_reads == 1);
    // train reads do not touch eval counters
    task.train_images(0);
    CHECK(task.access_counts().eval_reads[0] == 2);
}
