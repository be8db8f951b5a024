#include "owdet/coco.hpp"

#include <fstream>

#include "doctest.h"
#include "owdet/errors.hpp"

using namespace owdet;

namespace {

const char* kMinimalGt = R"({
  "images": [{"id": 1, "width": 100, "height": 100, "file_name": "a.jpg", "license": 3}],
  "annotations": [{"id": 1, "image_id": 1, "category_id": 7, "bbox": [10, 10, 20, 20], "iscrowd": 0}],
  "categories": [{"id": 7, "name": "cat", "supercategory": "animal"}]
})";

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = "/tmp/" + name;
    std::ofstream(path, std::ios::trunc) << content;
    return path;
}

}  // namespace

TEST_CASE("minimal valid file loads with unknown fields ignored") {
    const auto ds = load_coco_ground_truth(write_temp("owdet_coco_min.json", kMinimalGt));
    REQUIRE(ds.images.size() == 1);
    REQUIRE(ds.annotations.size() == 1);
    REQUIRE(ds.categories.size() == 1);
    CHECK(ds.categories[0].name == "cat");
}

TEST_CASE("bbox normalization converts absolute xywh to center form") {
    const auto ds = load_coco_ground_truth(write_temp("owdet_coco_norm.json", kMinimalGt));
    const auto evals = pair_coco(ds, {});
    REQUIRE(evals.size() == 1);
    REQUIRE(evals[0].gt_boxes.size() == 1);
    const Box& b = evals[0].gt_boxes[0];
    CHECK(b.cx == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(b.cy == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(b.w == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(b.h == doctest::Approx(0.20).epsilon(1e-12));
}

TEST_CASE("dangling references name the offending id and path") {
    const std::string bad = R"({
      "images": [{"id": 1, "width": 100, "height": 100, "file_name": "a.jpg"}],
      "annotations": [{"id": 1, "image_id": 99, "category_id": 7, "bbox": [1, 1, 2, 2]}],
      "categories": [{"id": 7, "name": "cat"}]
    })";
    try {
        load_coco_ground_truth(write_temp("owdet_coco_dangling.json", bad));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("99") != std::string::npos);
        CHECK(msg.find("annotations[0].image_id") != std::string::npos);
    }
}

TEST_CASE("missing keys and non-finite numbers are parse errors with paths") {
    const std::string missing = R"({"images": [{"id": 1, "width": 100, "height": 100}],
                                    "annotations": [], "categories": []})";
    CHECK_THROWS_AS(load_coco_ground_truth(write_temp("owdet_coco_missing.json", missing)),
                    DataError);

    const std::string nonfinite = R"({
      "images": [{"id": 1, "width": 100, "height": 100, "file_name": "a.jpg"}],
      "annotations": [{"id": 1, "image_id": 1, "category_id": 7, "bbox": [1, 1, 2, 1e999]}],
      "categories": [{"id": 7, "name": "cat"}]
    })";
    CHECK_THROWS_AS(load_coco_ground_truth(write_temp("owdet_coco_inf.json", nonfinite)), DataError);
}

TEST_CASE("prediction files load and pair against ground truth") {
    const auto ds = load_coco_ground_truth(write_temp("owdet_coco_gt2.json", kMinimalGt));
    const std::string preds = R"([
      {"image_id": 1, "category_id": 7, "bbox": [12, 11, 18, 19], "score": 0.8},
      {"image_id": 1, "category_id": 7, "bbox": [50, 50, 10, 10], "score": 0.2}
    ])";
    const auto loaded = load_coco_predictions(write_temp("owdet_coco_preds.json", preds));
    REQUIRE(loaded.size() == 2);
    const auto evals = pair_coco(ds, loaded);
    REQUIRE(evals[0].detections.size() == 2);
    CHECK(evals[0].detections[0].class_name == "cat");
    CHECK(evals[0].detections[0].score == doctest::Approx(0.8));

    // AP over this pairing is sane
    const auto ap = compute_ap(evals, ds.class_names());
    REQUIRE(ap.has_value());
    CHECK(*ap > 0.0);
}

TEST_CASE("predictions referencing unknown ids fail with the id in the message") {
    const auto ds = load_coco_ground_truth(write_temp("owdet_coco_gt3.json", kMinimalGt));
    CHECK_THROWS_AS(pair_coco(ds, {{42, 7, {1, 1, 2, 2}, 0.5}}), DataError);
    CHECK_THROWS_AS(pair_coco(ds, {{1, 42, {1, 1, 2, 2}, 0.5}}), DataError);
}

TEST_CASE("ground truth re-emission round-trips semantically") {
    const auto ds = load_coco_ground_truth(write_temp("owdet_coco_rt.json", kMinimalGt));
    const std::string emitted = write_temp("owdet_coco_rt2.json", coco_gt_to_json(ds).dump());
    const auto ds2 = load_coco_ground_truth(emitted);
    const auto e1 = pair_coco(ds, {});
    const auto e2 = pair_coco(ds2, {});
    REQUIRE(e1.size() == e2.size());
    for (std::size_t i = 0; i < e1.size(); ++i) {
        REQUIRE(e1[i].gt_boxes.size() == e2[i].gt_boxes.size());
        for (std::size_t g = 0; g < e1[i].gt_boxes.size(); ++g) {
            CHECK(e1[i].gt_boxes[g].cx == doctest::Approx(e2[i].gt_boxes[g].cx).epsilon(1e-12));
            CHECK(e1[i].gt_names[g] == e2[i].gt_names[g]);
        }
    }
}

TEST_CASE("dataset_from_samples assigns contiguous category and image ids") {
    ImageSample img;
    img.height = 32;
    img.width = 32;
    img.pixels.assign(32 * 32 * 3, 0.5);
    img.boxes.push_back({0.5, 0.5, 0.25, 0.25});
    img.class_names.push_back("thing");
    const auto ds = dataset_from_samples({img}, {"thing", "other"}, 1000);
    CHECK(ds.images[0].id == 1000);
    CHECK(ds.categories.size() == 2);
    REQUIRE(ds.annotations.size() == 1);
    CHECK(ds.annotations[0].bbox[0] == doctest::Approx(0.375 * 32));
    CHECK(ds.annotations[0].bbox[2] == doctest::Approx(0.25 * 32));
}
