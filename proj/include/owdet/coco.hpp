#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "owdet/data.hpp"
#include "owdet/metrics.hpp"

namespace owdet {

struct CocoImageInfo {
    std::int64_t id = 0;
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::string file_name;
};

struct CocoAnnotation {
    std::int64_t id = 0;
    std::int64_t image_id = 0;
    std::int64_t category_id = 0;
    std::array<double, 4> bbox{};  // absolute xywh
};

struct CocoCategory {
    std::int64_t id = 0;
    std::string name;
};

struct CocoPrediction {
    std::int64_t image_id = 0;
    std::int64_t category_id = 0;
    std::array<double, 4> bbox{};  // absolute xywh
    double score = 0.0;
};

struct CocoDataset {
    std::vector<CocoImageInfo> images;
    std::vector<CocoAnnotation> annotations;
    std::vector<CocoCategory> categories;

    const CocoImageInfo& image(std::int64_t id) const;
    const CocoCategory& category(std::int64_t id) const;
    std::vector<std::string> class_names() const;
};

// Parses the annotation schema (images/annotations/categories); unknown
// fields are ignored, missing keys / non-finite numbers / dangling references
// raise a parse error naming the JSON path.
CocoDataset load_coco_ground_truth(const std::string& path);
std::vector<CocoPrediction> load_coco_predictions(const std::string& path);

// Pairs ground truth with (optional) predictions into per-image evaluation
// records, normalizing boxes against image dimensions.
std::vector<ImageEval> pair_coco(const CocoDataset& gt, const std::vector<CocoPrediction>& preds);

// Emission of the same schemas.
nlohmann::json coco_gt_to_json(const CocoDataset& ds);
CocoDataset dataset_from_samples(const std::vector<ImageSample>& images,
                                 const std::vector<std::string>& categories,
                                 std::int64_t image_id_base);
nlohmann::json predictions_to_json(const std::vector<std::vector<Detection>>& per_image,
                                   const CocoDataset& gt);
void write_json(const nlohmann::json& j, const std::string& path);
nlohmann::json read_json(const std::string& path);

}  // namespace owdet
