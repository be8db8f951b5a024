#include "owdet/coco.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "owdet/errors.hpp"

namespace owdet {

namespace {

[[noreturn]] void parse_fail(const std::string& path, const std::string& what) {
    throw DataError("parse error at " + path + ": " + what);
}

const nlohmann::json& require_key(const nlohmann::json& j, const char* key,
                                  const std::string& path) {
    if (!j.is_object()) parse_fail(path, "expected an object");
    const auto it = j.find(key);
    if (it == j.end()) parse_fail(path + "." + key, "missing required key");
    return *it;
}

double require_finite(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number()) parse_fail(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) parse_fail(path, "non-finite number");
    return v;
}

std::int64_t require_int(const nlohmann::json& j, const std::string& path) {
    if (j.is_number_integer() || j.is_number_unsigned()) return j.get<std::int64_t>();
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (std::isfinite(v) && v == std::floor(v)) return static_cast<std::int64_t>(v);
    }
    parse_fail(path, "expected an integer");
}

std::array<double, 4> require_bbox(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 4) parse_fail(path, "expected a 4-element bbox array");
    std::array<double, 4> out{};
    for (std::size_t i = 0; i < 4; ++i)
        out[i] = require_finite(j[i], path + "[" + std::to_string(i) + "]");
    return out;
}

}  // namespace

const CocoImageInfo& CocoDataset::image(std::int64_t id) const {
    for (const auto& img : images)
        if (img.id == id) return img;
    throw DataError("unknown image id " + std::to_string(id));
}

const CocoCategory& CocoDataset::category(std::int64_t id) const {
    for (const auto& cat : categories)
        if (cat.id == id) return cat;
    throw DataError("unknown category id " + std::to_string(id));
}

std::vector<std::string> CocoDataset::class_names() const {
    std::vector<std::string> names;
    names.reserve(categories.size());
    for (const auto& cat : categories) names.push_back(cat.name);
    return names;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("parse error in " + path + ": " + e.what());
    }
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write: " + path);
    out << j.dump(2) << "\n";
}

CocoDataset load_coco_ground_truth(const std::string& path) {
    const nlohmann::json j = read_json(path);
    CocoDataset ds;

    const auto& images = require_key(j, "images", "$");
    if (!images.is_array()) parse_fail("$.images", "expected an array");
    std::set<std::int64_t> image_ids;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string p = "$.images[" + std::to_string(i) + "]";
        CocoImageInfo info;
        info.id = require_int(require_key(images[i], "id", p), p + ".id");
        info.width = require_int(require_key(images[i], "width", p), p + ".width");
        info.height = require_int(require_key(images[i], "height", p), p + ".height");
        info.file_name = require_key(images[i], "file_name", p).get<std::string>();
        if (info.width <= 0 || info.height <= 0) parse_fail(p, "non-positive image size");
        if (!image_ids.insert(info.id).second)
            parse_fail(p + ".id", "duplicate image id " + std::to_string(info.id));
        ds.images.push_back(std::move(info));
    }

    const auto& categories = require_key(j, "categories", "$");
    if (!categories.is_array()) parse_fail("$.categories", "expected an array");
    std::set<std::int64_t> category_ids;
    for (std::size_t i = 0; i < categories.size(); ++i) {
        const std::string p = "$.categories[" + std::to_string(i) + "]";
        CocoCategory cat;
        cat.id = require_int(require_key(categories[i], "id", p), p + ".id");
        cat.name = require_key(categories[i], "name", p).get<std::string>();
        if (!category_ids.insert(cat.id).second)
            parse_fail(p + ".id", "duplicate category id " + std::to_string(cat.id));
        ds.categories.push_back(std::move(cat));
    }

    const auto& annotations = require_key(j, "annotations", "$");
    if (!annotations.is_array()) parse_fail("$.annotations", "expected an array");
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const std::string p = "$.annotations[" + std::to_string(i) + "]";
        CocoAnnotation ann;
        ann.id = require_int(require_key(annotations[i], "id", p), p + ".id");
        ann.image_id = require_int(require_key(annotations[i], "image_id", p), p + ".image_id");
        ann.category_id =
            require_int(require_key(annotations[i], "category_id", p), p + ".category_id");
        ann.bbox = require_bbox(require_key(annotations[i], "bbox", p), p + ".bbox");
        if (!image_ids.count(ann.image_id))
            parse_fail(p + ".image_id", "reference to absent image id " + std::to_string(ann.image_id));
        if (!category_ids.count(ann.category_id))
            parse_fail(p + ".category_id",
                       "reference to absent category id " + std::to_string(ann.category_id));
        if (ann.bbox[2] <= 0 || ann.bbox[3] <= 0) parse_fail(p + ".bbox", "non-positive box size");
        ds.annotations.push_back(ann);
    }
    return ds;
}

std::vector<CocoPrediction> load_coco_predictions(const std::string& path) {
    const nlohmann::json j = read_json(path);
    if (!j.is_array()) parse_fail("$", "results file must be a JSON array");
    std::vector<CocoPrediction> preds;
    preds.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string p = "$[" + std::to_string(i) + "]";
        CocoPrediction pred;
        pred.image_id = require_int(require_key(j[i], "image_id", p), p + ".image_id");
        pred.category_id = require_int(require_key(j[i], "category_id", p), p + ".category_id");
        pred.bbox = require_bbox(require_key(j[i], "bbox", p), p + ".bbox");
        pred.score = require_finite(require_key(j[i], "score", p), p + ".score");
        preds.push_back(pred);
    }
    return preds;
}

namespace {

Box normalize_xywh(const std::array<double, 4>& bbox, const CocoImageInfo& img) {
    const double w = static_cast<double>(img.width);
    const double h = static_cast<double>(img.height);
    return Box{(bbox[0] + bbox[2] / 2.0) / w, (bbox[1] + bbox[3] / 2.0) / h, bbox[2] / w,
               bbox[3] / h};
}

}  // namespace

std::vector<ImageEval> pair_coco(const CocoDataset& gt, const std::vector<CocoPrediction>& preds) {
    std::map<std::int64_t, std::size_t> image_index;
    std::map<std::int64_t, std::string> category_name;
    for (std::size_t i = 0; i < gt.images.size(); ++i) image_index[gt.images[i].id] = i;
    for (const auto& cat : gt.categories) category_name[cat.id] = cat.name;

    std::vector<ImageEval> evals(gt.images.size());
    for (const auto& ann : gt.annotations) {
        const std::size_t i = image_index.at(ann.image_id);
        evals[i].gt_boxes.push_back(normalize_xywh(ann.bbox, gt.images[i]));
        evals[i].gt_names.push_back(category_name.at(ann.category_id));
    }
    for (std::size_t k = 0; k < preds.size(); ++k) {
        const auto& pred = preds[k];
        const auto it = image_index.find(pred.image_id);
        if (it == image_index.end())
            parse_fail("$[" + std::to_string(k) + "].image_id",
                       "reference to absent image id " + std::to_string(pred.image_id));
        const auto cat = category_name.find(pred.category_id);
        if (cat == category_name.end())
            parse_fail("$[" + std::to_string(k) + "].category_id",
                       "reference to absent category id " + std::to_string(pred.category_id));
        Detection det;
        det.box = normalize_xywh(pred.bbox, gt.images[it->second]);
        det.class_name = cat->second;
        det.score = pred.score;
        evals[it->second].detections.push_back(std::move(det));
    }
    return evals;
}

nlohmann::json coco_gt_to_json(const CocoDataset& ds) {
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    for (const auto& img : ds.images)
        j["images"].push_back({{"id", img.id},
                               {"width", img.width},
                               {"height", img.height},
                               {"file_name", img.file_name}});
    j["annotations"] = nlohmann::json::array();
    for (const auto& ann : ds.annotations)
        j["annotations"].push_back({{"id", ann.id},
                                    {"image_id", ann.image_id},
                                    {"category_id", ann.category_id},
                                    {"bbox", ann.bbox}});
    j["categories"] = nlohmann::json::array();
    for (const auto& cat : ds.categories)
        j["categories"].push_back({{"id", cat.id}, {"name", cat.name}});
    return j;
}

CocoDataset dataset_from_samples(const std::vector<ImageSample>& images,
                                 const std::vector<std::string>& categories,
                                 std::int64_t image_id_base) {
    CocoDataset ds;
    for (std::size_t c = 0; c < categories.size(); ++c)
        ds.categories.push_back({static_cast<std::int64_t>(c) + 1, categories[c]});
    std::map<std::string, std::int64_t> cat_id;
    for (const auto& cat : ds.categories) cat_id[cat.name] = cat.id;

    std::int64_t next_ann = 1;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        CocoImageInfo info;
        info.id = image_id_base + static_cast<std::int64_t>(i);
        info.width = img.width;
        info.height = img.height;
        info.file_name = "image_" + std::to_string(info.id) + ".ppm";
        ds.images.push_back(info);
        for (std::size_t b = 0; b < img.boxes.size(); ++b) {
            const auto it = cat_id.find(img.class_names[b]);
            if (it == cat_id.end()) continue;  // instance outside the category set
            const CornerBox c = to_corners(img.boxes[b]);
            CocoAnnotation ann;
            ann.id = next_ann++;
            ann.image_id = info.id;
            ann.category_id = it->second;
            ann.bbox = {c.x0 * static_cast<double>(img.width), c.y0 * static_cast<double>(img.height),
                        img.boxes[b].w * static_cast<double>(img.width),
                        img.boxes[b].h * static_cast<double>(img.height)};
            ds.annotations.push_back(ann);
        }
    }
    return ds;
}

nlohmann::json predictions_to_json(const std::vector<std::vector<Detection>>& per_image,
                                   const CocoDataset& gt) {
    std::map<std::string, std::int64_t> cat_id;
    for (const auto& cat : gt.categories) cat_id[cat.name] = cat.id;
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t i = 0; i < per_image.size(); ++i) {
        const auto& img = gt.images.at(i);
        for (const auto& det : per_image[i]) {
            const auto it = cat_id.find(det.class_name);
            if (it == cat_id.end()) continue;
            const CornerBox c = to_corners(det.box);
            j.push_back({{"image_id", img.id},
                         {"category_id", it->second},
                         {"bbox",
                          {c.x0 * static_cast<double>(img.width), c.y0 * static_cast<double>(img.height),
                           det.box.w * static_cast<double>(img.width),
                           det.box.h * static_cast<double>(img.height)}},
                         {"score", det.score}});
        }
    }
    return j;
}

}  // namespace owdet
