#include "owdet/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "owdet/boxes.hpp"
#include "owdet/errors.hpp"

namespace owdet {

namespace {

const char* kShapeWords[kShapeCount] = {"circle", "square", "triangle", "cross", "ring", "bar"};
const char* kPatternWords[kPatternCount] = {"solid",   "striped",  "dotted",
                                            "checker", "gradient", "noise"};

struct Rgb {
    double r = 0, g = 0, b = 0;
};

Rgb hsv_to_rgb(double hue_degrees, double s, double v) {
    const double h = std::fmod(std::fmod(hue_degrees, 360.0) + 360.0, 360.0) / 60.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

double hash_noise(std::int64_t x, std::int64_t y, std::uint64_t seed) {
    std::uint64_t h = seed ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL) ^
                      (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL);
    h ^= h >> 33;
    h *= 0xFF51AFD7ED558CCDULL;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

bool shape_member(ShapeKind shape, double u, double v) {
    switch (shape) {
        case ShapeKind::Circle: return u * u + v * v <= 1.0;
        case ShapeKind::Square: return std::abs(u) <= 0.92 && std::abs(v) <= 0.92;
        case ShapeKind::Triangle: return v >= -0.95 && v <= 0.95 && std::abs(u) <= 0.95 * (v + 1.0) * 0.5;
        case ShapeKind::Cross: return std::abs(u) <= 0.34 || std::abs(v) <= 0.34;
        case ShapeKind::Ring: {
            const double r = std::sqrt(u * u + v * v);
            return r >= 0.55 && r <= 1.0;
        }
        case ShapeKind::Bar: return std::abs(v) <= 0.36;
    }
    return false;
}

Rgb pattern_color(PatternKind pattern, const Rgb& fill, double u, double v, std::int64_t px,
                  std::int64_t py, std::uint64_t noise_seed) {
    const Rgb light = mix(fill, Rgb{0.97, 0.97, 0.97}, 0.8);
    switch (pattern) {
        case PatternKind::Solid: return fill;
        case PatternKind::Striped: {
            const auto band = static_cast<std::int64_t>(std::floor((u + v) * 2.5 + 100.0));
            return band % 2 == 0 ? fill : light;
        }
        case PatternKind::Dotted: {
            const double gu = (u + 1.0) * 2.0, gv = (v + 1.0) * 2.0;
            const double du = gu - std::floor(gu) - 0.5, dv = gv - std::floor(gv) - 0.5;
            return du * du + dv * dv <= 0.10 ? fill : light;
        }
        case PatternKind::Checker: {
            const auto cu = static_cast<std::int64_t>(std::floor((u + 1.0) * 2.0));
            const auto cv = static_cast<std::int64_t>(std::floor((v + 1.0) * 2.0));
            return (cu + cv) % 2 == 0 ? fill : light;
        }
        case PatternKind::Gradient: {
            const double f = 0.3 + 0.7 * (u + 1.0) * 0.5;
            return {fill.r * f, fill.g * f, fill.b * f};
        }
        case PatternKind::Noise: {
            const double f = 0.45 + 0.55 * hash_noise(px, py, noise_seed);
            return {fill.r * f, fill.g * f, fill.b * f};
        }
    }
    return fill;
}

struct Instance {
    Box box;
    ClassSpec spec;
    std::uint64_t noise_seed = 0;
};

ImageSample render_image(const std::vector<Instance>& instances, const TaskConfig& cfg, Rng& rng) {
    ImageSample img;
    img.height = cfg.image_h;
    img.width = cfg.image_w;
    img.pixels.resize(static_cast<std::size_t>(cfg.image_h * cfg.image_w * 3));

    // textured canvas
    for (std::int64_t y = 0; y < cfg.image_h; ++y)
        for (std::int64_t x = 0; x < cfg.image_w; ++x) {
            const double g = 0.72 + rng.uniform(-0.06, 0.06);
            img.pixel(y, x, 0) = g;
            img.pixel(y, x, 1) = g;
            img.pixel(y, x, 2) = g;
        }

    // 2x2 supersampled instance rendering, later instances on top
    for (const Instance& inst : instances) {
        const Rgb fill = hsv_to_rgb(inst.spec.hue_degrees, 0.85, 0.9);
        const CornerBox c = to_corners(inst.box);
        const auto x_lo = static_cast<std::int64_t>(std::floor(c.x0 * static_cast<double>(cfg.image_w)));
        const auto x_hi = static_cast<std::int64_t>(std::ceil(c.x1 * static_cast<double>(cfg.image_w)));
        const auto y_lo = static_cast<std::int64_t>(std::floor(c.y0 * static_cast<double>(cfg.image_h)));
        const auto y_hi = static_cast<std::int64_t>(std::ceil(c.y1 * static_cast<double>(cfg.image_h)));
        for (std::int64_t y = std::max<std::int64_t>(0, y_lo); y < std::min(cfg.image_h, y_hi); ++y) {
            for (std::int64_t x = std::max<std::int64_t>(0, x_lo); x < std::min(cfg.image_w, x_hi); ++x) {
                Rgb acc{0, 0, 0};
                for (int sy = 0; sy < 2; ++sy)
                    for (int sx = 0; sx < 2; ++sx) {
                        const double xn = (static_cast<double>(x) + 0.25 + 0.5 * sx) /
                                          static_cast<double>(cfg.image_w);
                        const double yn = (static_cast<double>(y) + 0.25 + 0.5 * sy) /
                                          static_cast<double>(cfg.image_h);
                        const double u = (xn - inst.box.cx) / (0.5 * inst.box.w);
                        const double v = (yn - inst.box.cy) / (0.5 * inst.box.h);
                        Rgb color{img.pixel(y, x, 0), img.pixel(y, x, 1), img.pixel(y, x, 2)};
                        if (std::abs(u) <= 1.0 && std::abs(v) <= 1.0 &&
                            shape_member(inst.spec.shape, u, v))
                            color = pattern_color(inst.spec.pattern, fill, u, v, x * 2 + sx,
                                                  y * 2 + sy, inst.noise_seed);
                        acc.r += color.r;
                        acc.g += color.g;
                        acc.b += color.b;
                    }
                img.pixel(y, x, 0) = acc.r / 4.0;
                img.pixel(y, x, 1) = acc.g / 4.0;
                img.pixel(y, x, 2) = acc.b / 4.0;
            }
        }
    }

    // quantize so datasets serialize byte-exactly as u8
    for (auto& p : img.pixels) p = std::round(std::clamp(p, 0.0, 1.0) * 255.0) / 255.0;

    for (const Instance& inst : instances) {
        img.boxes.push_back(inst.box);
        img.class_names.push_back(inst.spec.name);
    }
    return img;
}

Box place_box(Rng& rng, const std::vector<Box>& existing) {
    Box best{0.5, 0.5, 0.4, 0.4};
    double best_overlap = 2.0;
    for (int attempt = 0; attempt < 12; ++attempt) {
        Box b;
        b.w = rng.uniform(0.35, 0.62);
        b.h = rng.uniform(0.35, 0.62);
        b.cx = rng.uniform(0.5 * b.w + 0.02, 1.0 - 0.5 * b.w - 0.02);
        b.cy = rng.uniform(0.5 * b.h + 0.02, 1.0 - 0.5 * b.h - 0.02);
        double worst = 0.0;
        for (const Box& e : existing) worst = std::max(worst, iou(b, e));
        if (worst < best_overlap) {
            best_overlap = worst;
            best = b;
        }
        if (worst <= 0.25) break;
    }
    return best;
}

ImageSample make_image(const std::vector<ClassSpec>& class_choices, std::int64_t instance_count,
                       const TaskConfig& cfg, Rng& rng) {
    std::vector<Instance> instances;
    std::vector<Box> placed;
    for (std::int64_t i = 0; i < instance_count; ++i) {
        Instance inst;
        inst.spec = class_choices[static_cast<std::size_t>(
            rng.uniform_index(static_cast<std::uint64_t>(class_choices.size())))];
        inst.box = place_box(rng, placed);
        inst.noise_seed = rng.next_u64();
        placed.push_back(inst.box);
        instances.push_back(std::move(inst));
    }
    return render_image(instances, cfg, rng);
}

// One image guaranteed to contain `primary` instances; used for shot
// accounting on the training splits.
ImageSample make_class_image(const ClassSpec& primary, std::int64_t instance_count,
                             const TaskConfig& cfg, Rng& rng) {
    std::vector<Instance> instances;
    std::vector<Box> placed;
    for (std::int64_t i = 0; i < instance_count; ++i) {
        Instance inst;
        inst.spec = primary;
        inst.box = place_box(rng, placed);
        inst.noise_seed = rng.next_u64();
        placed.push_back(inst.box);
        instances.push_back(std::move(inst));
    }
    return render_image(instances, cfg, rng);
}

}  // namespace

const char* shape_word(ShapeKind s) { return kShapeWords[static_cast<int>(s)]; }
const char* pattern_word(PatternKind p) { return kPatternWords[static_cast<int>(p)]; }

nlohmann::json TaskConfig::to_json() const {
    return nlohmann::json{{"subsets", subsets},
                          {"classes_per_subset", classes_per_subset},
                          {"shots", shots},
                          {"eval_per_subset", eval_per_subset},
                          {"pretrain_classes", pretrain_classes},
                          {"pretrain_shots", pretrain_shots},
                          {"pretrain_eval_per_class", pretrain_eval_per_class},
                          {"unseen_classes", unseen_classes},
                          {"unseen_eval_images", unseen_eval_images},
                          {"image_h", image_h},
                          {"image_w", image_w},
                          {"max_instances", max_instances}};
}

TaskConfig TaskConfig::from_json(const nlohmann::json& j) {
    TaskConfig c;
    c.subsets = j.value("subsets", c.subsets);
    c.classes_per_subset = j.value("classes_per_subset", c.classes_per_subset);
    c.shots = j.value("shots", c.shots);
    c.eval_per_subset = j.value("eval_per_subset", c.eval_per_subset);
    c.pretrain_classes = j.value("pretrain_classes", c.pretrain_classes);
    c.pretrain_shots = j.value("pretrain_shots", c.pretrain_shots);
    c.pretrain_eval_per_class = j.value("pretrain_eval_per_class", c.pretrain_eval_per_class);
    c.unseen_classes = j.value("unseen_classes", c.unseen_classes);
    c.unseen_eval_images = j.value("unseen_eval_images", c.unseen_eval_images);
    c.image_h = j.value("image_h", c.image_h);
    c.image_w = j.value("image_w", c.image_w);
    c.max_instances = j.value("max_instances", c.max_instances);
    return c;
}

const std::vector<ImageSample>& ContinualTask::train_images(std::size_t subset) const {
    return subsets.at(subset).train;
}

const std::vector<ImageSample>& ContinualTask::eval_images(std::size_t subset) const {
    if (counts_.eval_reads.size() != subsets.size()) counts_.eval_reads.assign(subsets.size(), 0);
    ++counts_.eval_reads[subset];
    return subsets.at(subset).eval;
}

const std::vector<ImageSample>& ContinualTask::pretrain_train_images() const {
    return pretrain.train;
}

const std::vector<ImageSample>& ContinualTask::pretrain_eval_images() const {
    ++counts_.pretrain_eval_reads;
    return pretrain.eval;
}

const std::vector<ImageSample>& ContinualTask::unseen_eval_images() const {
    ++counts_.unseen_eval_reads;
    return unseen_eval;
}

std::vector<std::string> ContinualTask::all_seen_labels() const {
    std::vector<std::string> labels;
    for (const auto& s : subsets) labels.insert(labels.end(), s.labels.begin(), s.labels.end());
    return labels;
}

ContinualTask generate_synthetic_task(const TaskConfig& config, std::uint64_t seed) {
    if (config.subsets <= 0 || config.classes_per_subset <= 0 || config.shots <= 0 ||
        config.eval_per_subset <= 0 || config.unseen_classes < 0)
        throw ConfigError("task parameters must be positive");
    if (config.max_instances <= 0 || config.max_instances > 12)
        throw ConfigError("max_instances must lie in [1, 12]");
    if (config.pretrain_classes < 1 || config.pretrain_classes > kShapeCount)
        throw ConfigError("pretrain_classes must lie in [1, 6]");
    const std::int64_t continual_budget = config.subsets * config.classes_per_subset;
    const std::int64_t off_diagonal = kShapeCount * (kPatternCount - 1);
    if (continual_budget + config.unseen_classes > off_diagonal)
        throw ConfigError("class budget " + std::to_string(continual_budget + config.unseen_classes) +
                          " exceeds the " + std::to_string(off_diagonal) +
                          " off-diagonal shape/pattern combinations");

    ContinualTask task;
    task.config = config;
    const Rng root(seed);

    // group hues: pretrain, then one per subset, then unseen; evenly spaced
    const std::int64_t groups = config.subsets + 2;
    auto group_hue = [&](std::int64_t g) { return 360.0 * static_cast<double>(g) / groups; };

    // pretrain uses the diagonal combos so every shape and pattern word is
    // covered once
    std::vector<std::string> all_names;
    for (std::int64_t i = 0; i < config.pretrain_classes; ++i) {
        ClassSpec spec;
        spec.shape = static_cast<ShapeKind>(i % kShapeCount);
        spec.pattern = static_cast<PatternKind>(i % kPatternCount);
        spec.hue_degrees = group_hue(0);
        spec.name = std::string(pattern_word(spec.pattern)) + " " + shape_word(spec.shape);
        task.pretrain.classes.push_back(spec);
        task.pretrain.labels.push_back(spec.name);
        all_names.push_back(spec.name);
    }

    // off-diagonal combos in an order that keeps consecutive shapes distinct
    std::vector<std::pair<int, int>> combos;
    for (int offset = 1; offset < kPatternCount; ++offset)
        for (int s = 0; s < kShapeCount; ++s) combos.emplace_back(s, (s + offset) % kPatternCount);

    std::size_t cursor = 0;
    for (std::int64_t t = 0; t < config.subsets; ++t) {
        SubsetData subset;
        for (std::int64_t k = 0; k < config.classes_per_subset; ++k) {
            ClassSpec spec;
            spec.shape = static_cast<ShapeKind>(combos[cursor].first);
            spec.pattern = static_cast<PatternKind>(combos[cursor].second);
            spec.hue_degrees = group_hue(t + 1);
            spec.name = std::string(pattern_word(spec.pattern)) + " " + shape_word(spec.shape);
            subset.classes.push_back(spec);
            subset.labels.push_back(spec.name);
            all_names.push_back(spec.name);
            ++cursor;
        }
        task.subsets.push_back(std::move(subset));
    }
    for (std::int64_t k = 0; k < config.unseen_classes; ++k) {
        ClassSpec spec;
        spec.shape = static_cast<ShapeKind>(combos[cursor].first);
        spec.pattern = static_cast<PatternKind>(combos[cursor].second);
        spec.hue_degrees = group_hue(config.subsets + 1);
        spec.name = std::string(pattern_word(spec.pattern)) + " " + shape_word(spec.shape);
        task.unseen_classes.push_back(spec);
        task.unseen_labels.push_back(spec.name);
        all_names.push_back(spec.name);
        ++cursor;
    }
    task.vocab = Vocabulary::from_class_names(all_names);

    // training splits: `shots` images per class, 1-2 instances of that class
    auto fill_train = [&](SubsetData& subset, const std::string& tag, std::int64_t shots) {
        for (std::size_t k = 0; k < subset.classes.size(); ++k) {
            for (std::int64_t i = 0; i < shots; ++i) {
                Rng rng = root.child(tag + "/train/" + subset.classes[k].name,
                                     static_cast<std::uint64_t>(i));
                const std::int64_t count = 1 + static_cast<std::int64_t>(rng.uniform_index(2));
                subset.train.push_back(make_class_image(subset.classes[k], count, config, rng));
            }
        }
    };
    auto fill_eval = [&](SubsetData& subset, const std::string& tag, std::int64_t count) {
        for (std::int64_t i = 0; i < count; ++i) {
            Rng rng = root.child(tag + "/eval", static_cast<std::uint64_t>(i));
            const std::int64_t instances =
                1 + static_cast<std::int64_t>(rng.uniform_index(
                        static_cast<std::uint64_t>(config.max_instances)));
            subset.eval.push_back(make_image(subset.classes, instances, config, rng));
        }
    };

    fill_train(task.pretrain, "pretrain", config.pretrain_shots);
    fill_eval(task.pretrain, "pretrain",
              config.pretrain_eval_per_class * config.pretrain_classes);
    for (std::size_t t = 0; t < task.subsets.size(); ++t) {
        const std::string tag = "subset" + std::to_string(t);
        fill_train(task.subsets[t], tag, config.shots);
        fill_eval(task.subsets[t], tag, config.eval_per_subset);
    }
    for (std::int64_t i = 0; i < config.unseen_eval_images; ++i) {
        Rng rng = root.child("unseen/eval", static_cast<std::uint64_t>(i));
        const std::int64_t instances = 1 + static_cast<std::int64_t>(rng.uniform_index(
                                               static_cast<std::uint64_t>(config.max_instances)));
        task.unseen_eval.push_back(make_image(task.unseen_classes, instances, config, rng));
    }
    return task;
}

namespace {

nlohmann::json class_spec_json(const ClassSpec& s) {
    return nlohmann::json{{"name", s.name},
                          {"shape", static_cast<int>(s.shape)},
                          {"pattern", static_cast<int>(s.pattern)},
                          {"hue", s.hue_degrees}};
}

ClassSpec class_spec_from_json(const nlohmann::json& j) {
    ClassSpec s;
    s.name = j.at("name").get<std::string>();
    s.shape = static_cast<ShapeKind>(j.at("shape").get<int>());
    s.pattern = static_cast<PatternKind>(j.at("pattern").get<int>());
    s.hue_degrees = j.at("hue").get<double>();
    return s;
}

nlohmann::json image_json(const ImageSample& img, std::uint64_t offset) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const Box& b : img.boxes) boxes.push_back({b.cx, b.cy, b.w, b.h});
    return nlohmann::json{{"h", img.height},
                          {"w", img.width},
                          {"offset", offset},
                          {"boxes", boxes},
                          {"names", img.class_names}};
}

void append_pixels(std::vector<std::uint8_t>& blob, const ImageSample& img) {
    for (const double p : img.pixels)
        blob.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
}

ImageSample image_from_json(const nlohmann::json& j, const std::vector<std::uint8_t>& blob) {
    ImageSample img;
    img.height = j.at("h").get<std::int64_t>();
    img.width = j.at("w").get<std::int64_t>();
    const auto offset = j.at("offset").get<std::uint64_t>();
    const auto count = static_cast<std::size_t>(img.height * img.width * 3);
    if (offset + count > blob.size()) throw DataError("task image blob overrun");
    img.pixels.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        img.pixels[i] = static_cast<double>(blob[offset + i]) / 255.0;
    for (const auto& b : j.at("boxes"))
        img.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                             b[3].get<double>()});
    img.class_names = j.at("names").get<std::vector<std::string>>();
    return img;
}

nlohmann::json split_json(const SubsetData& subset, std::vector<std::uint8_t>& blob) {
    nlohmann::json j;
    j["labels"] = subset.labels;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : subset.classes) j["classes"].push_back(class_spec_json(c));
    j["train"] = nlohmann::json::array();
    for (const auto& img : subset.train) {
        j["train"].push_back(image_json(img, blob.size()));
        append_pixels(blob, img);
    }
    j["eval"] = nlohmann::json::array();
    for (const auto& img : subset.eval) {
        j["eval"].push_back(image_json(img, blob.size()));
        append_pixels(blob, img);
    }
    return j;
}

SubsetData split_from_json(const nlohmann::json& j, const std::vector<std::uint8_t>& blob) {
    SubsetData s;
    s.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& c : j.at("classes")) s.classes.push_back(class_spec_from_json(c));
    for (const auto& rec : j.at("train")) s.train.push_back(image_from_json(rec, blob));
    for (const auto& rec : j.at("eval")) s.eval.push_back(image_from_json(rec, blob));
    return s;
}

}  // namespace

void save_task(const ContinualTask& task, const std::string& dir) {
    std::vector<std::uint8_t> blob;
    nlohmann::json j;
    j["kind"] = "synthetic-task";
    j["config"] = task.config.to_json();
    j["vocab"] = task.vocab.tokens();
    j["pretrain"] = split_json(task.pretrain, blob);
    j["subsets"] = nlohmann::json::array();
    for (const auto& s : task.subsets) j["subsets"].push_back(split_json(s, blob));
    j["unseen"] = nlohmann::json::object();
    j["unseen"]["labels"] = task.unseen_labels;
    j["unseen"]["classes"] = nlohmann::json::array();
    for (const auto& c : task.unseen_classes) j["unseen"]["classes"].push_back(class_spec_json(c));
    j["unseen"]["eval"] = nlohmann::json::array();
    for (const auto& img : task.unseen_eval) {
        j["unseen"]["eval"].push_back(image_json(img, blob.size()));
        append_pixels(blob, img);
    }

    {
        std::ofstream out(dir + "/task.json", std::ios::trunc);
        if (!out) throw DataError("cannot write " + dir + "/task.json");
        out << j.dump(2) << "\n";
    }
    {
        std::ofstream out(dir + "/images.bin", std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + dir + "/images.bin");
        out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    }
}

ContinualTask load_task(const std::string& dir) {
    std::ifstream in(dir + "/task.json");
    if (!in) throw DataError("cannot open " + dir + "/task.json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("task.json parse error: " + std::string(e.what()));
    }
    std::ifstream bin(dir + "/images.bin", std::ios::binary);
    if (!bin) throw DataError("cannot open " + dir + "/images.bin");
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bin)),
                                   std::istreambuf_iterator<char>());

    ContinualTask task;
    task.config = TaskConfig::from_json(j.at("config"));
    task.vocab = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());
    task.pretrain = split_from_json(j.at("pretrain"), blob);
    for (const auto& s : j.at("subsets")) task.subsets.push_back(split_from_json(s, blob));
    task.unseen_labels = j.at("unseen").at("labels").get<std::vector<std::string>>();
    for (const auto& c : j.at("unseen").at("classes"))
        task.unseen_classes.push_back(class_spec_from_json(c));
    for (const auto& rec : j.at("unseen").at("eval"))
        task.unseen_eval.push_back(image_from_json(rec, blob));
    return task;
}

void write_ppm(const ImageSample& image, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    for (const double p : image.pixels)
        out.put(static_cast<char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
}

}  // namespace owdet
