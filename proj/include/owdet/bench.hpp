#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "owdet/data.hpp"
#include "owdet/rng.hpp"
#include "owdet/text.hpp"

namespace owdet {

enum class ShapeKind : int { Circle = 0, Square, Triangle, Cross, Ring, Bar };
enum class PatternKind : int { Solid = 0, Striped, Dotted, Checker, Gradient, Noise };

constexpr int kShapeCount = 6;
constexpr int kPatternCount = 6;

const char* shape_word(ShapeKind s);
const char* pattern_word(PatternKind p);

// One synthetic class: a (shape, fill-pattern) pair rendered in its group's
// hue. The name is "<pattern> <shape>".
struct ClassSpec {
    std::string name;
    ShapeKind shape = ShapeKind::Circle;
    PatternKind pattern = PatternKind::Solid;
    double hue_degrees = 0.0;
};

struct TaskConfig {
    std::int64_t subsets = 6;             // T
    std::int64_t classes_per_subset = 3;
    std::int64_t shots = 10;              // train images per class
    std::int64_t eval_per_subset = 8;
    std::int64_t pretrain_classes = 6;
    std::int64_t pretrain_shots = 12;
    std::int64_t pretrain_eval_per_class = 3;
    std::int64_t unseen_classes = 3;
    std::int64_t unseen_eval_images = 12;
    std::int64_t image_h = 32;
    std::int64_t image_w = 32;
    std::int64_t max_instances = 3;

    nlohmann::json to_json() const;
    static TaskConfig from_json(const nlohmann::json& j);
};

struct SubsetData {
    std::vector<std::string> labels;
    std::vector<ClassSpec> classes;
    std::vector<ImageSample> train;
    std::vector<ImageSample> eval;
};

// Ordered few-shot subsets with pairwise-disjoint label sets, one unseen eval
// split, and a pretrain split whose classes are disjoint from everything.
// Eval accessors count reads so the harness can prove training never touched
// them.
class ContinualTask {
public:
    TaskConfig config;
    std::vector<SubsetData> subsets;
    SubsetData pretrain;
    std::vector<std::string> unseen_labels;
    std::vector<ClassSpec> unseen_classes;
    std::vector<ImageSample> unseen_eval;
    Vocabulary vocab;  // over every split's class names

    const std::vector<ImageSample>& train_images(std::size_t subset) const;
    const std::vector<ImageSample>& eval_images(std::size_t subset) const;
    const std::vector<ImageSample>& pretrain_train_images() const;
    const std::vector<ImageSample>& pretrain_eval_images() const;
    const std::vector<ImageSample>& unseen_eval_images() const;

    struct AccessCounts {
        std::vector<std::int64_t> eval_reads;  // per subset
        std::int64_t unseen_eval_reads = 0;
        std::int64_t pretrain_eval_reads = 0;
    };
    AccessCounts access_counts() const { return counts_; }

    std::vector<std::string> all_seen_labels() const;

private:
    mutable AccessCounts counts_;
};

// Deterministic desk-scale benchmark: every class is an anti-aliased
// (shape, pattern) blob on a textured canvas; subsets carry distinct hues so
// retrieval has signal, and the pretrain split covers every shape and
// pattern word once.
ContinualTask generate_synthetic_task(const TaskConfig& config, std::uint64_t seed);

void save_task(const ContinualTask& task, const std::string& dir);
ContinualTask load_task(const std::string& dir);

// Optional PPM dump of one sample for eyeballing.
void write_ppm(const ImageSample& image, const std::string& path);

}  // namespace owdet
