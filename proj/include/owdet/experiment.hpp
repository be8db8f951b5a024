#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "owdet/bench.hpp"
#include "owdet/detector.hpp"
#include "owdet/memory.hpp"
#include "owdet/metrics.hpp"
#include "owdet/retrieval.hpp"

namespace owdet {

inline constexpr const char* kVersion = "owdet 0.1.0";

struct TrainingConfig {
    std::vector<double> lr_candidates{1e-1, 4e-2, 1e-2, 1e-3, 1e-4};
    std::vector<std::int64_t> epoch_candidates{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    double weight_decay = 1e-2;
    std::int64_t batch_size = 1;
    bool grid_search = true;  // off: first lr, last epoch candidate
    std::string mode = "decoupled";  // or "joint"

    void validate() const;
    nlohmann::json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

struct PretrainBudget {
    double lr = 3e-3;
    double weight_decay = 1e-4;
    std::int64_t max_epochs = 120;
    std::int64_t eval_every = 10;
    double ap_floor = 0.25;  // calibrated from the reference run

    nlohmann::json to_json() const;
    static PretrainBudget from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
    std::uint64_t seed = 7;
    DetectorConfig detector;      // vocab is filled from the task
    RetrievalConfig retrieval;
    TaskConfig task;
    TrainingConfig training;
    PretrainBudget pretrain;
    PrototypeConfig prototypes;

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
};

enum class EvalMode { Threshold, Oracle, ZeroShot, LastTriplet };
EvalMode eval_mode_from_string(const std::string& s);
std::string eval_mode_name(EvalMode mode);

// Run metadata: config snapshot, source fingerprint, chosen hyper-parameters,
// loss curves, wall clock, digests of emitted files.
struct RunManifest {
    nlohmann::json data = nlohmann::json::object();

    RunManifest();
    void note_file(const std::string& key, const std::string& path);
    void save(const std::string& path) const;
};

// Trains the toy detector on the pretrain split until its eval AP clears the
// configured floor, then freezes everything (the stand-in for the pretrained
// OW detector).
Detector pretrain_base(const ExperimentConfig& config, const ContinualTask& task,
                       RunManifest* manifest);

// Sequential memory training over the task subsets. Decoupled mode trains
// theta_con then theta_inc; joint mode trains both at once. Each stage grid
// searches (lr, epochs) by final-epoch train loss. Immediately-after-step
// oracle APs land in the manifest; eval splits are provably untouched during
// the training portion.
MemoryPool continual_train(const ExperimentConfig& config, const ContinualTask& task,
                           const Detector& base, RunManifest* manifest);

// Scores one mode over every subset eval split plus the unseen split. When
// out_dir is non-empty, COCO-format ground truth and prediction files plus a
// CSV/leaderboard pair are written there.
EvalReport evaluate(const ExperimentConfig& config, const ContinualTask& task, const Detector& base,
                    const MemoryPool& pool, EvalMode mode, const std::string& out_dir = "",
                    RunManifest* manifest = nullptr);

struct AblationBundle {
    std::vector<std::string> subset_names;
    std::vector<LeaderboardRow> rows;
    std::string table;
    std::string csv;
    nlohmann::json details;
};

// kinds: components | layers | joint | oracle | shots
AblationBundle run_ablation(const std::string& kind, const ExperimentConfig& config,
                            const ContinualTask& task, const Detector& base,
                            RunManifest* manifest);

}  // namespace owdet
