#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "owdet/data.hpp"
#include "owdet/optim.hpp"
#include "owdet/rng.hpp"
#include "owdet/tensor.hpp"

namespace owdet {

class Detector;
struct DetectorConfig;

// Learnable prompt prepended to text embeddings (theta_con of the concept
// memory). Rows: prompt length, cols: d_model.
struct ConceptMemory {
    Tensor prompt;  // P x d_model

    std::int64_t length() const { return prompt.defined() ? prompt.extent(0) : 0; }
    ConceptMemory clone() const { return {prompt.clone()}; }
};

// Low-rank pair for one augmented projection: effective weight W + (B A)^T in
// the row-vector convention. A is r x d_model, B is d_model x r.
struct LoraPair {
    Tensor down;  // A
    Tensor up;    // B

    LoraPair clone() const { return {down.clone(), up.clone()}; }
};

// Interaction memory carried by one fusion layer. With tied Q/K the q and k
// projections of a direction share one pair.
struct InteractionMemoryLayer {
    // text-from-image direction (text queries attend image keys/values)
    LoraPair t_from_i_qk;  // also the K pair when tied; Q pair otherwise
    LoraPair t_from_i_k;   // unused when tied
    LoraPair t_from_i_v;
    // image-from-text direction
    LoraPair i_from_t_qk;
    LoraPair i_from_t_k;  // unused when tied
    LoraPair i_from_t_v;
    bool tied = true;

    InteractionMemoryLayer clone() const;
    std::vector<const LoraPair*> active_pairs() const;
    std::vector<LoraPair*> active_pairs();
};

// theta_inc: one InteractionMemoryLayer per lora-carrying fusion layer.
struct InteractionMemory {
    std::vector<InteractionMemoryLayer> layers;

    InteractionMemory clone() const;
    std::int64_t param_count() const;
};

// One continual step's frozen memories: label set, per-class prototypes,
// theta_con, theta_inc.
struct MemoryTriplet {
    std::int64_t step = 0;
    std::vector<std::string> labels;
    std::vector<std::vector<double>> prototypes;  // unit vectors, parallel to labels
    ConceptMemory concept_memory;
    InteractionMemory interaction_memory;
};

// Append-only ordered store of triplets (the memory pool). The config
// snapshot travels with the pool file header.
class MemoryPool {
public:
    static constexpr std::uint8_t kFormatVersion = 0x01;

    MemoryPool() = default;
    explicit MemoryPool(nlohmann::json config_snapshot) : config_(std::move(config_snapshot)) {}

    std::size_t size() const { return triplets_.size(); }
    bool empty() const { return triplets_.empty(); }
    const MemoryTriplet& triplet(std::size_t i) const { return triplets_.at(i); }
    const std::vector<MemoryTriplet>& triplets() const { return triplets_; }
    const nlohmann::json& config_snapshot() const { return config_; }

    // Appends; the triplet step must be last step + 1 (1 for an empty pool).
    void memorize(MemoryTriplet triplet);

private:
    std::vector<MemoryTriplet> triplets_;
    nlohmann::json config_;
};

struct MemoryInitConfig {
    std::int64_t prompt_length = 10;
    std::int64_t d_model = 32;
    std::int64_t lora_rank = 1;
    std::int64_t lora_layers = 3;
    bool tie_qk = true;
    double prompt_init_std = 0.02;
};

// Step 1: prompt ~ N(0, 0.02), lora A ~ N(0, 1/r), B = 0 (so fusion starts as
// the identity). Step t > 1: deep copies of the last memorized triplet.
std::pair<ConceptMemory, InteractionMemory> init_step_memories(const MemoryPool& pool,
                                                               const MemoryInitConfig& config,
                                                               Rng& rng);

// Registers the memory tensors in a ParamStore for staged optimization. The
// store shares storage with the memories; trainable flags drive both the
// optimizer and tape recording.
ParamStore memory_param_store(ConceptMemory& con, bool con_trainable, InteractionMemory& inc,
                              bool inc_trainable);

// Crop a ground-truth region with a relative margin, clamp to the image, and
// bilinearly resize to out_h x out_w. Shared by prototype construction and
// tests.
ImageSample crop_and_resize(const ImageSample& src, const Box& box, double margin,
                            std::int64_t out_h, std::int64_t out_w);

struct PrototypeConfig {
    std::int64_t crops_per_class = 8;
    double margin = 0.2;
    double margin_jitter = 0.1;
};

// Instance-cropping prototype construction: per class, expand each ground
// truth box by the margin (jittered after the first pass), crop, resize to
// the detector input, embed, and average into a unit vector.
std::map<std::string, std::vector<double>> build_prototypes(
    const std::vector<ImageSample>& train_images, const std::vector<std::string>& class_names,
    const Detector& detector, const PrototypeConfig& config, Rng& rng);

// Added-parameter accounting for one step's memories under a config.
struct AddedParamCounts {
    std::int64_t prompt = 0;
    std::int64_t per_lora_layer = 0;
    std::int64_t lora_total = 0;
    std::int64_t total = 0;
};
AddedParamCounts count_added_params(const MemoryInitConfig& config);

// Container format: "OWMP" magic, version byte, u64-LE length-prefixed JSON
// header (config snapshot, step count, label sets, tensor manifest), raw
// little-endian float64 payloads in manifest order, trailing CRC32.
void save_pool(const MemoryPool& pool, const std::string& path);
MemoryPool load_pool(const std::string& path);

}  // namespace owdet
