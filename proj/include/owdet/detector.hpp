#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "owdet/data.hpp"
#include "owdet/memory.hpp"
#include "owdet/optim.hpp"
#include "owdet/tensor.hpp"
#include "owdet/text.hpp"

namespace owdet {

struct DetectorConfig {
    std::int64_t d_model = 32;
    std::int64_t n_heads = 4;
    std::int64_t l_fusion = 3;
    std::int64_t n_queries = 12;
    std::int64_t grid_h = 8;   // patch grid; 16x16 is supported but slow
    std::int64_t grid_w = 8;
    std::int64_t image_h = 32;
    std::int64_t image_w = 32;
    std::int64_t prompt_length = 10;
    std::int64_t lora_rank = 1;
    std::int64_t lora_layers = 3;  // leading fusion layers carrying theta_inc
    bool tie_qk = true;
    std::int64_t ffn_hidden = 128;
    std::int64_t text_layers = 1;
    std::int64_t image_layers = 1;
    std::int64_t decoder_layers = 2;
    bool positional_encodings = true;
    Vocabulary vocab;

    void validate() const;
    std::int64_t patch_dim() const { return (image_h / grid_h) * (image_w / grid_w) * 3; }
    MemoryInitConfig memory_config() const;
    nlohmann::json to_json() const;
    static DetectorConfig from_json(const nlohmann::json& j);
};

struct EncodedImage {
    Tensor features;          // grid tokens x d_model
    Tensor global_embedding;  // 1 x d_model, unit norm
};

struct EncodedText {
    Tensor features;  // (prompt_len + tokens) x d_model
    std::int64_t prompt_len = 0;
};

struct PipelineOutput {
    Tensor boxes;   // n_queries x 4, sigmoid cxcywh
    Tensor logits;  // n_queries x |classes|
    std::vector<std::string> class_names;
};

// W + (B A)^T in the row-vector convention, the additive low-rank update of
// the interaction memory. Returns w unchanged when pair is null.
Tensor lora_effective_weight(const Tensor& w, const LoraPair* pair);

// Miniature open-vocabulary detector: patch/text encoders, an explicit
// visual-language fusion enhancer with concept/interaction memory insertion
// points, and a query decoder scoring classes against pooled text spans.
class Detector {
public:
    Detector(DetectorConfig config, Rng& init_rng);

    const DetectorConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    void freeze() { params_.freeze_all(); }

    EncodedImage encode_image(const ImageSample& image) const;
    EncodedText encode_text(const ClassSentence& sentence, const ConceptMemory* concept_mem) const;
    std::pair<Tensor, Tensor> fuse(const Tensor& image_feats, const Tensor& text_feats,
                                   const InteractionMemory* interaction) const;
    PipelineOutput decode(const Tensor& image_feats, const Tensor& text_feats,
                          const ClassSentence& sentence, std::int64_t prompt_len) const;

    PipelineOutput run(const ImageSample& image, const ClassSentence& sentence,
                       const ConceptMemory* concept_mem = nullptr,
                       const InteractionMemory* interaction = nullptr) const;
    PipelineOutput run_encoded(const EncodedImage& encoded, const ClassSentence& sentence,
                               const ConceptMemory* concept_mem = nullptr,
                               const InteractionMemory* interaction = nullptr) const;

    // Inference convenience: no tape, one detection per query.
    std::vector<Detection> detect(const ImageSample& image, const ClassSentence& sentence,
                                  const ConceptMemory* concept_mem = nullptr,
                                  const InteractionMemory* interaction = nullptr) const;
    static std::vector<Detection> to_detections(const PipelineOutput& out);

    void save_checkpoint(const std::string& path) const;
    static Detector load_checkpoint(const std::string& path);

private:
    struct AttnRef {
        Tensor wq, wk, wv, wo;
    };

    explicit Detector(DetectorConfig config);  // params loaded afterwards

    void init_params(Rng& rng);
    Tensor mha(const Tensor& queries_in, const Tensor& keys_in, const AttnRef& w,
               const LoraPair* lora_q, const LoraPair* lora_k, const LoraPair* lora_v,
               const Tensor* score_bias = nullptr) const;
    std::vector<std::pair<double, double>> query_anchors() const;
    Tensor anchor_attention_bias(const std::vector<std::pair<double, double>>& anchors,
                                 std::int64_t n_tokens) const;
    Tensor encoder_block(const Tensor& x, const std::string& prefix) const;
    Tensor ln(const Tensor& x, const std::string& prefix) const;
    Tensor ffn(const Tensor& x, const std::string& prefix) const;
    AttnRef attn_ref(const std::string& prefix) const;

    DetectorConfig config_;
    ParamStore params_;
};

}  // namespace owdet
