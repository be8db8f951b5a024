#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "owdet/detector.hpp"
#include "owdet/memory.hpp"

namespace owdet {

struct RetrievalConfig {
    double tau = 0.89;        // similarity threshold (cosine)
    double nms_iou = 0.5;     // class-wise NMS threshold
    double score_floor = 0.0; // reporting floor

    // User-facing validation; retrieve() itself accepts any tau so the
    // monotonicity properties can be probed at the extremes.
    void validate() const;
};

struct RetrievalOutcome {
    std::vector<std::size_t> retrieved;  // indices into the pool, ascending
    std::vector<double> step_scores;     // max prototype cosine per step
    bool fallback = false;               // true iff nothing reached tau
};

// Step score s_t = max_k cos(g, psi_k^t); retrieved = { t : s_t >= tau }.
RetrievalOutcome retrieve(const std::vector<double>& global_embedding, const MemoryPool& pool,
                          const RetrievalConfig& config);

// Ground-truth-indexed retrieval: returns exactly the true step's triplet;
// images marked unseen (nullopt) fall back.
RetrievalOutcome oracle_retrieve(const MemoryPool& pool, std::optional<std::int64_t> true_step);

// Greedy class-wise NMS. Candidates sort by descending score (ties: smaller
// area, then input order); a box is kept iff its IoU with every kept box of
// the same class stays at or below the threshold. Output is sorted by
// descending score.
std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold);

// Full multi-memory inference: encode once, retrieve (or use the supplied
// outcome), run the detector per retrieved triplet, merge with NMS, apply the
// score floor. An empty retrieval runs the frozen base with the caller's
// fallback label set -- bit-identical to the zero-shot path.
std::vector<Detection> infer(const Detector& base, const MemoryPool& pool, const ImageSample& image,
                             const RetrievalConfig& config,
                             const std::vector<std::string>& fallback_labels,
                             RetrievalOutcome* outcome_out = nullptr);

std::vector<Detection> infer_with_outcome(const Detector& base, const MemoryPool& pool,
                                          const ImageSample& image, const RetrievalOutcome& outcome,
                                          const RetrievalConfig& config,
                                          const std::vector<std::string>& fallback_labels);

// The frozen zero-shot path: base detector + NMS + floor, no pool.
std::vector<Detection> infer_zero_shot(const Detector& base, const ImageSample& image,
                                       const RetrievalConfig& config,
                                       const std::vector<std::string>& labels);

// Applies the final triplet's memories to every image with the caller's
// query label set (the no-retrieval ablation).
std::vector<Detection> infer_last_triplet(const Detector& base, const MemoryPool& pool,
                                          const ImageSample& image, const RetrievalConfig& config,
                                          const std::vector<std::string>& labels);

}  // namespace owdet
