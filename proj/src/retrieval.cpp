#include "owdet/retrieval.hpp"

#include <algorithm>
#include <numeric>

namespace owdet {

void RetrievalConfig::validate() const {
    if (!(tau > -1.0 && tau <= 1.0))
        throw ConfigError("retrieval tau must lie in (-1, 1], got " + std::to_string(tau));
    if (!(nms_iou > 0.0 && nms_iou < 1.0))
        throw ConfigError("nms iou threshold must lie in (0, 1), got " + std::to_string(nms_iou));
    if (score_floor < 0.0 || score_floor > 1.0)
        throw ConfigError("score floor must lie in [0, 1]");
}

RetrievalOutcome retrieve(const std::vector<double>& global_embedding, const MemoryPool& pool,
                          const RetrievalConfig& config) {
    RetrievalOutcome outcome;
    outcome.step_scores.reserve(pool.size());
    for (std::size_t t = 0; t < pool.size(); ++t) {
        const auto& triplet = pool.triplet(t);
        double best = -1.0;
        for (const auto& proto : triplet.prototypes) {
            double dot = 0.0;
            for (std::size_t i = 0; i < proto.size(); ++i) dot += proto[i] * global_embedding[i];
            best = std::max(best, dot);
        }
        outcome.step_scores.push_back(best);
        if (best >= config.tau) outcome.retrieved.push_back(t);
    }
    outcome.fallback = outcome.retrieved.empty();
    return outcome;
}

RetrievalOutcome oracle_retrieve(const MemoryPool& pool, std::optional<std::int64_t> true_step) {
    RetrievalOutcome outcome;
    outcome.step_scores.assign(pool.size(), 0.0);
    if (!true_step.has_value()) {
        outcome.fallback = true;
        return outcome;
    }
    for (std::size_t t = 0; t < pool.size(); ++t) {
        if (pool.triplet(t).step == *true_step) {
            outcome.retrieved.push_back(t);
            outcome.step_scores[t] = 1.0;
            return outcome;
        }
    }
    throw InputError("oracle retrieval: step " + std::to_string(*true_step) + " not in pool");
}

std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold) {
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Detection& da = detections[a];
        const Detection& db = detections[b];
        if (da.score != db.score) return da.score > db.score;
        const double area_a = box_area(da.box), area_b = box_area(db.box);
        if (area_a != area_b) return area_a < area_b;
        return a < b;
    });

    std::vector<std::size_t> kept;
    for (const std::size_t i : order) {
        bool keep = true;
        for (const std::size_t j : kept) {
            if (detections[j].class_name != detections[i].class_name) continue;
            if (iou(detections[j].box, detections[i].box) > iou_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(i);
    }
    std::vector<Detection> out;
    out.reserve(kept.size());
    for (const std::size_t i : kept) out.push_back(detections[i]);
    return out;
}

namespace {

std::vector<Detection> finalize(std::vector<Detection> merged, const RetrievalConfig& config) {
    std::vector<Detection> suppressed = nms(merged, config.nms_iou);
    if (config.score_floor > 0.0) {
        std::vector<Detection> kept;
        for (auto& d : suppressed)
            if (d.score >= config.score_floor) kept.push_back(std::move(d));
        return kept;
    }
    return suppressed;
}

}  // namespace

std::vector<Detection> infer_with_outcome(const Detector& base, const MemoryPool& pool,
                                          const ImageSample& image, const RetrievalOutcome& outcome,
                                          const RetrievalConfig& config,
                                          const std::vector<std::string>& fallback_labels) {
    NoGradGuard guard;
    if (outcome.fallback) {
        ClassSentence sentence = build_class_sentence(fallback_labels, base.config().vocab);
        return finalize(Detector::to_detections(base.run(image, sentence)), config);
    }
    const EncodedImage encoded = base.encode_image(image);
    std::vector<Detection> merged;
    for (const std::size_t t : outcome.retrieved) {
        const MemoryTriplet& triplet = pool.triplet(t);
        ClassSentence sentence = build_class_sentence(triplet.labels, base.config().vocab);
        auto dets = Detector::to_detections(base.run_encoded(
            encoded, sentence, &triplet.concept_memory, &triplet.interaction_memory));
        merged.insert(merged.end(), dets.begin(), dets.end());
    }
    return finalize(std::move(merged), config);
}

std::vector<Detection> infer(const Detector& base, const MemoryPool& pool, const ImageSample& image,
                             const RetrievalConfig& config,
                             const std::vector<std::string>& fallback_labels,
                             RetrievalOutcome* outcome_out) {
    NoGradGuard guard;
    const EncodedImage encoded = base.encode_image(image);
    RetrievalOutcome outcome = retrieve(encoded.global_embedding.values(), pool, config);
    if (outcome_out) *outcome_out = outcome;
    if (outcome.fallback) {
        ClassSentence sentence = build_class_sentence(fallback_labels, base.config().vocab);
        return finalize(Detector::to_detections(base.run_encoded(encoded, sentence)), config);
    }
    std::vector<Detection> merged;
    for (const std::size_t t : outcome.retrieved) {
        const MemoryTriplet& triplet = pool.triplet(t);
        ClassSentence sentence = build_class_sentence(triplet.labels, base.config().vocab);
        auto dets = Detector::to_detections(base.run_encoded(
            encoded, sentence, &triplet.concept_memory, &triplet.interaction_memory));
        merged.insert(merged.end(), dets.begin(), dets.end());
    }
    return finalize(std::move(merged), config);
}

std::vector<Detection> infer_zero_shot(const Detector& base, const ImageSample& image,
                                       const RetrievalConfig& config,
                                       const std::vector<std::string>& labels) {
    NoGradGuard guard;
    ClassSentence sentence = build_class_sentence(labels, base.config().vocab);
    return finalize(Detector::to_detections(base.run(image, sentence)), config);
}

std::vector<Detection> infer_last_triplet(const Detector& base, const MemoryPool& pool,
                                          const ImageSample& image, const RetrievalConfig& config,
                                          const std::vector<std::string>& labels) {
    if (pool.empty()) throw InputError("last-triplet inference requires a non-empty pool");
    NoGradGuard guard;
    const MemoryTriplet& last = pool.triplets().back();
    ClassSentence sentence = build_class_sentence(labels, base.config().vocab);
    return finalize(Detector::to_detections(
                        base.run(image, sentence, &last.concept_memory, &last.interaction_memory)),
                    config);
}

}  // namespace owdet
