#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "owdet/data.hpp"

namespace owdet {

// One image's scored predictions and ground truth, restricted to the split
// being evaluated.
struct ImageEval {
    std::vector<Detection> detections;
    std::vector<Box> gt_boxes;
    std::vector<std::string> gt_names;
};

struct ApOptions {
    std::vector<double> iou_thresholds;  // defaults to 0.50:0.05:0.95
    std::int64_t recall_points = 101;

    static ApOptions coco();
    static ApOptions at50();
};

// COCO-style mAP: per class, greedy score-ordered matching to the unmatched
// ground truth of highest IoU at each threshold, 101-point interpolated
// precision-recall, averaged over thresholds and over classes present in the
// ground truth. Returns nullopt when the ground truth is empty.
std::optional<double> compute_ap(const std::vector<ImageEval>& images,
                                 const std::vector<std::string>& class_set,
                                 const ApOptions& options = ApOptions::coco());

// ---- average rank (fractional ranking, quadratic-mean combination) ----

struct RankInput {
    std::string method;
    std::vector<double> seen_aps;  // one AP per seen subset, same order for every method
    double unseen_ap = 0.0;
};

struct RankResult {
    std::string method;
    double r_seen = 0.0;
    double r_unseen = 0.0;
    double r_avg = 0.0;
};

std::vector<RankResult> average_rank(const std::vector<RankInput>& methods);

// ---- evaluation report ----

struct EvalReport {
    std::vector<std::string> subset_names;
    std::vector<std::optional<double>> per_subset_ap;  // after the final step
    std::optional<double> ap_old;                      // mean over subsets 1..T-1
    std::optional<double> ap_new;                      // subset T
    std::optional<double> ap_seen;                     // mean over all subsets
    std::optional<double> ap_unseen;
    // a[t][i] = AP of subset i after step t+1 (row t has t+1 entries)
    std::vector<std::vector<std::optional<double>>> ap_after_step;
    // forgetting[t][i] = a[i][i] - a[t][i]
    std::vector<std::vector<std::optional<double>>> forgetting;
    double unseen_fallback_rate = -1.0;  // threshold mode only; -1 = not measured
    std::int64_t added_params_per_step = 0;
};

// Combines per-step AP rows into the report. Row t must hold APs for subsets
// 0..t; a short or missing row is an incomplete-run error.
EvalReport aggregate_report(const std::vector<std::string>& subset_names,
                            const std::vector<std::vector<std::optional<double>>>& ap_after_step,
                            std::optional<double> ap_unseen);

// ---- emission ----

struct LeaderboardRow {
    std::string method;
    std::vector<std::optional<double>> subset_aps;
    std::optional<double> seen;
    std::optional<double> unseen;
    std::optional<double> r_avg;
};

// Monospaced table with one column per subset plus Seen / Unseen / R_avg.
std::string leaderboard_table(const std::vector<std::string>& subset_names,
                              const std::vector<LeaderboardRow>& rows);

// CSV with one row per (method, subset, metric).
std::string report_csv(const std::vector<std::string>& subset_names,
                       const std::vector<LeaderboardRow>& rows);

}  // namespace owdet
