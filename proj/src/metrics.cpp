#include "owdet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "owdet/errors.hpp"

namespace owdet {

ApOptions ApOptions::coco() {
    ApOptions o;
    for (int i = 0; i < 10; ++i) o.iou_thresholds.push_back(0.5 + 0.05 * i);
    return o;
}

ApOptions ApOptions::at50() {
    ApOptions o;
    o.iou_thresholds = {0.5};
    return o;
}

namespace {

struct ClassDet {
    std::size_t image = 0;
    std::size_t index = 0;  // within the image, for deterministic ties
    double score = 0.0;
    Box box;
};

double class_ap_at_iou(const std::vector<ClassDet>& dets,
                       const std::vector<std::vector<Box>>& gts_per_image, std::int64_t total_gt,
                       double iou_thr, std::int64_t recall_points) {
    std::vector<std::vector<bool>> matched(gts_per_image.size());
    for (std::size_t i = 0; i < gts_per_image.size(); ++i)
        matched[i].assign(gts_per_image[i].size(), false);

    const std::size_t n = dets.size();
    std::vector<double> precision(n), recall(n);
    std::int64_t tp = 0, fp = 0;
    for (std::size_t d = 0; d < n; ++d) {
        const ClassDet& det = dets[d];
        const auto& gt_boxes = gts_per_image[det.image];
        int best_gt = -1;
        double best_iou = iou_thr;
        for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
            if (matched[det.image][g]) continue;
            const double v = iou(det.box, gt_boxes[g]);
            if (v > best_iou || (v == best_iou && best_gt == -1 && v >= iou_thr)) {
                best_iou = v;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0) {
            matched[det.image][static_cast<std::size_t>(best_gt)] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision[d] = static_cast<double>(tp) / static_cast<double>(tp + fp);
        recall[d] = static_cast<double>(tp) / static_cast<double>(total_gt);
    }

    // monotone precision envelope over the recall grid
    double ap = 0.0;
    for (std::int64_t k = 0; k < recall_points; ++k) {
        const double r = static_cast<double>(k) / static_cast<double>(recall_points - 1);
        double best = 0.0;
        for (std::size_t d = 0; d < n; ++d)
            if (recall[d] >= r) best = std::max(best, precision[d]);
        ap += best;
    }
    return ap / static_cast<double>(recall_points);
}

}  // namespace

std::optional<double> compute_ap(const std::vector<ImageEval>& images,
                                 const std::vector<std::string>& class_set,
                                 const ApOptions& options) {
    double total = 0.0;
    std::int64_t classes_with_gt = 0;
    for (const auto& cls : class_set) {
        std::vector<std::vector<Box>> gts(images.size());
        std::int64_t total_gt = 0;
        for (std::size_t i = 0; i < images.size(); ++i)
            for (std::size_t g = 0; g < images[i].gt_boxes.size(); ++g)
                if (images[i].gt_names[g] == cls) {
                    gts[i].push_back(images[i].gt_boxes[g]);
                    ++total_gt;
                }
        if (total_gt == 0) continue;  // class absent from GT: excluded from the mean
        ++classes_with_gt;

        std::vector<ClassDet> dets;
        for (std::size_t i = 0; i < images.size(); ++i)
            for (std::size_t d = 0; d < images[i].detections.size(); ++d)
                if (images[i].detections[d].class_name == cls)
                    dets.push_back({i, d, images[i].detections[d].score, images[i].detections[d].box});
        std::stable_sort(dets.begin(), dets.end(), [](const ClassDet& a, const ClassDet& b) {
            return a.score > b.score;
        });

        double class_ap = 0.0;
        for (const double thr : options.iou_thresholds)
            class_ap += class_ap_at_iou(dets, gts, total_gt, thr, options.recall_points);
        total += class_ap / static_cast<double>(options.iou_thresholds.size());
    }
    if (classes_with_gt == 0) return std::nullopt;
    return total / static_cast<double>(classes_with_gt);
}

namespace {

// Fractional ranks: best AP gets rank 1, ties share the mean of their
// positions.
std::vector<double> fractional_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::vector<RankResult> average_rank(const std::vector<RankInput>& methods) {
    if (methods.empty()) throw InputError("average_rank: no methods");
    const std::size_t subsets = methods[0].seen_aps.size();
    for (const auto& m : methods)
        if (m.seen_aps.size() != subsets)
            throw InputError("average_rank: method '" + m.method +
                             "' is not scored on the shared subsets");

    std::vector<RankResult> results(methods.size());
    for (std::size_t j = 0; j < methods.size(); ++j) results[j].method = methods[j].method;

    for (std::size_t i = 0; i < subsets; ++i) {
        std::vector<double> column(methods.size());
        for (std::size_t j = 0; j < methods.size(); ++j) column[j] = methods[j].seen_aps[i];
        const auto ranks = fractional_ranks(column);
        for (std::size_t j = 0; j < methods.size(); ++j) results[j].r_seen += ranks[j];
    }
    for (auto& r : results) r.r_seen /= static_cast<double>(std::max<std::size_t>(1, subsets));

    std::vector<double> unseen_col(methods.size());
    for (std::size_t j = 0; j < methods.size(); ++j) unseen_col[j] = methods[j].unseen_ap;
    const auto unseen_ranks = fractional_ranks(unseen_col);
    for (std::size_t j = 0; j < methods.size(); ++j) {
        results[j].r_unseen = unseen_ranks[j];
        results[j].r_avg = std::sqrt(
            0.5 * (results[j].r_seen * results[j].r_seen + results[j].r_unseen * results[j].r_unseen));
    }
    return results;
}

EvalReport aggregate_report(const std::vector<std::string>& subset_names,
                            const std::vector<std::vector<std::optional<double>>>& ap_after_step,
                            std::optional<double> ap_unseen) {
    const std::size_t steps = ap_after_step.size();
    if (steps == 0) throw InputError("aggregate: no step rows");
    for (std::size_t t = 0; t < steps; ++t)
        if (ap_after_step[t].size() != t + 1)
            throw InputError("aggregate: incomplete run, step " + std::to_string(t + 1) +
                             " row has " + std::to_string(ap_after_step[t].size()) +
                             " entries, expected " + std::to_string(t + 1));

    EvalReport report;
    report.subset_names = subset_names;
    report.ap_after_step = ap_after_step;
    report.per_subset_ap = ap_after_step.back();
    report.ap_unseen = ap_unseen;

    const auto& final_row = report.per_subset_ap;
    double seen_sum = 0.0;
    std::int64_t seen_n = 0;
    for (const auto& ap : final_row)
        if (ap) {
            seen_sum += *ap;
            ++seen_n;
        }
    if (seen_n > 0) report.ap_seen = seen_sum / static_cast<double>(seen_n);
    report.ap_new = final_row.back();
    if (steps > 1) {
        double old_sum = 0.0;
        std::int64_t old_n = 0;
        for (std::size_t i = 0; i + 1 < final_row.size(); ++i)
            if (final_row[i]) {
                old_sum += *final_row[i];
                ++old_n;
            }
        if (old_n > 0) report.ap_old = old_sum / static_cast<double>(old_n);
    }

    report.forgetting.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        report.forgetting[t].resize(t + 1);
        for (std::size_t i = 0; i <= t; ++i) {
            const auto& at_self = ap_after_step[i][i];
            const auto& at_t = ap_after_step[t][i];
            if (at_self && at_t) report.forgetting[t][i] = *at_self - *at_t;
        }
    }
    return report;
}

namespace {

std::string fmt_ap(const std::optional<double>& v) {
    if (!v) return "  -  ";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%5.1f", *v * 100.0);
    return buf;
}

std::string fmt_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string leaderboard_table(const std::vector<std::string>& subset_names,
                              const std::vector<LeaderboardRow>& rows) {
    std::size_t method_width = 6;
    for (const auto& r : rows) method_width = std::max(method_width, r.method.size());

    std::ostringstream os;
    os << std::string(method_width, ' ') << "  ";
    for (const auto& name : subset_names) {
        std::string abbrev = name.substr(0, 5);
        os << " " << abbrev << std::string(abbrev.size() < 5 ? 5 - abbrev.size() : 0, ' ');
    }
    os << "  Seen  Unseen  R_avg\n";
    for (const auto& r : rows) {
        os << r.method << std::string(method_width - r.method.size(), ' ') << "  ";
        for (const auto& ap : r.subset_aps) os << " " << fmt_ap(ap);
        os << "  " << fmt_ap(r.seen) << " " << fmt_ap(r.unseen) << "  ";
        if (r.r_avg) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%5.2f", *r.r_avg);
            os << buf;
        } else {
            os << "  -  ";
        }
        os << "\n";
    }
    return os.str();
}

std::string report_csv(const std::vector<std::string>& subset_names,
                       const std::vector<LeaderboardRow>& rows) {
    std::ostringstream os;
    os << "method,subset,metric,value\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.subset_aps.size(); ++i)
            if (r.subset_aps[i])
                os << r.method << "," << subset_names[i] << ",ap," << fmt_value(*r.subset_aps[i])
                   << "\n";
        if (r.seen) os << r.method << ",seen,ap," << fmt_value(*r.seen) << "\n";
        if (r.unseen) os << r.method << ",unseen,ap," << fmt_value(*r.unseen) << "\n";
        if (r.r_avg) os << r.method << ",overall,r_avg," << fmt_value(*r.r_avg) << "\n";
    }
    return os.str();
}

}  // namespace owdet
