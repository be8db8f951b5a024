#include "owdet/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "owdet/errors.hpp"
#include "owdet/rng.hpp"

using namespace owdet;

namespace {

// ---- independent brute-force AP reference ----
// Re-derives the metric from its definition with deliberately naive code:
// its own IoU, fresh greedy matching per threshold, and an exhaustive scan
// for the interpolated precision at every recall point.

double ref_iou(const Box& a, const Box& b) {
    const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
    const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
    const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

std::optional<double> reference_ap(const std::vector<ImageEval>& images,
                                   const std::vector<std::string>& class_set) {
    double total = 0.0;
    int classes_with_gt = 0;
    for (const auto& cls : class_set) {
        int total_gt = 0;
        for (const auto& img : images)
            for (std::size_t g = 0; g < img.gt_names.size(); ++g)
                if (img.gt_names[g] == cls) ++total_gt;
        if (total_gt == 0) continue;
        ++classes_with_gt;

        // all detections of this class, stably sorted by descending score
        struct D {
            std::size_t img, idx;
            double score;
        };
        std::vector<D> dets;
        for (std::size_t i = 0; i < images.size(); ++i)
            for (std::size_t d = 0; d < images[i].detections.size(); ++d)
                if (images[i].detections[d].class_name == cls)
                    dets.push_back({i, d, images[i].detections[d].score});
        std::stable_sort(dets.begin(), dets.end(),
                         [](const D& a, const D& b) { return a.score > b.score; });

        double class_ap = 0.0;
        for (int thr_i = 0; thr_i < 10; ++thr_i) {
            const double thr = 0.5 + 0.05 * thr_i;
            std::vector<std::vector<bool>> used(images.size());
            for (std::size_t i = 0; i < images.size(); ++i)
                used[i].assign(images[i].gt_boxes.size(), false);
            std::vector<bool> is_tp(dets.size(), false);
            for (std::size_t k = 0; k < dets.size(); ++k) {
                const auto& img = images[dets[k].img];
                const Box& pb = img.detections[dets[k].idx].box;
                double best = -1.0;
                int best_g = -1;
                for (std::size_t g = 0; g < img.gt_boxes.size(); ++g) {
                    if (img.gt_names[g] != cls || used[dets[k].img][g]) continue;
                    const double v = ref_iou(pb, img.gt_boxes[g]);
                    if (v > best) {
                        best = v;
                        best_g = static_cast<int>(g);
                    }
                }
                if (best_g >= 0 && best >= thr) {
                    used[dets[k].img][static_cast<std::size_t>(best_g)] = true;
                    is_tp[k] = true;
                }
            }
            double ap = 0.0;
            for (int r = 0; r <= 100; ++r) {
                const double target = r / 100.0;
                double best_prec = 0.0;
                int tp = 0;
                for (std::size_t k = 0; k < dets.size(); ++k) {
                    tp += is_tp[k] ? 1 : 0;
                    const double recall = static_cast<double>(tp) / total_gt;
                    const double prec = static_cast<double>(tp) / static_cast<double>(k + 1);
                    if (recall >= target) best_prec = std::max(best_prec, prec);
                }
                ap += best_prec;
            }
            class_ap += ap / 101.0;
        }
        total += class_ap / 10.0;
    }
    if (classes_with_gt == 0) return std::nullopt;
    return total / classes_with_gt;
}

ImageEval single_image(std::vector<Detection> dets, std::vector<Box> gts,
                       std::vector<std::string> names) {
    return ImageEval{std::move(dets), std::move(gts), std::move(names)};
}

}  // namespace

TEST_CASE("one exact prediction on one ground truth scores AP 1") {
    const Box b{0.5, 0.5, 0.4, 0.4};
    const auto ap = compute_ap({single_image({{b, "a", 0.9}}, {b}, {"a"})}, {"a"});
    REQUIRE(ap.has_value());
    CHECK(*ap == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("no predictions on nonempty ground truth scores AP 0") {
    const auto ap = compute_ap({single_image({}, {{0.5, 0.5, 0.4, 0.4}}, {"a"})}, {"a"});
    REQUIRE(ap.has_value());
    CHECK(*ap == doctest::Approx(0.0));
}

TEST_CASE("empty ground truth is reported as absent") {
    const auto ap = compute_ap({single_image({{{0.5, 0.5, 0.4, 0.4}, "a", 0.9}}, {}, {})}, {"a"});
    CHECK_FALSE(ap.has_value());
}

TEST_CASE("one exact prediction out of two ground truths hits the 51/101 interpolation") {
    const Box b1{0.3, 0.3, 0.2, 0.2};
    const Box b2{0.7, 0.7, 0.2, 0.2};
    const auto ap = compute_ap({single_image({{b1, "a", 0.9}}, {b1, b2}, {"a", "a"})}, {"a"});
    REQUIRE(ap.has_value());
    CHECK(*ap == doctest::Approx(51.0 / 101.0).epsilon(1e-12));
}

TEST_CASE("scorer agrees with the brute-force reference on random tiny instances") {
    Rng rng(55);
    const std::vector<std::string> classes = {"a", "b"};
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n_images = 1 + rng.uniform_index(5);
        std::vector<ImageEval> images;
        for (std::size_t i = 0; i < n_images; ++i) {
            ImageEval img;
            const std::size_t n_gt = rng.uniform_index(5);  // up to 4 boxes
            for (std::size_t g = 0; g < n_gt; ++g) {
                img.gt_boxes.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                                        rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)});
                img.gt_names.push_back(classes[rng.uniform_index(2)]);
            }
            const std::size_t n_det = rng.uniform_index(5);
            for (std::size_t d = 0; d < n_det; ++d) {
                Detection det;
                if (!img.gt_boxes.empty() && rng.uniform() < 0.6) {
                    const Box& base = img.gt_boxes[rng.uniform_index(img.gt_boxes.size())];
                    det.box = {base.cx + rng.uniform(-0.05, 0.05), base.cy + rng.uniform(-0.05, 0.05),
                               base.w * rng.uniform(0.8, 1.2), base.h * rng.uniform(0.8, 1.2)};
                } else {
                    det.box = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4),
                               rng.uniform(0.1, 0.4)};
                }
                det.class_name = classes[rng.uniform_index(2)];
                det.score = rng.uniform();
                img.detections.push_back(det);
            }
            images.push_back(std::move(img));
        }
        const auto fast = compute_ap(images, classes);
        const auto ref = reference_ap(images, classes);
        REQUIRE(fast.has_value() == ref.has_value());
        if (fast) CHECK(*fast == doctest::Approx(*ref).epsilon(1e-9));
    }
}

TEST_CASE("a single method ranks 1 everywhere") {
    const auto res = average_rank({{"only", {0.5, 0.6}, 0.3}});
    REQUIRE(res.size() == 1);
    CHECK(res[0].r_seen == doctest::Approx(1.0));
    CHECK(res[0].r_unseen == doctest::Approx(1.0));
    CHECK(res[0].r_avg == doctest::Approx(1.0));
}

TEST_CASE("rank 2 seen and rank 1 unseen give the sqrt(5/2) quadratic mean") {
    const auto res = average_rank({{"worse-seen", {0.1, 0.1}, 0.9}, {"better-seen", {0.9, 0.9}, 0.1}});
    // method 0: seen rank 2 on both subsets, unseen rank 1
    CHECK(res[0].r_seen == doctest::Approx(2.0));
    CHECK(res[0].r_unseen == doctest::Approx(1.0));
    CHECK(res[0].r_avg == doctest::Approx(std::sqrt(2.5)).epsilon(1e-12));
    CHECK(res[0].r_avg == doctest::Approx(1.5811).epsilon(1e-4));
}

TEST_CASE("uniform winners and losers rank 1.0 and 2.0") {
    const auto res = average_rank({{"winner", {0.9, 0.8, 0.7}, 0.9}, {"loser", {0.1, 0.2, 0.3}, 0.1}});
    CHECK(res[0].r_avg == doctest::Approx(1.0));
    CHECK(res[1].r_avg == doctest::Approx(2.0));
}

TEST_CASE("ties share fractional ranks") {
    const auto res = average_rank(
        {{"a", {0.5}, 0.5}, {"b", {0.5}, 0.5}, {"c", {0.1}, 0.1}});
    CHECK(res[0].r_seen == doctest::Approx(1.5));
    CHECK(res[1].r_seen == doctest::Approx(1.5));
    CHECK(res[2].r_seen == doctest::Approx(3.0));
}

TEST_CASE("quadratic mean bound holds for random rank inputs") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<RankInput> methods;
        const std::size_t J = 2 + rng.uniform_index(4);
        for (std::size_t j = 0; j < J; ++j) {
            RankInput m;
            m.method = "m" + std::to_string(j);
            for (int s = 0; s < 4; ++s) m.seen_aps.push_back(rng.uniform());
            m.unseen_ap = rng.uniform();
            methods.push_back(std::move(m));
        }
        for (const auto& r : average_rank(methods)) {
            const double lo = std::min(r.r_seen, r.r_unseen);
            const double hi = std::max(r.r_seen, r.r_unseen);
            CHECK(lo <= r.r_avg + 1e-12);
            CHECK((r.r_seen + r.r_unseen) / 2.0 <= r.r_avg + 1e-12);
            CHECK(r.r_avg <= hi + 1e-12);
        }
    }
}

TEST_CASE("raising one subset AP never worsens that method's seen rank") {
    Rng rng(78);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<RankInput> methods(3);
        for (std::size_t j = 0; j < 3; ++j) {
            methods[j].method = "m" + std::to_string(j);
            for (int s = 0; s < 3; ++s) methods[j].seen_aps.push_back(rng.uniform());
            methods[j].unseen_ap = rng.uniform();
        }
        const auto before = average_rank(methods);
        methods[0].seen_aps[trial % 3] += rng.uniform(0.0, 0.5);
        const auto after = average_rank(methods);
        CHECK(after[0].r_seen <= before[0].r_seen + 1e-12);
    }
}

TEST_CASE("mismatched subset coverage is an input error") {
    CHECK_THROWS_AS(average_rank({{"a", {0.5, 0.6}, 0.1}, {"b", {0.5}, 0.1}}), InputError);
    CHECK_THROWS_AS(average_rank({}), InputError);
}

TEST_CASE("aggregate handles single-step runs and validates row lengths") {
    const auto report =
        aggregate_report({"s1"}, {{std::optional<double>(0.7)}}, std::optional<double>(0.4));
    CHECK_FALSE(report.ap_old.has_value());
    REQUIRE(report.ap_new.has_value());
    CHECK(*report.ap_new == doctest::Approx(0.7));
    CHECK(*report.ap_seen == doctest::Approx(0.7));
    CHECK(*report.ap_unseen == doctest::Approx(0.4));

    CHECK_THROWS_AS(aggregate_report({"s1", "s2"},
                                     {{std::optional<double>(0.7)}, {std::optional<double>(0.6)}},
                                     std::nullopt),
                    InputError);
}

TEST_CASE("aggregate computes the forgetting matrix a[i][i] - a[t][i]") {
    std::vector<std::vector<std::optional<double>>> rows = {
        {0.8},
        {0.7, 0.6},
        {0.5, 0.6, 0.9},
    };
    const auto report = aggregate_report({"s1", "s2", "s3"}, rows, std::nullopt);
    CHECK(*report.forgetting[0][0] == doctest::Approx(0.0));
    CHECK(*report.forgetting[1][0] == doctest::Approx(0.1));
    CHECK(*report.forgetting[2][0] == doctest::Approx(0.3));
    CHECK(*report.forgetting[2][1] == doctest::Approx(0.0));
    CHECK(*report.forgetting[2][2] == doctest::Approx(0.0));
    REQUIRE(report.ap_old.has_value());
    CHECK(*report.ap_old == doctest::Approx(0.55));
    CHECK(*report.ap_new == doctest::Approx(0.9));
}

TEST_CASE("csv and leaderboard emission include every metric row") {
    LeaderboardRow row;
    row.method = "test-method";
    row.subset_aps = {std::optional<double>(0.5), std::optional<double>(0.25)};
    row.seen = 0.375;
    row.unseen = 0.125;
    row.r_avg = 1.0;
    const std::string csv = report_csv({"alpha", "beta"}, {row});
    CHECK(csv.find("method,subset,metric,value") == 0);
    CHECK(csv.find("test-method,alpha,ap,0.5") != std::string::npos);
    CHECK(csv.find("test-method,seen,ap,0.375") != std::string::npos);
    CHECK(csv.find("test-method,overall,r_avg,1") != std::string::npos);

    const std::string table = leaderboard_table({"alpha", "beta"}, {row});
    CHECK(table.find("Seen") != std::string::npos);
    CHECK(table.find("Unseen") != std::string::npos);
    CHECK(table.find("R_avg") != std::string::npos);
    CHECK(table.find("test-method") != std::string::npos);
}
