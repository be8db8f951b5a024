#include "owdet/hungarian.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "owdet/errors.hpp"
#include "owdet/rng.hpp"

using namespace owdet;

namespace {

// Factorial enumeration over all injective gt -> pred mappings.
double brute_force_min(const std::vector<std::vector<double>>& cost) {
    const std::size_t rows = cost.size();
    const std::size_t cols = cost[0].size();
    std::vector<int> preds(cols);
    std::iota(preds.begin(), preds.end(), 0);
    std::sort(preds.begin(), preds.end());
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t g = 0; g < rows; ++g) total += cost[g][static_cast<std::size_t>(preds[g])];
        best = std::min(best, total);
    } while (std::next_permutation(preds.begin(), preds.end()));
    return best;
}

}  // namespace

TEST_CASE("single prediction and ground truth are matched") {
    const auto res = hungarian_assign({{0.7}});
    REQUIRE(res.pred_for_gt.size() == 1);
    CHECK(res.pred_for_gt[0] == 0);
    CHECK(res.total_cost == doctest::Approx(0.7));
}

TEST_CASE("antidiagonal cost picks the diagonal") {
    const auto res = hungarian_assign({{0.0, 1.0}, {1.0, 0.0}});
    CHECK(res.pred_for_gt == std::vector<int>{0, 1});
    CHECK(res.total_cost == doctest::Approx(0.0));
}

TEST_CASE("random square instances match the factorial enumeration oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 2 + trial % 5;  // up to 6x6
        std::vector<std::vector<double>> cost(n, std::vector<double>(n));
        for (auto& row : cost)
            for (auto& v : row) v = rng.uniform(0, 10);
        const auto res = hungarian_assign(cost);
        CHECK(res.total_cost == doctest::Approx(brute_force_min(cost)).epsilon(1e-9));
        // assignment is a valid injection
        std::vector<int> used;
        for (const int p : res.pred_for_gt) used.push_back(p);
        std::sort(used.begin(), used.end());
        CHECK(std::adjacent_find(used.begin(), used.end()) == used.end());
    }
}

TEST_CASE("rectangular instances leave excess predictions unmatched") {
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t rows = 1 + trial % 4;
        const std::size_t cols = rows + 1 + trial % 3;
        std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
        for (auto& row : cost)
            for (auto& v : row) v = rng.uniform(0, 5);
        const auto res = hungarian_assign(cost);
        CHECK(res.total_cost == doctest::Approx(brute_force_min(cost)).epsilon(1e-9));
    }
}

TEST_CASE("ties break toward the lowest (pred, gt) pairs") {
    // All-zero costs: every assignment is optimal; the lexicographic rule
    // pins gt0 -> pred0, gt1 -> pred1.
    const auto res = hungarian_assign({{0.0, 0.0}, {0.0, 0.0}});
    CHECK(res.pred_for_gt == std::vector<int>{0, 1});

    // gt1 must take pred0 to stay optimal; gt0 then takes pred1.
    const auto res2 = hungarian_assign({{0.0, 0.0}, {0.0, 1.0}});
    CHECK(res2.pred_for_gt == std::vector<int>{1, 0});
}

TEST_CASE("more ground truths than predictions is an input error") {
    CHECK_THROWS_AS(hungarian_assign({{1.0}, {2.0}}), InputError);
}
