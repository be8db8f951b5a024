#pragma once

#include <vector>

namespace owdet {

struct AssignmentResult {
    std::vector<int> pred_for_gt;  // one prediction column per ground-truth row
    double total_cost = 0.0;
};

// Exact minimum-cost bipartite assignment (O(n^3) shortest augmenting paths
// with potentials). cost is indexed [gt][pred] and requires gts <= preds.
// Among equal-cost optima the result is the lexicographically smallest set of
// (pred index, gt index) pairs.
AssignmentResult hungarian_assign(const std::vector<std::vector<double>>& cost);

}  // namespace owdet
