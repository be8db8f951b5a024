#include "owdet/hungarian.hpp"

#include <cmath>
#include <limits>

#include "owdet/errors.hpp"

namespace owdet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Jonker-Volgenant style assignment over rows <= cols. Returns the optimal
// column per row.
std::vector<int> solve(const std::vector<std::vector<double>>& a, double* total) {
    const int n = static_cast<int>(a.size());
    const int m = n ? static_cast<int>(a[0].size()) : 0;
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
        std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = a[static_cast<std::size_t>(i0 - 1)][static_cast<std::size_t>(j - 1)] -
                                   u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> result(static_cast<std::size_t>(n), -1);
    double cost = 0.0;
    for (int j = 1; j <= m; ++j) {
        const int i = p[static_cast<std::size_t>(j)];
        if (i > 0) {
            result[static_cast<std::size_t>(i - 1)] = j - 1;
            cost += a[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
        }
    }
    if (total) *total = cost;
    return result;
}

// Optimal completion cost for a row subset restricted to columns >= col_from.
double completion_cost(const std::vector<std::vector<double>>& cost, const std::vector<int>& rows,
                       int col_from, int cols) {
    if (rows.empty()) return 0.0;
    if (static_cast<int>(rows.size()) > cols - col_from) return kInf;
    std::vector<std::vector<double>> sub(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        sub[r].reserve(static_cast<std::size_t>(cols - col_from));
        for (int c = col_from; c < cols; ++c)
            sub[r].push_back(cost[static_cast<std::size_t>(rows[r])][static_cast<std::size_t>(c)]);
    }
    double total = 0.0;
    solve(sub, &total);
    return total;
}

}  // namespace

AssignmentResult hungarian_assign(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    if (n == 0) return {};
    const int m = static_cast<int>(cost[0].size());
    for (const auto& row : cost)
        if (static_cast<int>(row.size()) != m) throw ContractError("hungarian: ragged cost matrix");
    if (n > m) throw InputError("hungarian: more ground truths than predictions (" +
                                std::to_string(n) + " > " + std::to_string(m) + ")");

    double optimal = 0.0;
    solve(cost, &optimal);
    const double tol = 1e-9 * (1.0 + std::abs(optimal));

    // Fix (pred, gt) pairs in ascending pred order, taking for each pred the
    // smallest gt that keeps the total optimal. This realizes the
    // deterministic lexicographic tie-break.
    AssignmentResult result;
    result.pred_for_gt.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> remaining;
    for (int g = 0; g < n; ++g) remaining.push_back(g);
    double fixed_cost = 0.0;
    for (int p = 0; p < m && !remaining.empty(); ++p) {
        bool fixed = false;
        for (std::size_t k = 0; k < remaining.size(); ++k) {
            const int g = remaining[k];
            std::vector<int> rest = remaining;
            rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(k));
            const double c = fixed_cost + cost[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)] +
                             completion_cost(cost, rest, p + 1, m);
            if (c <= optimal + tol) {
                result.pred_for_gt[static_cast<std::size_t>(g)] = p;
                fixed_cost += cost[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
                remaining = std::move(rest);
                fixed = true;
                break;
            }
        }
        (void)fixed;  // an unmatched pred is fine; later preds absorb the rows
    }
    result.total_cost = fixed_cost;
    return result;
}

}  // namespace owdet
