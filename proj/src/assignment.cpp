#include "pointdet/assignment.hpp"

#include "pointdet/error.hpp"
#include "pointdet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pointdet::assignment {

CostMatrix build_cost_matrix(const std::vector<double>& final_points,
                             const std::vector<double>& class_probs, int m, int num_classes,
                             const std::vector<data::Cell>& gts, double tau) {
    const int n = static_cast<int>(gts.size());
    if (n > m) {
        fail_validation("label assignment needs at least as many proposals as cells (" +
                        std::to_string(n) + " cells, " + std::to_string(m) +
                        " proposals); decrease the proposal interval to densify the grid");
    }
    require(static_cast<int>(final_points.size()) == 2 * m, "build_cost_matrix: points size");
    require(static_cast<int>(class_probs.size()) == m * (num_classes + 1),
            "build_cost_matrix: probs size");

    CostMatrix cost;
    cost.n_gt = n;
    cost.m = m;
    cost.values.resize(static_cast<size_t>(n) * m);
    cost.loc_term.resize(cost.values.size());
    cost.cls_term.resize(cost.values.size());
    for (int j = 0; j < n; ++j) {
        require(gts[static_cast<size_t>(j)].class_id >= 0 &&
                    gts[static_cast<size_t>(j)].class_id < num_classes,
                "build_cost_matrix: ground-truth class out of range");
        for (int i = 0; i < m; ++i) {
            const double dx = final_points[2 * static_cast<size_t>(i)] - gts[static_cast<size_t>(j)].x;
            const double dy = final_points[2 * static_cast<size_t>(i) + 1] - gts[static_cast<size_t>(j)].y;
            const double loc = tau * std::sqrt(dx * dx + dy * dy);
            const double cls =
                -class_probs[static_cast<size_t>(i) * (num_classes + 1) +
                             gts[static_cast<size_t>(j)].class_id];
            const size_t idx = static_cast<size_t>(j) * m + i;
            cost.loc_term[idx] = loc;
            cost.cls_term[idx] = cls;
            cost.values[idx] = loc + cls;
        }
    }
    return cost;
}

Assignment hungarian_match(const CostMatrix& cost) {
    const int n = cost.n_gt, m = cost.m;
    require(n <= m, "hungarian_match: more rows than columns");
    for (double v : cost.values) {
        if (!std::isfinite(v)) fail_validation("hungarian_match: non-finite cost entry");
    }

    Assignment out;
    if (n == 0) {
        out.unmatched_proposals.resize(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) out.unmatched_proposals[static_cast<size_t>(i)] = i;
        return out;
    }

    // Potential-based shortest augmenting paths; 1-based with column 0 as the
    // virtual start. Scanning columns in ascending order makes every tie
    // resolve toward the lowest proposal index.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(m) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(m) + 1, 0), way(static_cast<size_t>(m) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(m) + 1, inf);
        std::vector<char> used(static_cast<size_t>(m) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = p[static_cast<size_t>(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= m; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost.at(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] -
                                   v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> col_of_row(static_cast<size_t>(n), -1);
    for (int j = 1; j <= m; ++j) {
        if (p[static_cast<size_t>(j)] != 0) col_of_row[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    }
    std::vector<char> taken(static_cast<size_t>(m), 0);
    for (int j = 0; j < n; ++j) {
        out.matched.emplace_back(j, col_of_row[static_cast<size_t>(j)]);
        taken[static_cast<size_t>(col_of_row[static_cast<size_t>(j)])] = 1;
        out.total_cost += cost.at(j, col_of_row[static_cast<size_t>(j)]);
    }
    for (int i = 0; i < m; ++i) {
        if (!taken[static_cast<size_t>(i)]) out.unmatched_proposals.push_back(i);
    }
    return out;
}

LossBreakdown compute_loss(const ag::Tensor& final_points, const ag::Tensor& logits,
                           const std::vector<data::Cell>& gts, const Assignment& assignment,
                           int num_classes, const MatchWeights& weights) {
    const int m = logits->dim(0);
    require(logits->dim(1) == num_classes + 1, "compute_loss: logits width must be classes+1");
    require(final_points->dim(0) == m && final_points->dim(1) == 2,
            "compute_loss: points/logits row mismatch");
    require(assignment.matched.size() == gts.size(), "compute_loss: assignment incomplete");

    std::vector<int> targets(static_cast<size_t>(m), num_classes);  // background
    std::vector<double> ce_weights(static_cast<size_t>(m), weights.w_bg);
    std::vector<int> matched_rows;
    std::vector<double> matched_gts;
    for (const auto& [gt_idx, prop_idx] : assignment.matched) {
        require(gt_idx >= 0 && gt_idx < static_cast<int>(gts.size()) && prop_idx >= 0 &&
                    prop_idx < m,
                "compute_loss: assignment index out of range");
        targets[static_cast<size_t>(prop_idx)] = gts[static_cast<size_t>(gt_idx)].class_id;
        ce_weights[static_cast<size_t>(prop_idx)] = 1.0;
        matched_rows.push_back(prop_idx);
        matched_gts.push_back(gts[static_cast<size_t>(gt_idx)].x);
        matched_gts.push_back(gts[static_cast<size_t>(gt_idx)].y);
    }

    LossBreakdown breakdown;
    ag::Tensor cls = ag::softmax_cross_entropy(logits, targets, ce_weights,
                                               static_cast<double>(m));
    ag::Tensor loc;
    if (matched_rows.empty()) {
        loc = ag::from_data({1}, {0.0});
    } else {
        ag::Tensor selected = ag::rows_select(final_points, matched_rows);
        ag::Tensor gt_const =
            ag::from_data({static_cast<int>(matched_rows.size()), 2}, std::move(matched_gts));
        ag::Tensor diff = ag::sub(selected, gt_const);
        loc = ag::scale(ag::sum_all(ag::mul(diff, diff)),
                        1.0 / static_cast<double>(matched_rows.size()));
    }
    breakdown.total = ag::add(cls, ag::scale(loc, weights.lambda_loc));
    breakdown.cls_loss = cls->scalar();
    breakdown.loc_loss = loc->scalar();
    breakdown.total_value = breakdown.total->scalar();
    return breakdown;
}

} // namespace pointdet::assignment
