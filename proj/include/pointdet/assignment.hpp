#pragma once

#include "pointdet/data.hpp"
#include "pointdet/geometry.hpp"
#include "pointdet/tensor.hpp"

#include <vector>

// One-to-one label assignment (Hungarian over distance + classification cost)
// and the matching-based losses.

namespace pointdet::assignment {

struct MatchWeights {
    double tau = 0.05;      // pixels-to-cost scale on the distance term
    double w_bg = 0.5;      // background weight in the classification loss
    double lambda_loc = 2e-4;
};

struct CostMatrix {
    int n_gt = 0;
    int m = 0;
    std::vector<double> values;    // n_gt x m, row-major
    std::vector<double> loc_term;  // tau * distance component
    std::vector<double> cls_term;  // -prob component

    double at(int j, int i) const { return values[static_cast<size_t>(j) * m + i]; }
};

struct Assignment {
    std::vector<std::pair<int, int>> matched;  // (gt_index, proposal_index)
    std::vector<int> unmatched_proposals;
    double total_cost = 0.0;
};

struct LossBreakdown {
    ag::Tensor total;  // cls + lambda_loc * loc
    double cls_loss = 0.0;
    double loc_loss = 0.0;  // pixels^2, mean over matched
    double total_value = 0.0;
};

// cost[j][i] = tau * ||final_i - g_j||2 - prob_i(class(g_j)).
// final_points: {m, 2} values (x, y); class_probs: {m, C+1} softmax rows.
CostMatrix build_cost_matrix(const std::vector<double>& final_points,
                             const std::vector<double>& class_probs, int m, int num_classes,
                             const std::vector<data::Cell>& gts, double tau);

// Minimum-cost injection of rows (ground truths) into columns (proposals);
// ties broken toward lower proposal indices. Requires n_gt <= m.
Assignment hungarian_match(const CostMatrix& cost);

// cls: weighted cross entropy over all proposals (matched -> gt class,
// unmatched -> background class C, weight w_bg), normalized by m.
// loc: mean squared Euclidean distance over matched pairs.
LossBreakdown compute_loss(const ag::Tensor& final_points, const ag::Tensor& logits,
                           const std::vector<data::Cell>& gts, const Assignment& assignment,
                           int num_classes, const MatchWeights& weights);

} // namespace pointdet::assignment
