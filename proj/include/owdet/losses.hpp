#pragma once

#include <vector>

#include "owdet/boxes.hpp"
#include "owdet/data.hpp"
#include "owdet/tensor.hpp"

namespace owdet {

struct DetectionLossWeights {
    double cls = 2.0;
    double l1 = 5.0;
    double giou = 2.0;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
};

// Elementwise 1/x with analytic backward; rejects exact zeros.
Tensor reciprocal(const Tensor& a);

// |x| composed as relu(x) + relu(-x).
Tensor absolute(const Tensor& a);

// Sigmoid focal loss summed over every (query, class) cell. `targets` holds
// 0/1 per cell, row-major, matching the logits layout.
Tensor focal_loss(const Tensor& logits, const std::vector<double>& targets, double gamma = 2.0,
                  double alpha = 0.25);

// Differentiable box terms for the prediction row `pred_index` of a
// (n_queries x 4) cxcywh tensor against a fixed ground-truth box.
Tensor box_l1(const Tensor& pred_boxes, int pred_index, const Box& gt);
Tensor box_giou(const Tensor& pred_boxes, int pred_index, const Box& gt);

// Minimum-cost assignment of ground truths to predictions under
// cls * (1 - p_gtclass) + l1 * |box - gt|_1 + giou * (1 - GIoU).
// Returns the prediction index per ground truth.
std::vector<int> match_predictions(const Tensor& pred_boxes, const Tensor& class_logits,
                                   const std::vector<GroundTruth>& gts,
                                   const DetectionLossWeights& w = {});

// cls * focal + sum over matched pairs of (l1 * L1 + giou * (1 - GIoU)),
// normalized by max(1, |gts|). Unmatched queries contribute focal background
// terms through the all-zero target rows.
Tensor detection_loss(const Tensor& pred_boxes, const Tensor& class_logits,
                      const std::vector<GroundTruth>& gts, const std::vector<int>& assignment,
                      const DetectionLossWeights& w = {});

}  // namespace owdet
