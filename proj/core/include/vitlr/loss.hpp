#pragma once

#include <utility>
#include <vector>

#include "vitlr/box.hpp"
#include "vitlr/prediction.hpp"
#include "vitlr/tape.hpp"
#include "vitlr/tensor.hpp"

namespace vitlr {

struct LossConfig {
  double ciou_weight = 2.0;   // lambda, weights the localization term
  double focal_alpha = 0.25;  // alpha_t
  double focal_gamma = 2.0;   // gamma
  double match_class_weight = 1.0;
  double match_box_weight = 2.0;

  void validate() const;
};

// One-to-one assignment between query slots and ground truths. Each ground
// truth is matched exactly once when there are at most as many ground truths
// as queries; pairs are disjoint in both coordinates.
struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (query, ground truth), by query asc
  std::vector<int> unmatched_queries;      // ascending
  double total_cost = 0.0;
};

// Minimum-cost assignment covering every column of an m x g cost matrix
// (g <= m); O(n^3). Exact ties are canonicalized toward the lowest
// (query, gt) index pairs via cost-preserving swaps.
MatchResult hungarian_match(const std::vector<std::vector<double>>& cost);

// Focal classification loss summed over query rows. probs holds one
// distribution per row; targets index into [0, classes). The log term is
// clamped at p >= 1e-7.
double focal_loss(const Tensor& probs, const std::vector<int>& targets, const LossConfig& cfg);

struct LossBreakdown {
  double focal = 0.0;
  double ciou = 0.0;
  double total = 0.0;
  MatchResult match;
};

// Combined objective: Hungarian matching on
//   class_w * (1 - p[gt state]) + box_w * ciou_loss
// then focal over all m queries (unmatched rows target the background class)
// plus lambda times the CIoU sum over matched pairs.
LossBreakdown total_loss(const Prediction& pred, const std::vector<GroundTruth>& gts,
                         const LossConfig& cfg);

struct TracedLoss {
  Var total;
  LossBreakdown values;
};

// Same objective built on the tape so gradients reach the prediction
// tensors. The match is recomputed per call and held fixed: no gradient
// flows through the assignment itself.
TracedLoss total_loss_traced(Tape& tape, const TracedPrediction& pred,
                             const std::vector<GroundTruth>& gts, const LossConfig& cfg);

}  // namespace vitlr
