#include "vitlr/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace vitlr {

void LossConfig::validate() const {
  check_arg(ciou_weight >= 0.0, "loss lambda must be >= 0");
  check_arg(focal_gamma >= 0.0, "focal gamma must be >= 0");
  check_arg(focal_alpha > 0.0 && focal_alpha <= 1.0, "focal alpha must be in (0, 1]");
  check_arg(match_class_weight >= 0.0 && match_box_weight >= 0.0,
            "matching cost weights must be >= 0");
}

namespace {

// Jonker-Volgenant style shortest augmenting path solver for a square
// matrix; O(n^3). p[j] ends up holding the row assigned to column j.
std::vector<int> solve_square_assignment(const std::vector<std::vector<double>>& a, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  return p;
}

// Moves exact-tied assignments toward the lowest (query, gt) pairs so the
// documented tie-break holds regardless of solver internals.
void canonicalize_ties(const std::vector<std::vector<double>>& cost, int queries,
                       std::vector<int>& gt_of_query) {
  bool changed = true;
  while (changed) {
    changed = false;
    // Swap ground truths between two matched queries when cost-neutral and
    // it gives the earlier query the smaller gt index.
    for (int qa = 0; qa < queries; ++qa) {
      if (gt_of_query[qa] < 0) continue;
      for (int qb = qa + 1; qb < queries; ++qb) {
        if (gt_of_query[qb] < 0) continue;
        const int ga = gt_of_query[qa], gb = gt_of_query[qb];
        if (gb >= ga) continue;
        if (cost[qa][gb] + cost[qb][ga] == cost[qa][ga] + cost[qb][gb]) {
          std::swap(gt_of_query[qa], gt_of_query[qb]);
          changed = true;
        }
      }
    }
    // Move a match to an earlier unmatched query when cost-neutral.
    for (int q = 0; q < queries; ++q) {
      if (gt_of_query[q] < 0) continue;
      for (int q2 = 0; q2 < q; ++q2) {
        if (gt_of_query[q2] >= 0) continue;
        if (cost[q2][gt_of_query[q]] == cost[q][gt_of_query[q]]) {
          gt_of_query[q2] = gt_of_query[q];
          gt_of_query[q] = -1;
          changed = true;
          break;
        }
      }
    }
  }
}

}  // namespace

MatchResult hungarian_match(const std::vector<std::vector<double>>& cost) {
  const int queries = static_cast<int>(cost.size());
  check_arg(queries > 0, "hungarian_match: empty cost matrix");
  const int gts = static_cast<int>(cost[0].size());
  check_arg(gts <= queries, "hungarian_match: " + std::to_string(gts) +
                                " ground truths exceed " + std::to_string(queries) +
                                " queries (config error)");
  for (const auto& row : cost) {
    check_arg(static_cast<int>(row.size()) == gts, "hungarian_match: ragged cost matrix");
    for (double c : row) check_arg(std::isfinite(c), "hungarian_match: non-finite cost");
  }

  // Pad with zero-cost dummy columns to a square problem; dummy assignments
  // shift the total by a constant and cannot change the optimum.
  std::vector<std::vector<double>> padded(queries, std::vector<double>(queries, 0.0));
  for (int q = 0; q < queries; ++q) {
    for (int g = 0; g < gts; ++g) padded[q][g] = cost[q][g];
  }
  const std::vector<int> p = solve_square_assignment(padded, queries);

  std::vector<int> gt_of_query(queries, -1);
  for (int j = 1; j <= queries; ++j) {
    if (p[j] != 0 && j - 1 < gts) gt_of_query[p[j] - 1] = j - 1;
  }
  canonicalize_ties(cost, queries, gt_of_query);

  MatchResult r;
  for (int q = 0; q < queries; ++q) {
    if (gt_of_query[q] >= 0) {
      r.pairs.emplace_back(q, gt_of_query[q]);
      r.total_cost += cost[q][gt_of_query[q]];
    } else {
      r.unmatched_queries.push_back(q);
    }
  }
  return r;
}

double focal_loss(const Tensor& probs, const std::vector<int>& targets, const LossConfig& cfg) {
  cfg.validate();
  check_arg(probs.rank() == 2, "focal_loss probs must be rank 2, got " + probs.shape_str());
  const int rows = probs.extent(0), classes = probs.extent(1);
  check_arg(static_cast<int>(targets.size()) == rows,
            "focal_loss needs one target per query row");
  double loss = 0.0;
  for (int q = 0; q < rows; ++q) {
    check_arg(targets[q] >= 0 && targets[q] < classes,
              "focal_loss target " + std::to_string(targets[q]) + " out of range [0, " +
                  std::to_string(classes - 1) + "] at row " + std::to_string(q));
    const double pt = probs(q, targets[q]);
    const double log_pt = std::log(std::max(pt, 1e-7));
    loss += -cfg.focal_alpha * std::pow(1.0 - pt, cfg.focal_gamma) * log_pt;
  }
  return loss;
}

namespace {

std::vector<std::vector<double>> build_cost(const Prediction& pred,
                                            const std::vector<GroundTruth>& gts,
                                            const LossConfig& cfg) {
  const int m = pred.num_queries();
  const int background = pred.num_classes() - 1;
  std::vector<std::vector<double>> cost(m, std::vector<double>(gts.size()));
  for (size_t g = 0; g < gts.size(); ++g) {
    check_arg(gts[g].state >= 0 && gts[g].state < background,
              "ground-truth state " + std::to_string(gts[g].state) +
                  " out of range [0, " + std::to_string(background - 1) + "]");
  }
  for (int q = 0; q < m; ++q) {
    const Box pb = pred.box(q);
    for (size_t g = 0; g < gts.size(); ++g) {
      cost[q][g] = cfg.match_class_weight * (1.0 - pred.scores(q, gts[g].state)) +
                   cfg.match_box_weight * ciou_loss(pb, gts[g].box);
    }
  }
  return cost;
}

std::vector<int> focal_targets(int queries, int background, const MatchResult& match,
                               const std::vector<GroundTruth>& gts) {
  std::vector<int> targets(queries, background);
  for (const auto& [q, g] : match.pairs) targets[q] = gts[g].state;
  return targets;
}

}  // namespace

LossBreakdown total_loss(const Prediction& pred, const std::vector<GroundTruth>& gts,
                         const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  const int background = pred.num_classes() - 1;
  if (!gts.empty()) {
    out.match = hungarian_match(build_cost(pred, gts, cfg));
  } else {
    for (int q = 0; q < pred.num_queries(); ++q) out.match.unmatched_queries.push_back(q);
  }
  out.focal = focal_loss(pred.scores, focal_targets(pred.num_queries(), background, out.match, gts),
                         cfg);
  for (const auto& [q, g] : out.match.pairs) out.ciou += ciou_loss(pred.box(q), gts[g].box);
  out.total = out.focal + cfg.ciou_weight * out.ciou;
  return out;
}

Prediction prediction_from_traced(const Tape& tape, const TracedPrediction& traced) {
  const Tensor& boxes = tape.value(traced.boxes_px);
  const Tensor& scores = tape.value(traced.scores);
  const int m = boxes.extent(0);
  Prediction p{Tensor({m, 2}), Tensor({m}), Tensor({m}), scores};
  for (int q = 0; q < m; ++q) {
    p.centers(q, 0) = boxes(q, 0);
    p.centers(q, 1) = boxes(q, 1);
    p.widths[q] = boxes(q, 2);
    p.heights[q] = boxes(q, 3);
  }
  return p;
}

namespace {

Var leaf_from_doubles(Tape& tape, const std::vector<double>& v) {
  Tensor t({static_cast<int>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<float>(v[i]);
  return tape.leaf(std::move(t));
}

// CIoU over the matched query rows, composed from primitive tape ops so the
// gradient (including through alpha) comes from the reverse pass.
Var traced_ciou_sum(Tape& tape, Var boxes_px, const MatchResult& match,
                    const std::vector<GroundTruth>& gts) {
  std::vector<int> rows;
  std::vector<double> gx, gy, gw, gh, gx1, gy1, gx2, gy2, garea, gatan;
  for (const auto& [q, g] : match.pairs) {
    rows.push_back(q);
    const Box& b = gts[g].box;
    gx.push_back(b.cx);
    gy.push_back(b.cy);
    gw.push_back(b.w);
    gh.push_back(b.h);
    gx1.push_back(b.x1());
    gy1.push_back(b.y1());
    gx2.push_back(b.x2());
    gy2.push_back(b.y2());
    garea.push_back(b.area());
    gatan.push_back(std::atan(b.w / b.h));
  }

  const Var matched = tape.gather_rows(boxes_px, rows);
  const Var px = tape.select_column(matched, 0);
  const Var py = tape.select_column(matched, 1);
  const Var pw = tape.select_column(matched, 2);
  const Var ph = tape.select_column(matched, 3);
  const Var ax1 = tape.sub(px, tape.scale(pw, 0.5f));
  const Var ax2 = tape.add(px, tape.scale(pw, 0.5f));
  const Var ay1 = tape.sub(py, tape.scale(ph, 0.5f));
  const Var ay2 = tape.add(py, tape.scale(ph, 0.5f));

  const Var bx1 = leaf_from_doubles(tape, gx1);
  const Var by1 = leaf_from_doubles(tape, gy1);
  const Var bx2 = leaf_from_doubles(tape, gx2);
  const Var by2 = leaf_from_doubles(tape, gy2);

  const Var iw = tape.relu(tape.sub(tape.minimum(ax2, bx2), tape.maximum(ax1, bx1)));
  const Var ih = tape.relu(tape.sub(tape.minimum(ay2, by2), tape.maximum(ay1, by1)));
  const Var inter = tape.mul(iw, ih);
  const Var uni = tape.sub(tape.add(tape.mul(pw, ph), leaf_from_doubles(tape, garea)), inter);
  const Var overlap = tape.divide(inter, uni);

  const Var dx = tape.sub(px, leaf_from_doubles(tape, gx));
  const Var dy = tape.sub(py, leaf_from_doubles(tape, gy));
  const Var d2 = tape.add(tape.mul(dx, dx), tape.mul(dy, dy));
  const Var ew = tape.sub(tape.maximum(ax2, bx2), tape.minimum(ax1, bx1));
  const Var eh = tape.sub(tape.maximum(ay2, by2), tape.minimum(ay1, by1));
  const Var c2 = tape.add(tape.mul(ew, ew), tape.mul(eh, eh));

  const Var da = tape.sub(leaf_from_doubles(tape, gatan), tape.atan_pointwise(tape.divide(pw, ph)));
  const float four_over_pi2 = static_cast<float>(4.0 / (std::numbers::pi * std::numbers::pi));
  const Var v = tape.scale(tape.mul(da, da), four_over_pi2);
  const Var alpha = tape.divide(v, tape.add_scalar(tape.add(tape.rsub_scalar(overlap, 1.0f), v),
                                                   1e-9f));
  const Var score = tape.sub(tape.sub(overlap, tape.divide(d2, c2)), tape.mul(alpha, v));
  return tape.sum_all(tape.rsub_scalar(score, 1.0f));
}

}  // namespace

TracedLoss total_loss_traced(Tape& tape, const TracedPrediction& pred,
                             const std::vector<GroundTruth>& gts, const LossConfig& cfg) {
  cfg.validate();
  const Prediction values = prediction_from_traced(tape, pred);
  const int background = values.num_classes() - 1;

  TracedLoss out;
  if (!gts.empty()) {
    out.values.match = hungarian_match(build_cost(values, gts, cfg));
  } else {
    for (int q = 0; q < values.num_queries(); ++q) {
      out.values.match.unmatched_queries.push_back(q);
    }
  }

  const std::vector<int> targets =
      focal_targets(values.num_queries(), background, out.values.match, gts);
  const Var pt = tape.select_per_row(pred.scores, targets);
  const Var modulator = tape.pow_scalar(tape.rsub_scalar(pt, 1.0f),
                                        static_cast<float>(cfg.focal_gamma));
  const Var log_pt = tape.log_clamped(pt, 1e-7f);
  const Var focal = tape.scale(tape.sum_all(tape.mul(modulator, log_pt)),
                               static_cast<float>(-cfg.focal_alpha));

  Var total = focal;
  if (!out.values.match.pairs.empty()) {
    const Var ciou_sum = traced_ciou_sum(tape, pred.boxes_px, out.values.match, gts);
    total = tape.add(focal, tape.scale(ciou_sum, static_cast<float>(cfg.ciou_weight)));
    out.values.ciou = tape.value(ciou_sum)[0];
  }
  out.total = total;
  out.values.focal = tape.value(focal)[0];
  out.values.total = tape.value(total)[0];
  return out;
}

}  // namespace vitlr
