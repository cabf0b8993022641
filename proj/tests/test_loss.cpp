#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "test_helpers.hpp"
#include "vitlr/loss.hpp"
#include "vitlr/rng.hpp"

using namespace vitlr;
using testing::fd_check;
using testing::random_tensor;

namespace {

// Exhaustive assignment minimum over every injection of ground truths into
// queries; viable for small G only.
double brute_force_min_cost(const std::vector<std::vector<double>>& cost) {
  const int m = static_cast<int>(cost.size());
  const int g = static_cast<int>(cost[0].size());
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick;
  const std::function<void(int, double)> recurse = [&](int gt, double acc) {
    if (gt == g) {
      best = std::min(best, acc);
      return;
    }
    for (int q = 0; q < m; ++q) {
      if (std::find(pick.begin(), pick.end(), q) != pick.end()) continue;
      pick.push_back(q);
      recurse(gt + 1, acc + cost[q][gt]);
      pick.pop_back();
    }
  };
  recurse(0, 0.0);
  return best;
}

Prediction make_prediction(int m, int classes, SplitMix64& rng, int img_w = 256,
                           int img_h = 128) {
  Prediction p{Tensor({m, 2}), Tensor({m}), Tensor({m}), Tensor({m, classes})};
  for (int q = 0; q < m; ++q) {
    p.centers(q, 0) = rng.uniform_float(5.0f, img_w - 5.0f);
    p.centers(q, 1) = rng.uniform_float(5.0f, img_h - 5.0f);
    p.widths[q] = rng.uniform_float(4.0f, 40.0f);
    p.heights[q] = rng.uniform_float(4.0f, 40.0f);
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      p.scores(q, c) = rng.uniform_float(0.05f, 1.0f);
      sum += p.scores(q, c);
    }
    for (int c = 0; c < classes; ++c) {
      p.scores(q, c) = static_cast<float>(p.scores(q, c) / sum);
    }
  }
  return p;
}

Tensor boxes_of(const Prediction& pred) {
  Tensor b({pred.num_queries(), 4});
  for (int q = 0; q < pred.num_queries(); ++q) {
    b(q, 0) = pred.centers(q, 0);
    b(q, 1) = pred.centers(q, 1);
    b(q, 2) = static_cast<float>(pred.widths[q]);
    b(q, 3) = static_cast<float>(pred.heights[q]);
  }
  return b;
}

}  // namespace

TEST_CASE("iou hand cases") {
  const Box a{1, 1, 2, 2}, b{2, 2, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{10, 10, 2, 2}) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-9));
  CHECK(iou(a, b) == iou(b, a));
}

TEST_CASE("iou symmetry on random boxes") {
  SplitMix64 rng(30);
  for (int trial = 0; trial < 100; ++trial) {
    const Box a{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(0.5, 8.0),
                rng.uniform(0.5, 8.0)};
    const Box b{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(0.5, 8.0),
                rng.uniform(0.5, 8.0)};
    const double ab = iou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("iou rejects degenerate boxes") {
  CHECK_THROWS_AS(iou(Box{0, 0, 0, 1}, Box{0, 0, 1, 1}), std::invalid_argument);
}

TEST_CASE("ciou_loss hand cases") {
  const Box a{1, 1, 2, 2}, b{2, 2, 2, 2};
  CHECK(ciou_loss(a, a) == 0.0);
  // score = 1/7 - 2/18 = 0.031746..., loss = 0.968254
  CHECK(ciou_loss(a, b) == doctest::Approx(0.968254).epsilon(1e-5));
  CHECK_THROWS_AS(ciou_loss(a, Box{1, 1, -2, 2}), std::invalid_argument);
}

TEST_CASE("ciou_loss reduces to 1 - IoU + d2/c2 for equal aspect ratios") {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const double w = rng.uniform(2.0, 10.0), h = rng.uniform(2.0, 10.0);
    const double scale = rng.uniform(0.5, 2.0);
    const Box p{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), w * scale, h * scale};
    const Box g{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), w, h};
    const double overlap = iou(p, g);
    const double d2 = (p.cx - g.cx) * (p.cx - g.cx) + (p.cy - g.cy) * (p.cy - g.cy);
    const double ew = std::max(p.x2(), g.x2()) - std::min(p.x1(), g.x1());
    const double eh = std::max(p.y2(), g.y2()) - std::min(p.y1(), g.y1());
    const double expected = 1.0 - overlap + d2 / (ew * ew + eh * eh);
    CHECK(ciou_loss(p, g) == doctest::Approx(expected).epsilon(1e-7));
  }
}

TEST_CASE("ciou_loss is nonnegative, zero only for identical boxes") {
  SplitMix64 rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    const Box p{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(0.5, 8.0),
                rng.uniform(0.5, 8.0)};
    const Box g{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(0.5, 8.0),
                rng.uniform(0.5, 8.0)};
    const double loss = ciou_loss(p, g);
    CHECK(loss >= 0.0);
    CHECK(loss > 0.0);  // random boxes never coincide exactly
  }
}

TEST_CASE("ciou_loss strictly decreases while translating toward the target") {
  const Box gt{10, 5, 6, 4};
  const double start_x = -20.0, start_y = 17.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 20; ++i) {
    const double t = static_cast<double>(i) / 19.0;
    const Box pred{start_x + (gt.cx - start_x) * t, start_y + (gt.cy - start_y) * t, 6, 4};
    const double loss = ciou_loss(pred, gt);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("focal_loss hand cases") {
  LossConfig cfg;

  Tensor perfect({2, 3});
  perfect(0, 1) = 1.0f;
  perfect(1, 2) = 1.0f;
  CHECK(focal_loss(perfect, {1, 2}, cfg) == doctest::Approx(0.0));

  Tensor probs({1, 2}, {0.9f, 0.1f});
  CHECK(focal_loss(probs, {0}, cfg) == doctest::Approx(2.634e-4).epsilon(1e-3));

  // gamma = 0, alpha = 1 reduces to plain cross-entropy
  SplitMix64 rng(33);
  Tensor rows({4, 3});
  for (int q = 0; q < 4; ++q) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      rows(q, c) = rng.uniform_float(0.05f, 1.0f);
      sum += rows(q, c);
    }
    for (int c = 0; c < 3; ++c) rows(q, c) = static_cast<float>(rows(q, c) / sum);
  }
  LossConfig ce = cfg;
  ce.focal_gamma = 0.0;
  ce.focal_alpha = 1.0;
  const std::vector<int> targets{0, 2, 1, 2};
  double expected = 0.0;
  for (int q = 0; q < 4; ++q) expected += -std::log(rows(q, targets[q]));
  CHECK(focal_loss(rows, targets, ce) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("focal_loss rejects out-of-range targets and is monotone in p_t") {
  LossConfig cfg;
  Tensor probs({1, 3}, {0.2f, 0.5f, 0.3f});
  CHECK_THROWS_WITH_AS(focal_loss(probs, {3}, cfg), doctest::Contains("out of range"),
                       std::invalid_argument);
  double prev = std::numeric_limits<double>::infinity();
  for (float p = 0.1f; p < 0.95f; p += 0.1f) {
    Tensor row({1, 2}, {p, 1.0f - p});
    const double loss = focal_loss(row, {0}, cfg);
    CHECK(loss >= 0.0);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("hungarian_match hand cases") {
  const MatchResult r = hungarian_match({{4, 1}, {2, 3}});
  REQUIRE(r.pairs.size() == 2);
  CHECK(r.pairs[0] == std::pair<int, int>{0, 1});
  CHECK(r.pairs[1] == std::pair<int, int>{1, 0});
  CHECK(r.total_cost == doctest::Approx(3.0));

  const MatchResult ident = hungarian_match({{0, 9, 9}, {9, 0, 9}, {9, 9, 0}});
  for (int i = 0; i < 3; ++i) CHECK(ident.pairs[i] == std::pair<int, int>{i, i});

  CHECK_THROWS_WITH_AS(hungarian_match({{1.0, 2.0}}), doctest::Contains("exceed"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(hungarian_match({{std::numeric_limits<double>::infinity()}}),
                       doctest::Contains("finite"), std::invalid_argument);
}

TEST_CASE("hungarian_match ties broken toward lowest (query, gt) pairs") {
  const MatchResult r = hungarian_match({{1, 1}, {1, 1}, {1, 1}});
  REQUIRE(r.pairs.size() == 2);
  CHECK(r.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(r.pairs[1] == std::pair<int, int>{1, 1});
  CHECK(r.unmatched_queries == std::vector<int>{2});
}

TEST_CASE("hungarian_match equals exhaustive brute force on random matrices") {
  SplitMix64 rng(34);
  for (int trial = 0; trial < 200; ++trial) {
    const int g = rng.uniform_int(1, 6);
    const int m = rng.uniform_int(g, g + 6);
    std::vector<std::vector<double>> cost(m, std::vector<double>(g));
    for (auto& row : cost) {
      for (double& c : row) c = rng.uniform(0.0, 10.0);
    }
    const MatchResult r = hungarian_match(cost);
    CHECK(r.pairs.size() == static_cast<size_t>(g));
    std::vector<char> q_used(m, 0), g_used(g, 0);
    for (const auto& [q, gt] : r.pairs) {
      CHECK(!q_used[q]);
      CHECK(!g_used[gt]);
      q_used[q] = g_used[gt] = 1;
    }
    CHECK(r.total_cost == doctest::Approx(brute_force_min_cost(cost)).epsilon(1e-9));
  }
}

TEST_CASE("hungarian_match total cost beats random assignments") {
  SplitMix64 rng(35);
  const int m = 8, g = 5;
  std::vector<std::vector<double>> cost(m, std::vector<double>(g));
  for (auto& row : cost) {
    for (double& c : row) c = rng.uniform(0.0, 5.0);
  }
  const MatchResult r = hungarian_match(cost);
  std::vector<int> queries(m);
  std::iota(queries.begin(), queries.end(), 0);
  for (int trial = 0; trial < 100; ++trial) {
    for (int i = m - 1; i > 0; --i) std::swap(queries[i], queries[rng.uniform_int(0, i)]);
    double total = 0.0;
    for (int gt = 0; gt < g; ++gt) total += cost[queries[gt]][gt];
    CHECK(r.total_cost <= total + 1e-9);
  }
}

TEST_CASE("total_loss with empty ground truths is background focal only") {
  SplitMix64 rng(36);
  const Prediction pred = make_prediction(6, 5, rng);
  LossConfig cfg;
  const LossBreakdown out = total_loss(pred, {}, cfg);
  CHECK(out.ciou == 0.0);
  CHECK(out.match.pairs.empty());
  CHECK(out.match.unmatched_queries.size() == 6);
  const std::vector<int> all_bg(6, 4);
  CHECK(out.total == doctest::Approx(focal_loss(pred.scores, all_bg, cfg)));
}

TEST_CASE("total_loss is zero for perfect predictions") {
  const int m = 4, l = 3;
  Prediction pred{Tensor({m, 2}), Tensor({m}), Tensor({m}), Tensor({m, l + 1})};
  const std::vector<GroundTruth> gts = {{Box{30, 40, 10, 20}, 0}, {Box{100, 60, 8, 16}, 2}};
  for (int q = 0; q < m; ++q) {
    if (q < 2) {
      pred.centers(q, 0) = static_cast<float>(gts[q].box.cx);
      pred.centers(q, 1) = static_cast<float>(gts[q].box.cy);
      pred.widths[q] = static_cast<float>(gts[q].box.w);
      pred.heights[q] = static_cast<float>(gts[q].box.h);
      pred.scores(q, gts[q].state) = 1.0f;
    } else {
      pred.centers(q, 0) = 200.0f;
      pred.centers(q, 1) = 100.0f;
      pred.widths[q] = 5.0f;
      pred.heights[q] = 5.0f;
      pred.scores(q, l) = 1.0f;
    }
  }
  const LossBreakdown out = total_loss(pred, gts, LossConfig{});
  CHECK(out.total == doctest::Approx(0.0));
  CHECK(out.match.pairs.size() == 2);
}

TEST_CASE("total_loss with lambda zero equals focal alone") {
  SplitMix64 rng(37);
  const Prediction pred = make_prediction(5, 4, rng);
  const std::vector<GroundTruth> gts = {{Box{50, 50, 12, 24}, 1}, {Box{150, 70, 10, 18}, 2}};
  LossConfig cfg;
  cfg.ciou_weight = 0.0;
  const LossBreakdown out = total_loss(pred, gts, cfg);
  std::vector<int> targets(5, 3);
  for (const auto& [q, g] : out.match.pairs) targets[q] = gts[g].state;
  CHECK(out.total == doctest::Approx(focal_loss(pred.scores, targets, cfg)));
}

TEST_CASE("total_loss rejects more ground truths than queries") {
  SplitMix64 rng(41);
  const Prediction pred = make_prediction(2, 4, rng);
  const std::vector<GroundTruth> gts = {{Box{30, 30, 5, 5}, 0},
                                        {Box{60, 60, 5, 5}, 1},
                                        {Box{90, 90, 5, 5}, 2}};
  CHECK_THROWS_AS(total_loss(pred, gts, LossConfig{}), std::invalid_argument);
}

TEST_CASE("traced loss forward values match the plain evaluation") {
  SplitMix64 rng(38);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = 6, classes = 5;
    const Prediction pred = make_prediction(m, classes, rng);
    std::vector<GroundTruth> gts;
    const int g = rng.uniform_int(0, 3);
    for (int i = 0; i < g; ++i) {
      gts.push_back({Box{rng.uniform(20.0, 230.0), rng.uniform(20.0, 110.0),
                         rng.uniform(4.0, 30.0), rng.uniform(4.0, 30.0)},
                     rng.uniform_int(0, classes - 2)});
    }
    const LossConfig cfg;

    Tape tape;
    const TracedPrediction traced{tape.leaf(boxes_of(pred)), tape.leaf(pred.scores)};
    const TracedLoss out = total_loss_traced(tape, traced, gts, cfg);
    const LossBreakdown plain = total_loss(pred, gts, cfg);
    CHECK(out.values.total == doctest::Approx(plain.total).epsilon(1e-4));
    CHECK(out.values.focal == doctest::Approx(plain.focal).epsilon(1e-4));
    CHECK(out.values.ciou == doctest::Approx(plain.ciou).epsilon(1e-4));
    CHECK(out.values.match.pairs == plain.match.pairs);
  }
}

TEST_CASE("traced loss gradient matches finite differences of a double oracle") {
  // Analytic gradients come from the tape; the numeric side evaluates an
  // independent double-precision formula with the match held fixed, so the
  // h = 1e-3 central differences are far above float32 roundoff.
  SplitMix64 rng(39);
  const int m = 4, classes = 4;
  const std::vector<GroundTruth> gts = {{Box{40, 30, 12, 20}, 0}, {Box{120, 64, 9, 15}, 2}};
  Tensor boxes({m, 4});
  for (int q = 0; q < m; ++q) {
    boxes(q, 0) = rng.uniform_float(20.0f, 200.0f);
    boxes(q, 1) = rng.uniform_float(20.0f, 100.0f);
    boxes(q, 2) = rng.uniform_float(6.0f, 30.0f);
    boxes(q, 3) = rng.uniform_float(6.0f, 30.0f);
  }
  const Tensor logits = random_tensor({m, classes}, rng);
  const LossConfig cfg;

  Tape tape;
  const Var boxes_var = tape.leaf(boxes, "boxes");
  const Var logits_var = tape.leaf(logits, "logits");
  const TracedPrediction traced{boxes_var, tape.softmax_channels(logits_var)};
  const TracedLoss out = total_loss_traced(tape, traced, gts, cfg);
  const GradMap grads = tape.backward(out.total);
  const MatchResult fixed = out.values.match;
  REQUIRE(fixed.pairs.size() == 2);

  const auto reference = [&](const Tensor& bx, const Tensor& lg) {
    // double softmax
    std::vector<std::vector<double>> probs(m, std::vector<double>(classes));
    for (int q = 0; q < m; ++q) {
      double mx = lg(q, 0);
      for (int c = 1; c < classes; ++c) mx = std::max(mx, double(lg(q, c)));
      double denom = 0.0;
      for (int c = 0; c < classes; ++c) denom += std::exp(double(lg(q, c)) - mx);
      for (int c = 0; c < classes; ++c) probs[q][c] = std::exp(double(lg(q, c)) - mx) / denom;
    }
    std::vector<int> targets(m, classes - 1);
    for (const auto& [q, g] : fixed.pairs) targets[q] = gts[g].state;
    double focal = 0.0;
    for (int q = 0; q < m; ++q) {
      const double pt = probs[q][targets[q]];
      focal += -cfg.focal_alpha * std::pow(1.0 - pt, cfg.focal_gamma) *
               std::log(std::max(pt, 1e-7));
    }
    double ciou = 0.0;
    for (const auto& [q, g] : fixed.pairs) {
      ciou += ciou_loss(Box{bx(q, 0), bx(q, 1), bx(q, 2), bx(q, 3)}, gts[g].box);
    }
    return focal + cfg.ciou_weight * ciou;
  };

  const auto check_input = [&](const Tensor& input, const std::string& name, bool is_boxes) {
    const Tensor& analytic = grads.at(name);
    double na = 0.0, nn = 0.0, nd = 0.0;
    for (int64_t j = 0; j < input.numel(); ++j) {
      Tensor plus = input, minus = input;
      plus[j] = static_cast<float>(input[j] + 1e-3);
      minus[j] = static_cast<float>(input[j] - 1e-3);
      const double step = static_cast<double>(plus[j]) - minus[j];
      const double lp = is_boxes ? reference(plus, logits) : reference(boxes, plus);
      const double lm = is_boxes ? reference(minus, logits) : reference(boxes, minus);
      const double numeric = (lp - lm) / step;
      na += static_cast<double>(analytic[j]) * analytic[j];
      nn += numeric * numeric;
      const double d = analytic[j] - numeric;
      nd += d * d;
    }
    return std::sqrt(nd) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  };
  CHECK(check_input(boxes, "boxes", true) < 1e-3);
  CHECK(check_input(logits, "logits", false) < 1e-3);
}
