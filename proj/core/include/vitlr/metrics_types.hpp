#pragma once

#include <map>
#include <string>
#include <vector>

#include "vitlr/box.hpp"

namespace vitlr {

// One emitted detection: box, predicted state, confidence (max
// non-background probability) and its source frame.
struct Detection {
  Box box;
  int state = 0;
  double confidence = 0.0;
  int frame = 0;
  std::string clip;
};

// Detections and ground truths of one evaluated frame.
struct EvalFrame {
  std::vector<Detection> detections;
  std::vector<GroundTruth> gts;
};

struct MatchCounts {
  int tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  std::string bucket = "all";
  double map = 0.0;
  std::map<int, double> per_class_ap;  // classes with at least one gt
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

}  // namespace vitlr
