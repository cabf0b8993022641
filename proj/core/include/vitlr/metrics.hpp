#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vitlr/data_synth.hpp"
#include "vitlr/metrics_types.hpp"
#include "vitlr/model.hpp"

namespace vitlr {

// Emits one detection per query whose argmax class is not background and
// whose confidence (probability of the predicted state) clears the floor.
std::vector<Detection> detections_from_prediction(const Prediction& pred,
                                                  double conf_floor = 0.05, int frame = 0,
                                                  const std::string& clip = "");

// Greedy per-frame matching in descending confidence. A detection is TP when
// it overlaps (IoU > threshold) an unmatched ground truth of the same state;
// each ground truth matches at most once; unmatched ground truths are FN.
MatchCounts match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& gts, double iou_threshold = 0.5);

// Per-class AP: detections ranked by confidence across all frames (ties keep
// input order), localization gate IoU > threshold, area under the precision
// envelope over recall (all-point interpolation). Classes without ground
// truths are rejected (callers exclude them from the mean).
double average_precision(const std::vector<EvalFrame>& frames, int cls,
                         double iou_threshold = 0.5);

// Mean over classes with at least one ground truth; rejects an empty set.
double mean_average_precision(const std::vector<EvalFrame>& frames, int num_classes,
                              double iou_threshold = 0.5);

struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); zero denominators yield 0.
Prf prf(int tp, int fp, int fn);

EvalReport evaluate_frames(const std::vector<EvalFrame>& frames, int num_classes,
                           double iou_threshold = 0.5, const std::string& bucket = "all");

// Slides a window of model.frames over the clip and collects detections and
// ground truths for every evaluable current frame.
std::vector<EvalFrame> run_inference(ViTLRModel& model, const ClipData& clip,
                                     double conf_floor = 0.05);

struct FpsStats {
  double fps_median = 0.0, fps_p10 = 0.0, fps_p90 = 0.0;
  double latency_median_ms = 0.0;
  int reps = 0;
  std::string machine;  // desk numbers, not embedded-target numbers
};

// Wall-clock per full model_forward call; FPS = 1 / median latency.
FpsStats fps_bench(ViTLRModel& model, const std::vector<std::vector<Tensor>>& clips, int warmup,
                   int reps);

struct ReportRow {
  std::string bucket;
  std::string cls;
  double ap, map, precision, recall, f1;
  int tp, fp, fn;
};

// CSV with header "bucket,class,ap,map,precision,recall,f1,tp,fp,fn".
void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

// One summary row (class "all"); per_class adds one row per class with at
// least one ground truth.
std::vector<ReportRow> rows_from_report(const EvalReport& report, bool per_class = false);

std::string report_summary(const EvalReport& report);

}  // namespace vitlr
