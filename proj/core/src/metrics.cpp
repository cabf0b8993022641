#include "vitlr/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "vitlr/trainer.hpp"

namespace vitlr {

std::vector<Detection> detections_from_prediction(const Prediction& pred, double conf_floor,
                                                  int frame, const std::string& clip) {
  const int background = pred.num_classes() - 1;
  std::vector<Detection> dets;
  for (int q = 0; q < pred.num_queries(); ++q) {
    int best = 0;
    for (int c = 1; c < pred.num_classes(); ++c) {
      if (pred.scores(q, c) > pred.scores(q, best)) best = c;
    }
    if (best == background) continue;
    const double conf = pred.scores(q, best);
    if (conf < conf_floor) continue;
    dets.push_back({pred.box(q), best, conf, frame, clip});
  }
  return dets;
}

namespace {

// Descending confidence with input order preserved on ties.
std::vector<int> confidence_order(const std::vector<Detection>& dets) {
  std::vector<int> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].confidence > dets[b].confidence;
  });
  return order;
}

}  // namespace

MatchCounts match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& gts, double iou_threshold) {
  std::vector<char> taken(gts.size(), 0);
  MatchCounts counts;
  for (int di : confidence_order(dets)) {
    int best_gt = -1;
    double best_iou = iou_threshold;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].state != dets[di].state) continue;
      const double overlap = iou(dets[di].box, gts[g].box);
      if (overlap > best_iou) {
        best_iou = overlap;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      taken[best_gt] = 1;
      ++counts.tp;
    } else {
      ++counts.fp;
    }
  }
  counts.fn = static_cast<int>(gts.size()) - counts.tp;
  return counts;
}

double average_precision(const std::vector<EvalFrame>& frames, int cls, double iou_threshold) {
  // Class-filtered detections across all frames, remembering their frame.
  struct Entry {
    double conf;
    int frame;
    const Detection* det;
  };
  std::vector<Entry> entries;
  std::vector<std::vector<const GroundTruth*>> gts(frames.size());
  int total_gts = 0;
  for (size_t f = 0; f < frames.size(); ++f) {
    for (const Detection& d : frames[f].detections) {
      if (d.state == cls) entries.push_back({d.confidence, static_cast<int>(f), &d});
    }
    for (const GroundTruth& g : frames[f].gts) {
      if (g.state == cls) {
        gts[f].push_back(&g);
        ++total_gts;
      }
    }
  }
  check_arg(total_gts > 0, "average_precision: class " + std::to_string(cls) +
                               " has no ground truths");

  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.conf > b.conf; });

  std::vector<std::vector<char>> taken(frames.size());
  for (size_t f = 0; f < frames.size(); ++f) taken[f].assign(gts[f].size(), 0);

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const Entry& e : entries) {
    int best_gt = -1;
    double best_iou = iou_threshold;
    for (size_t g = 0; g < gts[e.frame].size(); ++g) {
      if (taken[e.frame][g]) continue;
      const double overlap = iou(e.det->box, gts[e.frame][g]->box);
      if (overlap > best_iou) {
        best_iou = overlap;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      taken[e.frame][best_gt] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / total_gts);
  }

  // Area under the precision envelope over recall.
  double ap = 0.0;
  double env = 0.0;
  double prev_recall = 0.0;
  std::vector<double> envelope(precision.size());
  for (int i = static_cast<int>(precision.size()) - 1; i >= 0; --i) {
    env = std::max(env, precision[i]);
    envelope[i] = env;
  }
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * envelope[i];
    prev_recall = recall[i];
  }
  return ap;
}

double mean_average_precision(const std::vector<EvalFrame>& frames, int num_classes,
                              double iou_threshold) {
  check_arg(num_classes >= 1, "mean_average_precision: num_classes must be >= 1");
  std::vector<int> gt_counts(num_classes, 0);
  for (const EvalFrame& f : frames) {
    for (const GroundTruth& g : f.gts) {
      if (g.state >= 0 && g.state < num_classes) ++gt_counts[g.state];
    }
  }
  double sum = 0.0;
  int classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (gt_counts[c] == 0) continue;  // excluded from the mean
    sum += average_precision(frames, c, iou_threshold);
    ++classes;
  }
  check_arg(classes > 0, "mean_average_precision: no class has ground truths");
  return sum / classes;
}

Prf prf(int tp, int fp, int fn) {
  check_arg(tp >= 0 && fp >= 0 && fn >= 0, "prf counts must be non-negative");
  Prf r;
  r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

EvalReport evaluate_frames(const std::vector<EvalFrame>& frames, int num_classes,
                           double iou_threshold, const std::string& bucket) {
  EvalReport report;
  report.bucket = bucket;
  std::vector<int> gt_counts(num_classes, 0);
  for (const EvalFrame& f : frames) {
    const MatchCounts counts = match_detections(f.detections, f.gts, iou_threshold);
    report.tp += counts.tp;
    report.fp += counts.fp;
    report.fn += counts.fn;
    for (const GroundTruth& g : f.gts) {
      if (g.state >= 0 && g.state < num_classes) ++gt_counts[g.state];
    }
  }
  double ap_sum = 0.0;
  int classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (gt_counts[c] == 0) continue;
    const double ap = average_precision(frames, c, iou_threshold);
    report.per_class_ap[c] = ap;
    ap_sum += ap;
    ++classes;
  }
  report.map = classes > 0 ? ap_sum / classes : 0.0;
  const Prf scores = prf(report.tp, report.fp, report.fn);
  report.precision = scores.precision;
  report.recall = scores.recall;
  report.f1 = scores.f1;
  return report;
}

std::vector<EvalFrame> run_inference(ViTLRModel& model, const ClipData& clip, double conf_floor) {
  const int n = model.config().frames;
  const int total = static_cast<int>(clip.frames.size());
  check_arg(total >= n, "clip " + clip.clip_id + " has " + std::to_string(total) +
                            " frames, model needs " + std::to_string(n));
  std::vector<Tensor> tensors;
  tensors.reserve(clip.frames.size());
  for (const ImageU8& img : clip.frames) tensors.push_back(frame_to_tensor(img));

  std::vector<EvalFrame> result;
  for (int current = n - 1; current < total; ++current) {
    std::vector<Tensor> window(tensors.begin() + (current - n + 1),
                               tensors.begin() + current + 1);
    const Prediction pred = model.model_forward(window);
    EvalFrame frame;
    frame.detections = detections_from_prediction(pred, conf_floor, current, clip.clip_id);
    for (const LightAnnotation& l : clip.annotation.frames[current].lights) {
      frame.gts.push_back({l.box, l.state});
    }
    result.push_back(std::move(frame));
  }
  return result;
}

namespace {

double percentile(std::vector<double> sorted, double q) {
  const size_t idx = static_cast<size_t>(std::llround(q * (sorted.size() - 1)));
  return sorted[idx];
}

std::string machine_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(colon + 2);
        break;
      }
    }
  }
  return cpu + " (" + std::to_string(std::thread::hardware_concurrency()) + " hw threads)";
}

}  // namespace

FpsStats fps_bench(ViTLRModel& model, const std::vector<std::vector<Tensor>>& clips, int warmup,
                   int reps) {
  check_arg(!clips.empty(), "fps_bench needs at least one clip");
  check_arg(reps >= 3, "fps_bench needs reps >= 3 after warmup");
  check_arg(warmup >= 0, "fps_bench warmup must be >= 0");
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) {
    (void)model.model_forward(clips[i % clips.size()]);
  }
  std::vector<double> latencies;
  latencies.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto start = clock::now();
    (void)model.model_forward(clips[i % clips.size()]);
    const auto stop = clock::now();
    latencies.push_back(std::chrono::duration<double>(stop - start).count());
  }
  std::sort(latencies.begin(), latencies.end());
  FpsStats stats;
  stats.reps = reps;
  const double med = percentile(latencies, 0.5);
  stats.latency_median_ms = med * 1e3;
  stats.fps_median = 1.0 / med;
  stats.fps_p10 = 1.0 / percentile(latencies, 0.9);
  stats.fps_p90 = 1.0 / percentile(latencies, 0.1);
  stats.machine = machine_descriptor();
  return stats;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  out << "bucket,class,ap,map,precision,recall,f1,tp,fp,fn\n";
  for (const ReportRow& r : rows) {
    out << r.bucket << "," << r.cls << "," << r.ap << "," << r.map << "," << r.precision << ","
        << r.recall << "," << r.f1 << "," << r.tp << "," << r.fp << "," << r.fn << "\n";
  }
}

std::vector<ReportRow> rows_from_report(const EvalReport& report, bool per_class) {
  std::vector<ReportRow> rows;
  rows.push_back({report.bucket, "all", report.map, report.map, report.precision, report.recall,
                  report.f1, report.tp, report.fp, report.fn});
  if (per_class) {
    for (const auto& [cls, ap] : report.per_class_ap) {
      rows.push_back({report.bucket, state_name(cls), ap, report.map, report.precision,
                      report.recall, report.f1, report.tp, report.fp, report.fn});
    }
  }
  return rows;
}

std::string report_summary(const EvalReport& report) {
  std::ostringstream os;
  os << "bucket " << report.bucket << ": mAP " << report.map << "  P " << report.precision
     << "  R " << report.recall << "  F1 " << report.f1 << "  (tp " << report.tp << " fp "
     << report.fp << " fn " << report.fn << ")";
  for (const auto& [cls, ap] : report.per_class_ap) {
    os << "\n  AP[" << state_name(cls) << "] = " << ap;
  }
  return os.str();
}

}  // namespace vitlr
