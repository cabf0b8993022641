#include "vitlr/box.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vitlr/tensor.hpp"

namespace vitlr {

namespace {

void check_box(const Box& b, const char* which) {
  check_arg(b.w > 0.0 && b.h > 0.0, std::string("degenerate ") + which +
                                        " box: extents must be > 0 (w=" + std::to_string(b.w) +
                                        ", h=" + std::to_string(b.h) + ")");
}

}  // namespace

double iou(const Box& a, const Box& b) {
  check_box(a, "first");
  check_box(b, "second");
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double ciou_loss(const Box& pred, const Box& gt) {
  check_box(pred, "predicted");
  check_box(gt, "ground-truth");
  const double overlap = iou(pred, gt);

  const double dx = pred.cx - gt.cx;
  const double dy = pred.cy - gt.cy;
  const double d2 = dx * dx + dy * dy;

  const double ew = std::max(pred.x2(), gt.x2()) - std::min(pred.x1(), gt.x1());
  const double eh = std::max(pred.y2(), gt.y2()) - std::min(pred.y1(), gt.y1());
  const double c2 = ew * ew + eh * eh;

  const double da = std::atan(gt.w / gt.h) - std::atan(pred.w / pred.h);
  const double v = (4.0 / (std::numbers::pi * std::numbers::pi)) * da * da;
  // The 1e-9 term keeps identical boxes (IoU = 1, v = 0) off 0/0; it matches
  // the traced formula used in training.
  const double alpha = v / ((1.0 - overlap) + v + 1e-9);

  return 1.0 - (overlap - d2 / c2 - alpha * v);
}

}  // namespace vitlr
