#pragma once

namespace vitlr {

// Axis-aligned box, center + extents, in pixels.
struct Box {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

// A labelled ground-truth instance.
struct GroundTruth {
  Box box;
  int state = 0;
};

// Intersection over union in [0, 1]. Both boxes must have positive extents.
double iou(const Box& a, const Box& b);

// Complete-IoU loss, >= 0, zero iff the boxes coincide:
//   1 - (IoU - d^2/c^2 - alpha*v)
// d = center distance, c = enclosing-box diagonal, v penalizes aspect-ratio
// mismatch, alpha = v / ((1 - IoU) + v) with alpha = 0 when v = 0.
double ciou_loss(const Box& pred, const Box& gt);

}  // namespace vitlr
