#pragma once

#include "vitlr/box.hpp"
#include "vitlr/tape.hpp"
#include "vitlr/tensor.hpp"

namespace vitlr {

// Per-clip output of the detector for the current frame: m query slots, each
// carrying a box (pixels) and a state distribution over l real states plus
// one background class at index l.
struct Prediction {
  Tensor centers;  // [m, 2] (cx, cy)
  Tensor heights;  // [m]
  Tensor widths;   // [m]
  Tensor scores;   // [m, l+1], rows sum to 1

  int num_queries() const { return centers.extent(0); }
  int num_classes() const { return scores.extent(1); }  // l + 1
  Box box(int q) const {
    return Box{centers(q, 0), centers(q, 1), widths[q], heights[q]};
  }
};

// Tape handles for the same quantities, used while training.
struct TracedPrediction {
  Var boxes_px;  // [m, 4] (cx, cy, w, h) in pixels
  Var scores;    // [m, l+1]
};

// Extracts plain tensors from the traced handles.
Prediction prediction_from_traced(const Tape& tape, const TracedPrediction& traced);

}  // namespace vitlr
