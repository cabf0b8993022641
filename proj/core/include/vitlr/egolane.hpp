#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vitlr/box.hpp"
#include "vitlr/metrics_types.hpp"

namespace vitlr {

// Pinhole camera, no distortion. Pixel u grows right, v grows down.
struct CameraModel {
  double fx = 0.0, fy = 0.0;  // focal lengths, px
  double cx = 0.0, cy = 0.0;  // principal point, px
  int width = 0, height = 0;

  void validate() const;
};

// World-to-camera pose. rotation is row-major 3x3, camera looks along +Z.
struct EgoPose {
  std::array<double, 3> position{0.0, 0.0, 0.0};
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};

  // Orthonormal within 1e-6 and det = +1.
  void validate() const;
};

// Surveyed world position of the ego-lane traffic light.
struct MapLight {
  std::array<double, 3> xyz{0.0, 0.0, 0.0};
  std::string lane;
};

struct PixelPoint {
  double u = 0.0, v = 0.0;
};

// p_cam = R * (p_world - position); behind-camera (z <= 0.1 m) yields
// nullopt, a signaled outcome rather than a failure.
std::optional<PixelPoint> project(const std::array<double, 3>& p_world, const EgoPose& pose,
                                  const CameraModel& cam);

// Candidates are detections whose box center lies within `radius` of the
// projected point; the closest wins, ties broken by higher confidence, then
// lower index. nullopt when nothing qualifies.
std::optional<Detection> select_ego_light(const std::vector<Detection>& dets,
                                          const PixelPoint& projected, double radius);

// One output record per evaluable frame. state == -1 means "none".
struct EgoRecord {
  int frame = 0;
  int state = -1;
  std::optional<double> distance_px;
};

// Produces the current frame's detections from a window of `n` frames
// (oldest first). Either a trained model or the oracle stub.
using WindowDetector = std::function<std::vector<Detection>(int current_frame)>;

// Slides a window of the last n frames over the clip; for each evaluable
// frame projects the map light with that frame's pose, selects among the
// detections, and records the chosen state. An off-image or behind-camera
// projection yields "none" for that frame.
std::vector<EgoRecord> egolane_pipeline(int clip_frames, int window, const WindowDetector& detect,
                                        const std::vector<EgoPose>& poses,
                                        const MapLight& map_light, const CameraModel& cam,
                                        double radius);

}  // namespace vitlr
