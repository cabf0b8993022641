#include "vitlr/egolane.hpp"

#include <cmath>

#include "vitlr/tensor.hpp"

namespace vitlr {

namespace {

constexpr double kMinDepth = 0.1;  // meters; closer counts as behind-camera

}  // namespace

void CameraModel::validate() const {
  check_arg(fx > 0.0 && fy > 0.0, "camera focal lengths must be > 0");
  check_arg(width > 0 && height > 0, "camera image extents must be > 0");
  check_arg(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height,
            "principal point must lie within the image bounds");
}

void EgoPose::validate() const {
  const auto& r = rotation;
  // R * R^T == I within 1e-6.
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[i * 3 + k] * r[j * 3 + k];
      const double expected = i == j ? 1.0 : 0.0;
      check_arg(std::abs(dot - expected) <= 1e-6,
                "pose rotation is not orthonormal (row " + std::to_string(i) + " . row " +
                    std::to_string(j) + " = " + std::to_string(dot) + ")");
    }
  }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  check_arg(std::abs(det - 1.0) <= 1e-6, "pose rotation determinant must be +1, got " +
                                             std::to_string(det));
}

std::optional<PixelPoint> project(const std::array<double, 3>& p_world, const EgoPose& pose,
                                  const CameraModel& cam) {
  cam.validate();
  pose.validate();
  const double rel[3] = {p_world[0] - pose.position[0], p_world[1] - pose.position[1],
                         p_world[2] - pose.position[2]};
  double p_cam[3];
  for (int i = 0; i < 3; ++i) {
    p_cam[i] = pose.rotation[i * 3 + 0] * rel[0] + pose.rotation[i * 3 + 1] * rel[1] +
               pose.rotation[i * 3 + 2] * rel[2];
  }
  if (p_cam[2] <= kMinDepth) return std::nullopt;
  return PixelPoint{cam.fx * p_cam[0] / p_cam[2] + cam.cx,
                    cam.fy * p_cam[1] / p_cam[2] + cam.cy};
}

std::optional<Detection> select_ego_light(const std::vector<Detection>& dets,
                                          const PixelPoint& projected, double radius) {
  check_arg(radius > 0.0, "selection radius must be > 0");
  int best = -1;
  double best_dist = 0.0;
  for (size_t i = 0; i < dets.size(); ++i) {
    const double du = dets[i].box.cx - projected.u;
    const double dv = dets[i].box.cy - projected.v;
    const double dist = std::sqrt(du * du + dv * dv);
    if (dist > radius) continue;
    if (best < 0 || dist < best_dist ||
        (dist == best_dist && dets[i].confidence > dets[best].confidence)) {
      best = static_cast<int>(i);
      best_dist = dist;
    }
  }
  if (best < 0) return std::nullopt;
  return dets[best];
}

std::vector<EgoRecord> egolane_pipeline(int clip_frames, int window, const WindowDetector& detect,
                                        const std::vector<EgoPose>& poses,
                                        const MapLight& map_light, const CameraModel& cam,
                                        double radius) {
  check_arg(window >= 1, "window must be >= 1");
  check_arg(clip_frames >= window, "clip has " + std::to_string(clip_frames) +
                                       " frames, need at least " + std::to_string(window));
  check_arg(static_cast<int>(poses.size()) == clip_frames,
            "pose count " + std::to_string(poses.size()) + " does not match frame count " +
                std::to_string(clip_frames));
  std::vector<EgoRecord> records;
  for (int current = window - 1; current < clip_frames; ++current) {
    EgoRecord rec;
    rec.frame = current;
    const auto projected = project(map_light.xyz, poses[current], cam);
    const bool on_image = projected && projected->u >= 0.0 && projected->u <= cam.width &&
                          projected->v >= 0.0 && projected->v <= cam.height;
    if (on_image) {
      const auto chosen = select_ego_light(detect(current), *projected, radius);
      if (chosen) {
        rec.state = chosen->state;
        const double du = chosen->box.cx - projected->u;
        const double dv = chosen->box.cy - projected->v;
        rec.distance_px = std::sqrt(du * du + dv * dv);
      }
    }
    records.push_back(rec);
  }
  return records;
}

}  // namespace vitlr
