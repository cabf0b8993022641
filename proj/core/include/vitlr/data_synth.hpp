#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vitlr/box.hpp"
#include "vitlr/egolane.hpp"

namespace vitlr {

// 8-bit RGB image, row-major.
struct ImageU8 {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;

  ImageU8() = default;
  ImageU8(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {}
  uint8_t* px(int x, int y) { return rgb.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const uint8_t* px(int x, int y) const {
    return rgb.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
};

// Binary PPM (P6, 8-bit). Bit-exact roundtrip.
void write_ppm(const std::filesystem::path& path, const ImageU8& img);
ImageU8 load_ppm(const std::filesystem::path& path);

// State palette: "red", "yellow", "green", "off", then "s4", "s5", ...
std::string state_name(int state);
int state_index(const std::string& name, int num_states);

enum class Scenario { Easy, Occlusion, Truncation, Blur, Small };
const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

// Nominal distance interval of the rendered lights; farther means smaller
// (near 24-48 px, mid 10-24 px, far 4-10 px box height at height=128).
enum class DistanceBucket { Near, Mid, Far };  // <20 m, 20-50 m, 50-100 m
const char* distance_name(DistanceBucket d);
DistanceBucket distance_from_name(const std::string& name);

struct StateSchedule {
  int initial = 0;
  int switch_frame = -1;  // -1: no switch
  int switch_state = 0;

  int state_at(int frame) const {
    return (switch_frame >= 0 && frame >= switch_frame) ? switch_state : initial;
  }
};

// A light fixed in the world; the ego camera approaches it. Camera-frame
// world coordinates at frame 0: x right, y down, z forward, meters.
struct LightSpec {
  double x = 0.0;
  double y = -1.0;
  double z = 15.0;
  StateSchedule schedule;
};

struct ClipSpec {
  uint64_t seed = 0;
  int n_frames = 10;
  int height = 128;
  int width = 256;
  int num_states = 4;
  int max_lights = 16;  // model query budget
  std::vector<LightSpec> lights;
  double ego_speed = 0.3;      // meters per frame along +z
  double lateral_drift = 0.0;  // meters per frame along +x
  std::vector<Scenario> tags{Scenario::Easy};
  DistanceBucket distance = DistanceBucket::Near;

  bool has_tag(Scenario s) const;
};

struct LightAnnotation {
  Box box;
  int state = 0;
  bool visible = true;
};

struct FrameAnnotation {
  std::vector<LightAnnotation> lights;
};

struct Annotation {
  std::vector<FrameAnnotation> frames;
};

struct ClipData {
  std::string clip_id = "clip";
  double fps = 15.0;
  int num_states = 4;
  std::vector<ImageU8> frames;
  Annotation annotation;
  std::vector<EgoPose> poses;  // one per frame
  MapLight map_light;          // world position of the ego-lane light
  bool has_poses = false;
};

// The camera the generator renders with: fx = fy = 2.5 * height, principal
// point at the image center.
CameraModel clip_camera(int height, int width);

// Deterministic render: same spec, byte-identical output. Lights are
// rounded-rect housings with three disc slots (lit slot by state) over a
// value-noise background. The occlusion tag hides one light behind a moving
// camouflage patch for short spans (ground truth kept, visibility cleared);
// blur applies a 3x3 box filter.
ClipData generate_clip(const ClipSpec& spec);

// Background-only render through the same post pipeline; used to check that
// annotated boxes land on rendered content.
ImageU8 render_background_frame(const ClipSpec& spec, int frame);

void write_clip(const std::filesystem::path& dir, const ClipData& data);
ClipData load_clip(const std::filesystem::path& dir);

enum class Profile { Easy, Mixed, ScenarioSweep };
const char* profile_name(Profile p);
Profile profile_from_name(const std::string& name);

// Samples the world-side randomness of one clip (positions, schedules,
// speeds) for the given scenario/distance; rejection-samples so boxes stay
// in frame except under the truncation tag.
ClipSpec sample_clip_spec(uint64_t seed, Scenario scenario, DistanceBucket distance,
                          int n_frames = 10, int height = 128, int width = 256,
                          int num_states = 4);

struct IndexEntry {
  std::string dir;  // relative to the dataset root
  std::vector<std::string> tags;
  std::string distance;
  int n_frames = 0;
};

struct DatasetIndex {
  std::vector<IndexEntry> train, valid, test;

  const std::vector<IndexEntry>& split(const std::string& name) const;
};

// Emits train/valid/test at 70/10/20 (rounded down, remainder to train)
// under `out`, plus index.json. scenario-sweep cycles the four scenario tags
// for equal-sized buckets and cycles distances within each tag.
DatasetIndex generate_dataset(Profile profile, int count, uint64_t seed,
                              const std::filesystem::path& out);

void write_index(const std::filesystem::path& path, const DatasetIndex& index);
DatasetIndex load_index(const std::filesystem::path& path);

}  // namespace vitlr
