#include "vitlr/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "vitlr/rng.hpp"
#include "vitlr/tensor.hpp"

namespace vitlr {

using nlohmann::json;

namespace {

constexpr double kLightRealHeight = 1.5;  // meters, housing
constexpr double kLightAspect = 0.4;      // housing width / height
constexpr int kOcclusionSpanLen = 2;

struct Rgb {
  double r, g, b;
};

uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace

// ---- PPM ------------------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const ImageU8& img) {
  check_arg(img.width > 0 && img.height > 0 &&
                img.rgb.size() == static_cast<size_t>(img.width) * img.height * 3,
            "write_ppm: malformed image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

namespace {

int ppm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments between header fields.
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
    }
    c = in.get();
  }
  int value = 0;
  bool any = false;
  while (std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw std::runtime_error("malformed PPM header in " + path);
  return value;
}

}  // namespace

ImageU8 load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing frame file: " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') {
    throw std::runtime_error("not a P6 PPM: " + path.string());
  }
  const int w = ppm_token(in, path.string());
  const int h = ppm_token(in, path.string());
  const int maxval = ppm_token(in, path.string());
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error("unsupported PPM header in " + path.string());
  }
  ImageU8 img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw std::runtime_error("truncated PPM data in " + path.string());
  }
  return img;
}

// ---- names ------------------------------------------------------------------

std::string state_name(int state) {
  static const char* base[] = {"red", "yellow", "green", "off"};
  check_arg(state >= 0, "state index must be >= 0");
  if (state < 4) return base[state];
  return "s" + std::to_string(state);
}

int state_index(const std::string& name, int num_states) {
  for (int i = 0; i < num_states; ++i) {
    if (state_name(i) == name) return i;
  }
  throw std::runtime_error("unknown state '" + name + "' for a " + std::to_string(num_states) +
                           "-state palette");
}

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Easy: return "easy";
    case Scenario::Occlusion: return "occlusion";
    case Scenario::Truncation: return "truncation";
    case Scenario::Blur: return "blur";
    case Scenario::Small: return "small";
  }
  return "?";
}

Scenario scenario_from_name(const std::string& name) {
  for (Scenario s : {Scenario::Easy, Scenario::Occlusion, Scenario::Truncation, Scenario::Blur,
                     Scenario::Small}) {
    if (name == scenario_name(s)) return s;
  }
  throw std::runtime_error("unknown scenario tag '" + name + "'");
}

const char* distance_name(DistanceBucket d) {
  switch (d) {
    case DistanceBucket::Near: return "lt20";
    case DistanceBucket::Mid: return "20to50";
    case DistanceBucket::Far: return "50to100";
  }
  return "?";
}

DistanceBucket distance_from_name(const std::string& name) {
  for (DistanceBucket d : {DistanceBucket::Near, DistanceBucket::Mid, DistanceBucket::Far}) {
    if (name == distance_name(d)) return d;
  }
  throw std::runtime_error("unknown distance bucket '" + name + "'");
}

const char* profile_name(Profile p) {
  switch (p) {
    case Profile::Easy: return "easy";
    case Profile::Mixed: return "mixed";
    case Profile::ScenarioSweep: return "scenario-sweep";
  }
  return "?";
}

Profile profile_from_name(const std::string& name) {
  for (Profile p : {Profile::Easy, Profile::Mixed, Profile::ScenarioSweep}) {
    if (name == profile_name(p)) return p;
  }
  throw std::runtime_error("unknown profile '" + name + "' (easy|mixed|scenario-sweep)");
}

bool ClipSpec::has_tag(Scenario s) const {
  return std::find(tags.begin(), tags.end(), s) != tags.end();
}

CameraModel clip_camera(int height, int width) {
  CameraModel cam;
  cam.fx = cam.fy = 2.5 * height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

// ---- renderer ---------------------------------------------------------------

namespace {

// Bilinear value noise on an 8 px lattice, output in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(uint64_t seed, int width, int height, int cell = 8)
      : cell_(cell), lw_(width / cell + 3), lh_(height / cell + 3), values_(lw_ * lh_) {
    SplitMix64 rng(seed);
    for (auto& v : values_) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }

  double at(double x, double y) const {
    const double gx = x / cell_, gy = y / cell_;
    const int ix = static_cast<int>(std::floor(gx)), iy = static_cast<int>(std::floor(gy));
    const double fx = gx - ix, fy = gy - iy;
    const auto v = [&](int a, int b) {
      const int ca = std::clamp(a, 0, lw_ - 1), cb = std::clamp(b, 0, lh_ - 1);
      return static_cast<double>(values_[static_cast<size_t>(cb) * lw_ + ca]);
    };
    const double top = v(ix, iy) * (1 - fx) + v(ix + 1, iy) * fx;
    const double bot = v(ix, iy + 1) * (1 - fx) + v(ix + 1, iy + 1) * fx;
    return top * (1 - fy) + bot * fy;
  }

 private:
  int cell_, lw_, lh_;
  std::vector<float> values_;
};

struct SceneStyle {
  ValueNoise noise;
  double tint_r, tint_g, tint_b;
  int height;

  double base_at(int y) const {
    const double sky_band = 0.38 * height;
    if (y < sky_band) return 150.0 - 35.0 * (y / sky_band);
    return 95.0;
  }

  Rgb background(int x, int y, double offset_x = 0.0, double offset_y = 0.0) const {
    const double n = noise.at(x + offset_x, y + offset_y) * 18.0;
    const double base = base_at(y);
    return Rgb{base + tint_r + n, base + tint_g + n * 0.8, base + tint_b + n * 0.9};
  }
};

SceneStyle make_style(const ClipSpec& spec) {
  SplitMix64 rng(SplitMix64::mix(spec.seed, 0xBA5EBA5Eull));
  return SceneStyle{ValueNoise(rng.next(), spec.width, spec.height), rng.uniform(-8.0, 8.0),
                    rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0), spec.height};
}

void fill_background(ImageU8& img, const SceneStyle& style) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const Rgb c = style.background(x, y);
      uint8_t* p = img.px(x, y);
      p[0] = clamp_u8(c.r);
      p[1] = clamp_u8(c.g);
      p[2] = clamp_u8(c.b);
    }
  }
}

void draw_disc(ImageU8& img, double cx, double cy, double radius, const Rgb& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + radius)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy > r2) continue;
      uint8_t* p = img.px(x, y);
      p[0] = clamp_u8(color.r);
      p[1] = clamp_u8(color.g);
      p[2] = clamp_u8(color.b);
    }
  }
}

// slot per state: red top, yellow mid, green bottom, off dark; extra states
// light the middle slot in a distinct color.
int lit_slot(int state) {
  switch (state) {
    case 0: return 0;
    case 1: return 1;
    case 2: return 2;
    case 3: return -1;
    default: return 1;
  }
}

Rgb lit_color(int state) {
  switch (state) {
    case 0: return {236, 48, 44};
    case 1: return {242, 203, 54};
    case 2: return {56, 224, 96};
    case 4: return {70, 100, 240};
    default: return {238, 238, 238};
  }
}

void draw_light(ImageU8& img, const Box& box, int state) {
  const double x_lo = box.x1(), x_hi = box.x2(), y_lo = box.y1(), y_hi = box.y2();
  const int px0 = std::max(0, static_cast<int>(std::floor(x_lo)));
  const int px1 = std::min(img.width - 1, static_cast<int>(std::ceil(x_hi)) - 1);
  const int py0 = std::max(0, static_cast<int>(std::floor(y_lo)));
  const int py1 = std::min(img.height - 1, static_cast<int>(std::ceil(y_hi)) - 1);
  const double corner = 0.28 * box.w;
  for (int y = py0; y <= py1; ++y) {
    for (int x = px0; x <= px1; ++x) {
      // rounded corners: skip pixels outside the corner radius
      const double ex = std::max({x_lo + corner - (x + 0.5), (x + 0.5) - (x_hi - corner), 0.0});
      const double ey = std::max({y_lo + corner - (y + 0.5), (y + 0.5) - (y_hi - corner), 0.0});
      if (ex * ex + ey * ey > corner * corner) continue;
      uint8_t* p = img.px(x, y);
      p[0] = 26;
      p[1] = 27;
      p[2] = 30;
    }
  }
  const double slot_pitch = box.h / 3.1;
  const double radius = std::max(0.9, 0.36 * std::min(box.w, box.h / 3.0));
  for (int slot = 0; slot < 3; ++slot) {
    const double sy = box.cy + (slot - 1) * slot_pitch;
    const Rgb color = (slot == lit_slot(state)) ? lit_color(state) : Rgb{12, 12, 14};
    draw_disc(img, box.cx, sy, radius, color);
  }
}

// Camouflage patch: background texture sampled at an offset, so a hidden
// light leaves no single-frame evidence.
void draw_occluder(ImageU8& img, const SceneStyle& style, const Box& area) {
  const int x0 = std::max(0, static_cast<int>(std::floor(area.x1())));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(area.x2())));
  const int y0 = std::max(0, static_cast<int>(std::floor(area.y1())));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(area.y2())));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Rgb c = style.background(x, y, 37.0, 23.0);
      uint8_t* p = img.px(x, y);
      p[0] = clamp_u8(c.r);
      p[1] = clamp_u8(c.g);
      p[2] = clamp_u8(c.b);
    }
  }
}

ImageU8 box_blur3(const ImageU8& src) {
  ImageU8 out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      int acc[3] = {0, 0, 0};
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, src.height - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, src.width - 1);
          const uint8_t* p = src.px(xx, yy);
          acc[0] += p[0];
          acc[1] += p[1];
          acc[2] += p[2];
        }
      }
      uint8_t* q = out.px(x, y);
      q[0] = static_cast<uint8_t>((acc[0] + 4) / 9);
      q[1] = static_cast<uint8_t>((acc[1] + 4) / 9);
      q[2] = static_cast<uint8_t>((acc[2] + 4) / 9);
    }
  }
  return out;
}

struct OcclusionPlan {
  std::vector<int> span_starts;  // each span covers [start, start + len)
  double drift_x = 0.0, drift_y = 0.0;

  bool occluded(int frame) const {
    for (int s : span_starts) {
      if (frame >= s && frame < s + kOcclusionSpanLen) return true;
    }
    return false;
  }
  int span_start_before(int frame) const {
    for (int s : span_starts) {
      if (frame >= s && frame < s + kOcclusionSpanLen) return s;
    }
    return frame;
  }
};

OcclusionPlan make_occlusion_plan(const ClipSpec& spec, SplitMix64& rng) {
  OcclusionPlan plan;
  if (!spec.has_tag(Scenario::Occlusion) || spec.n_frames < 6) return plan;
  // Short spans separated by visible frames: a multi-frame window always has
  // recent unoccluded evidence.
  int start = 3 + rng.uniform_int(0, 1);
  while (start + kOcclusionSpanLen <= spec.n_frames - 1) {
    plan.span_starts.push_back(start);
    start += kOcclusionSpanLen + 2 + rng.uniform_int(0, 1);
  }
  plan.drift_x = rng.uniform(-1.5, 1.5);
  plan.drift_y = rng.uniform(-1.0, 1.0);
  return plan;
}

struct Phantom {
  double x, y, w, h, dx, dy;
};

std::vector<Phantom> make_phantoms(const ClipSpec& spec, SplitMix64& rng,
                                   const std::vector<Box>& light_boxes_f0) {
  std::vector<Phantom> phantoms;
  if (!spec.has_tag(Scenario::Occlusion) || light_boxes_f0.empty()) return phantoms;
  const double w = light_boxes_f0[0].w * 1.7, h = light_boxes_f0[0].h * 1.35;
  for (int k = 0; k < 2; ++k) {
    for (int attempt = 0; attempt < 30; ++attempt) {
      const double px = rng.uniform(10.0, spec.width - 10.0);
      const double py = rng.uniform(10.0, spec.height - 10.0);
      bool clear = true;
      for (const Box& b : light_boxes_f0) {
        const double d = std::hypot(px - b.cx, py - b.cy);
        if (d < 2.5 * std::max(b.w, b.h) + std::max(w, h)) clear = false;
      }
      if (clear) {
        phantoms.push_back({px, py, w, h, rng.uniform(-1.0, 1.0), rng.uniform(-0.7, 0.7)});
        break;
      }
    }
  }
  return phantoms;
}

Box light_box_at(const ClipSpec& spec, const CameraModel& cam, const LightSpec& light, int t,
                 bool* in_front = nullptr) {
  const double z = light.z - spec.ego_speed * t;
  if (in_front) *in_front = z > 1.0;
  const double zz = std::max(z, 1.0);
  const double u = cam.fx * (light.x - spec.lateral_drift * t) / zz + cam.cx;
  const double v = cam.fy * light.y / zz + cam.cy;
  const double hpx = std::max(3.0, cam.fy * kLightRealHeight / zz);
  const double wpx = std::max(2.0, hpx * kLightAspect);
  return Box{u, v, wpx, hpx};
}

void validate_spec(const ClipSpec& spec) {
  check_arg(spec.n_frames >= 1, "n_frames must be >= 1");
  check_arg(spec.height >= 32 && spec.width >= 32, "clip extents must be >= 32");
  check_arg(spec.num_states >= 2 && spec.num_states <= 6, "num_states must be in [2, 6]");
  check_arg(static_cast<int>(spec.lights.size()) <= spec.max_lights,
            "lights count " + std::to_string(spec.lights.size()) + " exceeds max " +
                std::to_string(spec.max_lights));
  for (const LightSpec& l : spec.lights) {
    check_arg(l.z > 1.0, "light must start in front of the camera (z > 1)");
    const int states[2] = {l.schedule.initial, l.schedule.switch_state};
    for (int s : states) {
      check_arg(s >= 0 && s < spec.num_states,
                "schedule state " + std::to_string(s) + " outside the " +
                    std::to_string(spec.num_states) + "-state palette");
    }
  }
}

}  // namespace

ClipData generate_clip(const ClipSpec& spec) {
  validate_spec(spec);
  const CameraModel cam = clip_camera(spec.height, spec.width);
  const SceneStyle style = make_style(spec);
  SplitMix64 rng(SplitMix64::mix(spec.seed, 0x0CC10DE5ull));
  const OcclusionPlan occlusion = make_occlusion_plan(spec, rng);

  std::vector<Box> boxes_f0;
  for (const LightSpec& l : spec.lights) boxes_f0.push_back(light_box_at(spec, cam, l, 0));
  const std::vector<Phantom> phantoms = make_phantoms(spec, rng, boxes_f0);

  ClipData data;
  data.num_states = spec.num_states;
  data.has_poses = true;
  if (!spec.lights.empty()) {
    data.map_light.xyz = {spec.lights[0].x, spec.lights[0].y, spec.lights[0].z};
    data.map_light.lane = "ego";
  }

  // far-to-near draw order so near lights overdraw far ones
  std::vector<int> draw_order(spec.lights.size());
  for (size_t i = 0; i < draw_order.size(); ++i) draw_order[i] = static_cast<int>(i);
  std::sort(draw_order.begin(), draw_order.end(),
            [&](int a, int b) { return spec.lights[a].z > spec.lights[b].z; });

  for (int t = 0; t < spec.n_frames; ++t) {
    EgoPose pose;
    pose.position = {spec.lateral_drift * t, 0.0, spec.ego_speed * t};
    data.poses.push_back(pose);

    ImageU8 img(spec.width, spec.height);
    fill_background(img, style);

    FrameAnnotation ann;
    ann.lights.resize(spec.lights.size());
    for (size_t i = 0; i < spec.lights.size(); ++i) {
      bool in_front = true;
      const Box box = light_box_at(spec, cam, spec.lights[i], t, &in_front);
      ann.lights[i] = {box, spec.lights[i].schedule.state_at(t), in_front};
    }
    for (int i : draw_order) {
      if (ann.lights[i].visible) draw_light(img, ann.lights[i].box, ann.lights[i].state);
    }

    if (!spec.lights.empty() && occlusion.occluded(t)) {
      const Box& b = ann.lights[0].box;
      const int age = t - occlusion.span_start_before(t);
      Box patch{b.cx + occlusion.drift_x * age, b.cy + occlusion.drift_y * age, b.w * 1.8,
                b.h * 1.4};
      draw_occluder(img, style, patch);
      ann.lights[0].visible = false;
    }
    for (const Phantom& ph : phantoms) {
      draw_occluder(img, style, Box{ph.x + ph.dx * t, ph.y + ph.dy * t, ph.w, ph.h});
    }

    if (spec.has_tag(Scenario::Blur)) img = box_blur3(img);

    data.frames.push_back(std::move(img));
    data.annotation.frames.push_back(std::move(ann));
  }
  return data;
}

ImageU8 render_background_frame(const ClipSpec& spec, int frame) {
  (void)frame;  // background is static; kept for symmetry with generate_clip
  validate_spec(spec);
  const SceneStyle style = make_style(spec);
  ImageU8 img(spec.width, spec.height);
  fill_background(img, style);
  if (spec.has_tag(Scenario::Blur)) img = box_blur3(img);
  return img;
}

// ---- clip io ----------------------------------------------------------------

namespace {

std::string frame_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03d.ppm", index);
  return buf;
}

}  // namespace

void write_clip(const std::filesystem::path& dir, const ClipData& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create clip directory " + dir.string());
  check_arg(data.frames.size() == data.annotation.frames.size(),
            "write_clip: frame/annotation count mismatch");
  check_arg(!data.has_poses || data.poses.size() == data.frames.size(),
            "write_clip: pose count mismatch");

  json manifest;
  manifest["clip_id"] = data.clip_id;
  manifest["fps"] = data.fps;
  manifest["num_states"] = data.num_states;
  json frames = json::array();
  for (size_t i = 0; i < data.frames.size(); ++i) {
    const std::string name = frame_file_name(static_cast<int>(i));
    write_ppm(dir / name, data.frames[i]);
    json frame;
    frame["image"] = name;
    json lights = json::array();
    for (const LightAnnotation& l : data.annotation.frames[i].lights) {
      lights.push_back({{"cx", l.box.cx},
                        {"cy", l.box.cy},
                        {"w", l.box.w},
                        {"h", l.box.h},
                        {"state", state_name(l.state)},
                        {"visible", l.visible}});
    }
    frame["lights"] = std::move(lights);
    if (data.has_poses) {
      const EgoPose& p = data.poses[i];
      frame["pose"] = {{"t", {p.position[0], p.position[1], p.position[2]}},
                       {"r", std::vector<double>(p.rotation.begin(), p.rotation.end())}};
    }
    frames.push_back(std::move(frame));
  }
  manifest["frames"] = std::move(frames);
  if (data.has_poses) {
    manifest["map_light"] = {
        {"xyz", {data.map_light.xyz[0], data.map_light.xyz[1], data.map_light.xyz[2]}},
        {"lane", data.map_light.lane}};
  }

  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest.dump(1) << "\n";
}

namespace {

[[noreturn]] void manifest_error(const std::filesystem::path& dir, const std::string& what) {
  throw std::runtime_error(dir.string() + "/manifest.json: " + what);
}

double require_number(const json& j, const std::string& field, const std::filesystem::path& dir) {
  if (!j.contains(field) || !j[field].is_number()) {
    manifest_error(dir, "missing or non-numeric field '" + field + "'");
  }
  return j[field].get<double>();
}

}  // namespace

ClipData load_clip(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("missing manifest: " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    manifest_error(dir, std::string("parse error: ") + e.what());
  }

  ClipData data;
  if (!manifest.contains("clip_id") || !manifest["clip_id"].is_string()) {
    manifest_error(dir, "missing string field 'clip_id'");
  }
  data.clip_id = manifest["clip_id"].get<std::string>();
  data.fps = require_number(manifest, "fps", dir);
  if (!manifest.contains("num_states") || !manifest["num_states"].is_number_integer()) {
    manifest_error(dir, "missing integer field 'num_states'");
  }
  data.num_states = manifest["num_states"].get<int>();
  if (data.num_states < 2 || data.num_states > 6) {
    manifest_error(dir, "num_states must be in [2, 6], got " + std::to_string(data.num_states));
  }
  if (!manifest.contains("frames") || !manifest["frames"].is_array()) {
    manifest_error(dir, "missing array field 'frames'");
  }

  int pose_count = 0;
  for (size_t fi = 0; fi < manifest["frames"].size(); ++fi) {
    const json& frame = manifest["frames"][fi];
    const std::string ctx = "frames[" + std::to_string(fi) + "]";
    if (!frame.contains("image") || !frame["image"].is_string()) {
      manifest_error(dir, ctx + ".image must be a string");
    }
    data.frames.push_back(load_ppm(dir / frame["image"].get<std::string>()));

    FrameAnnotation ann;
    if (!frame.contains("lights") || !frame["lights"].is_array()) {
      manifest_error(dir, ctx + ".lights must be an array");
    }
    for (size_t li = 0; li < frame["lights"].size(); ++li) {
      const json& lj = frame["lights"][li];
      const std::string lctx = ctx + ".lights[" + std::to_string(li) + "]";
      LightAnnotation l;
      l.box.cx = require_number(lj, "cx", dir);
      l.box.cy = require_number(lj, "cy", dir);
      l.box.w = require_number(lj, "w", dir);
      l.box.h = require_number(lj, "h", dir);
      if (l.box.w <= 0.0) {
        manifest_error(dir, lctx + ".w must be > 0, got " + std::to_string(l.box.w));
      }
      if (l.box.h <= 0.0) {
        manifest_error(dir, lctx + ".h must be > 0, got " + std::to_string(l.box.h));
      }
      if (!lj.contains("state") || !lj["state"].is_string()) {
        manifest_error(dir, lctx + ".state must be a string");
      }
      try {
        l.state = state_index(lj["state"].get<std::string>(), data.num_states);
      } catch (const std::exception& e) {
        manifest_error(dir, lctx + ".state: " + e.what());
      }
      if (!lj.contains("visible") || !lj["visible"].is_boolean()) {
        manifest_error(dir, lctx + ".visible must be a boolean");
      }
      l.visible = lj["visible"].get<bool>();
      ann.lights.push_back(l);
    }
    data.annotation.frames.push_back(std::move(ann));

    if (frame.contains("pose")) {
      const json& pj = frame["pose"];
      if (!pj.contains("t") || !pj["t"].is_array() || pj["t"].size() != 3 ||
          !pj.contains("r") || !pj["r"].is_array() || pj["r"].size() != 9) {
        manifest_error(dir, ctx + ".pose must have t[3] and r[9]");
      }
      EgoPose pose;
      for (int i = 0; i < 3; ++i) pose.position[i] = pj["t"][i].get<double>();
      for (int i = 0; i < 9; ++i) pose.rotation[i] = pj["r"][i].get<double>();
      data.poses.push_back(pose);
      ++pose_count;
    }
  }
  if (pose_count > 0 && pose_count != static_cast<int>(data.frames.size())) {
    manifest_error(dir, "pose present on some frames but not all");
  }
  data.has_poses = pose_count > 0 && manifest.contains("map_light");
  if (manifest.contains("map_light")) {
    const json& ml = manifest["map_light"];
    if (!ml.contains("xyz") || !ml["xyz"].is_array() || ml["xyz"].size() != 3) {
      manifest_error(dir, "map_light.xyz must be an array of 3 numbers");
    }
    for (int i = 0; i < 3; ++i) data.map_light.xyz[i] = ml["xyz"][i].get<double>();
    data.map_light.lane = ml.value("lane", std::string("ego"));
  }
  return data;
}

// ---- profile sampling ---------------------------------------------------------

namespace {

void distance_range(DistanceBucket d, double* lo, double* hi) {
  switch (d) {
    case DistanceBucket::Near: *lo = 10.0; *hi = 20.0; return;
    case DistanceBucket::Mid: *lo = 20.0; *hi = 48.0; return;
    case DistanceBucket::Far: *lo = 50.0; *hi = 100.0; return;
  }
}

}  // namespace

ClipSpec sample_clip_spec(uint64_t seed, Scenario scenario, DistanceBucket distance, int n_frames,
                          int height, int width, int num_states) {
  if (scenario == Scenario::Small) distance = DistanceBucket::Far;
  SplitMix64 rng(seed);
  ClipSpec spec;
  spec.seed = seed;
  spec.n_frames = n_frames;
  spec.height = height;
  spec.width = width;
  spec.num_states = num_states;
  spec.tags = {scenario};
  spec.distance = distance;

  double zlo = 10.0, zhi = 20.0;
  distance_range(distance, &zlo, &zhi);

  const bool easy = scenario == Scenario::Easy;
  if (easy && rng.chance(0.3)) {
    spec.ego_speed = 0.0;
  } else {
    spec.ego_speed = rng.uniform(easy ? 0.05 : 0.1, easy ? 0.35 : 0.5);
  }
  // Keep the whole trajectory inside the distance bucket.
  const double travel = spec.ego_speed * (n_frames - 1);
  if (zlo + travel > zhi - 1.0) spec.ego_speed = (zhi - zlo - 1.0) / (2.0 * (n_frames - 1));

  const CameraModel cam = clip_camera(height, width);
  const int num_lights = rng.chance(easy ? 0.3 : 0.4) ? 2 : 1;

  for (int li = 0; li < num_lights; ++li) {
    LightSpec light;
    bool placed = false;
    for (int attempt = 0; attempt < 80 && !placed; ++attempt) {
      const double z0 = rng.uniform(zlo + spec.ego_speed * (n_frames - 1), zhi);
      const double z_last = z0 - spec.ego_speed * (n_frames - 1);
      const double h_last = cam.fy * kLightRealHeight / z_last;
      const double w_last = h_last * kLightAspect;
      const double mu = w_last / 2 + 4.0, mv = h_last / 2 + 4.0;
      const double u0 = rng.uniform(mu, width - mu);
      const double v0 = rng.uniform(mv, std::min(cam.cy - 2.0, height - mv));
      light.x = (u0 - cam.cx) * z0 / cam.fx;
      light.y = (v0 - cam.cy) * z0 / cam.fy;
      light.z = z0;

      ClipSpec probe = spec;
      probe.lights = {light};
      bool ok = true;
      for (int t = 0; t < n_frames && ok; ++t) {
        const Box b = light_box_at(probe, cam, light, t);
        if (b.x1() < 1 || b.x2() > width - 1 || b.y1() < 1 || b.y2() > height - 1) ok = false;
        for (const LightSpec& other : spec.lights) {
          const Box ob = light_box_at(probe, cam, other, t);
          if (std::hypot(b.cx - ob.cx, b.cy - ob.cy) < 1.3 * (b.w + ob.w)) ok = false;
        }
      }
      placed = ok;
    }
    // A placement failure is acceptable for secondary lights.
    if (!placed && li > 0) continue;

    light.schedule.initial = rng.uniform_int(0, num_states - 1);
    if (rng.chance(easy ? 0.25 : 0.3) && n_frames >= 5) {
      light.schedule.switch_frame = rng.uniform_int(2, n_frames - 2);
      light.schedule.switch_state =
          (light.schedule.initial + 1 + rng.uniform_int(0, num_states - 2)) % num_states;
    }
    spec.lights.push_back(light);
  }

  if (scenario == Scenario::Truncation && !spec.lights.empty()) {
    // Shift the first light so its box clips the image edge at the end of
    // the clip while the center stays inside.
    LightSpec& light = spec.lights[0];
    const double z_last = light.z - spec.ego_speed * (n_frames - 1);
    const double h_last = cam.fy * kLightRealHeight / z_last;
    const double w_last = h_last * kLightAspect;
    if (rng.chance(0.6)) {
      const bool left = rng.chance(0.5);
      const double overhang = rng.uniform(0.15, 0.4) * w_last;
      const double u_target = left ? (w_last / 2 - overhang) : (width - w_last / 2 + overhang);
      light.x = (u_target - cam.cx) * z_last / cam.fx + spec.lateral_drift * (n_frames - 1);
    } else {
      const double overhang = rng.uniform(0.15, 0.4) * h_last;
      const double v_target = h_last / 2 - overhang;
      light.y = (v_target - cam.cy) * z_last / cam.fy;
    }
  }
  return spec;
}

// ---- dataset -------------------------------------------------------------------

const std::vector<IndexEntry>& DatasetIndex::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::runtime_error("unknown split '" + name + "' (train|valid|test)");
}

DatasetIndex generate_dataset(Profile profile, int count, uint64_t seed,
                              const std::filesystem::path& out) {
  check_arg(count >= 10, "dataset count must be >= 10, got " + std::to_string(count));
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create dataset directory " + out.string());

  const int valid_n = count / 10;
  const int test_n = count / 5;
  const int train_n = count - valid_n - test_n;  // 70% rounded down, remainder here

  const Scenario sweep[4] = {Scenario::Occlusion, Scenario::Truncation, Scenario::Blur,
                             Scenario::Small};
  const DistanceBucket buckets[3] = {DistanceBucket::Near, DistanceBucket::Mid,
                                     DistanceBucket::Far};

  DatasetIndex index;
  for (int i = 0; i < count; ++i) {
    const uint64_t clip_seed = SplitMix64::mix(seed, static_cast<uint64_t>(i));
    SplitMix64 pick(SplitMix64::mix(seed, 0x9100DD00ull + static_cast<uint64_t>(i)));

    Scenario scenario = Scenario::Easy;
    DistanceBucket distance = DistanceBucket::Near;
    switch (profile) {
      case Profile::Easy:
        scenario = Scenario::Easy;
        distance = pick.chance(0.6) ? DistanceBucket::Near : DistanceBucket::Mid;
        break;
      case Profile::Mixed: {
        const int s = pick.uniform_int(0, 4);
        scenario = (s == 0) ? Scenario::Easy : sweep[s - 1];
        distance = buckets[pick.uniform_int(0, 2)];
        break;
      }
      case Profile::ScenarioSweep:
        scenario = sweep[i % 4];
        distance = buckets[(i / 4) % 3];
        break;
    }

    ClipSpec spec = sample_clip_spec(clip_seed, scenario, distance);
    ClipData data = generate_clip(spec);
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%05d", i);
    data.clip_id = name;

    const char* split = i < train_n ? "train" : (i < train_n + valid_n ? "valid" : "test");
    const std::string rel = std::string(split) + "/" + name;
    write_clip(out / rel, data);

    IndexEntry entry{rel, {scenario_name(scenario)}, distance_name(spec.distance),
                     spec.n_frames};
    if (i < train_n) {
      index.train.push_back(std::move(entry));
    } else if (i < train_n + valid_n) {
      index.valid.push_back(std::move(entry));
    } else {
      index.test.push_back(std::move(entry));
    }
  }
  write_index(out / "index.json", index);
  return index;
}

namespace {

json entries_to_json(const std::vector<IndexEntry>& entries) {
  json arr = json::array();
  for (const IndexEntry& e : entries) {
    arr.push_back({{"dir", e.dir}, {"tags", e.tags}, {"distance", e.distance},
                   {"n_frames", e.n_frames}});
  }
  return arr;
}

std::vector<IndexEntry> entries_from_json(const json& arr, const std::string& split) {
  if (!arr.is_array()) throw std::runtime_error("index split '" + split + "' must be an array");
  std::vector<IndexEntry> out;
  for (const json& e : arr) {
    IndexEntry entry;
    entry.dir = e.at("dir").get<std::string>();
    entry.tags = e.at("tags").get<std::vector<std::string>>();
    entry.distance = e.at("distance").get<std::string>();
    entry.n_frames = e.at("n_frames").get<int>();
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace

void write_index(const std::filesystem::path& path, const DatasetIndex& index) {
  json j;
  j["train"] = entries_to_json(index.train);
  j["valid"] = entries_to_json(index.valid);
  j["test"] = entries_to_json(index.test);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write index " + path.string());
  out << j.dump(1) << "\n";
}

DatasetIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing dataset index: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": parse error: " + e.what());
  }
  DatasetIndex index;
  index.train = entries_from_json(j.value("train", json::array()), "train");
  index.valid = entries_from_json(j.value("valid", json::array()), "valid");
  index.test = entries_from_json(j.value("test", json::array()), "test");
  return index;
}

}  // namespace vitlr
