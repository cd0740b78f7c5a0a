#include "vidann/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include "vidann/error.hpp"
#include "vidann/random.hpp"

namespace vidann {

namespace {

constexpr std::uint64_t kBackgroundSalt = 0xB4C6'0001ULL;

double hash01(std::uint64_t seed, std::uint64_t a, std::int64_t b, std::int64_t c) {
  const std::uint64_t h = mix_seed(mix_seed(mix_seed(seed, a), static_cast<std::uint64_t>(b)),
                                   static_cast<std::uint64_t>(c));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Intensity of a pattern at texture coordinates (u, v) in pixels.
double pattern_value(const Pattern& p, double u, double v, std::uint64_t seed, std::uint64_t salt) {
  const double cell = std::max(p.cell, 1.0);
  const auto iu = static_cast<std::int64_t>(std::floor(u / cell));
  const auto iv = static_cast<std::int64_t>(std::floor(v / cell));
  switch (p.kind) {
    case PatternKind::solid:
      return p.low;
    case PatternKind::checker:
      return ((iu + iv) & 1) ? p.high : p.low;
    case PatternKind::stripes_h:
      return (iv & 1) ? p.high : p.low;
    case PatternKind::stripes_v:
      return (iu & 1) ? p.high : p.low;
    case PatternKind::blocks:
      return p.low + (p.high - p.low) * hash01(seed, salt, iu, iv);
  }
  return p.low;
}

std::string_view pattern_name(PatternKind k) {
  switch (k) {
    case PatternKind::solid: return "solid";
    case PatternKind::checker: return "checker";
    case PatternKind::stripes_h: return "stripes_h";
    case PatternKind::stripes_v: return "stripes_v";
    case PatternKind::blocks: return "blocks";
  }
  return "solid";
}

std::optional<PatternKind> pattern_from_name(std::string_view s) {
  for (auto k : {PatternKind::solid, PatternKind::checker, PatternKind::stripes_h, PatternKind::stripes_v,
                 PatternKind::blocks}) {
    if (pattern_name(k) == s) return k;
  }
  return std::nullopt;
}

SceneObject target(int id, Pattern pattern, std::vector<Waypoint> wps) {
  return SceneObject{id, false, pattern, std::move(wps)};
}

SceneObject occluder(int id, Pattern pattern, std::vector<Waypoint> wps) {
  return SceneObject{id, true, pattern, std::move(wps)};
}

Waypoint wp(int frame, double x, double y, double w, double h) { return {frame, {x, y, w, h}}; }

}  // namespace

void validate(const SyntheticSceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8) throw ValidationError("canvas", "canvas too small");
  if (spec.frame_count < 1) throw ValidationError("frames", "frame count must be positive");
  if (spec.noise < 0.0) throw ValidationError("noise", "noise must be non-negative");
  for (const auto& obj : spec.objects) {
    const std::string where = "object " + std::to_string(obj.id);
    if (obj.waypoints.empty()) throw ValidationError(where, "no waypoints");
    for (std::size_t i = 0; i < obj.waypoints.size(); ++i) {
      const auto& w = obj.waypoints[i];
      if (w.frame < 0 || w.frame >= spec.frame_count) throw ValidationError(where, "waypoint frame out of range");
      if (i > 0 && w.frame <= obj.waypoints[i - 1].frame) throw ValidationError(where, "waypoints not ordered in time");
      if (!(w.box.w >= 1.0 && w.box.h >= 1.0) || !is_valid(w.box)) throw ValidationError(where, "box smaller than 1 pixel");
    }
  }
}

std::optional<BoundingBox> object_box_at(const SceneObject& object, int frame) {
  const auto& wps = object.waypoints;
  if (wps.size() == 1) return wps.front().box;
  if (wps.empty() || frame < wps.front().frame || frame > wps.back().frame) return std::nullopt;
  auto next = std::upper_bound(wps.begin(), wps.end(), frame,
                               [](int f, const Waypoint& w) { return f < w.frame; });
  if (next == wps.end()) return wps.back().box;
  const auto& b = *next;
  const auto& a = *(next - 1);
  return linear_interpolate(Keyframe{a.frame, a.box}, Keyframe{b.frame, b.box}, frame);
}

Image render_frame(const SyntheticSceneSpec& spec, std::uint64_t seed, int frame) {
  Image img(spec.width, spec.height);
  std::vector<double> canvas(static_cast<std::size_t>(spec.width) * spec.height);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      canvas[static_cast<std::size_t>(y) * spec.width + x] =
          pattern_value(spec.background, x + 0.5, y + 0.5, seed, kBackgroundSalt);
    }
  }
  auto draw = [&](const SceneObject& obj) {
    const auto box = object_box_at(obj, frame);
    if (!box) return;
    const auto& first = obj.waypoints.front().box;
    const double su = first.w / box->w;
    const double sv = first.h / box->h;
    const long x0 = std::lround(box->x), x1 = std::lround(box->x + box->w);
    const long y0 = std::lround(box->y), y1 = std::lround(box->y + box->h);
    const auto salt = static_cast<std::uint64_t>(obj.id) * 0x9E37ULL + 17;
    for (long y = std::max(0L, y0); y < std::min<long>(spec.height, y1); ++y) {
      const double v = (y + 0.5 - box->y) * sv;
      for (long x = std::max(0L, x0); x < std::min<long>(spec.width, x1); ++x) {
        const double u = (x + 0.5 - box->x) * su;
        canvas[static_cast<std::size_t>(y) * spec.width + x] = pattern_value(obj.pattern, u, v, seed, salt);
      }
    }
  };
  for (const auto& obj : spec.objects) {
    if (!obj.occluder) draw(obj);
  }
  for (const auto& obj : spec.objects) {
    if (obj.occluder) draw(obj);
  }
  Rng noise(mix_seed(seed, 0x5EED'0000ULL + static_cast<std::uint64_t>(frame)));
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    double value = canvas[i];
    if (spec.noise > 0.0) value += spec.noise * noise.normal();
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
  }
  return img;
}

SyntheticVideo synth_generate(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::vector<Image> frames;
  frames.reserve(static_cast<std::size_t>(spec.frame_count));
  for (int f = 0; f < spec.frame_count; ++f) frames.push_back(render_frame(spec, seed, f));
  SyntheticVideo video;
  video.frames = FrameStore::from_frames(std::move(frames), spec.name);
  for (const auto& obj : spec.objects) {
    if (obj.occluder) continue;
    GroundTruthTrack track;
    track.object_id = obj.id;
    for (int f = 0; f < spec.frame_count; ++f) {
      if (auto box = object_box_at(obj, f)) track.boxes[f] = *box;
    }
    video.tracks.push_back(std::move(track));
  }
  return video;
}

SyntheticSceneSpec parse_scene(std::istream& in, const std::string& source) {
  SyntheticSceneSpec spec;
  spec.objects.clear();
  SceneObject* current = nullptr;
  std::string line;
  int line_no = 0;
  auto parse_pattern = [&](std::istringstream& ss) {
    std::string kind;
    Pattern p;
    if (!(ss >> kind >> p.cell >> p.low >> p.high)) throw ParseError(source, line_no, "pattern needs: kind cell low high");
    auto k = pattern_from_name(kind);
    if (!k) throw ParseError(source, line_no, "unknown pattern '" + kind + "'");
    p.kind = *k;
    return p;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    if (key == "end") {
      if (!current) throw ParseError(source, line_no, "'end' without object");
      current = nullptr;
    } else if (key == "object" || key == "occluder") {
      if (current) throw ParseError(source, line_no, "nested object block");
      SceneObject obj;
      obj.occluder = key == "occluder";
      if (!(ss >> obj.id)) throw ParseError(source, line_no, "object needs an integer id");
      spec.objects.push_back(obj);
      current = &spec.objects.back();
    } else if (current) {
      if (key == "pattern") {
        current->pattern = parse_pattern(ss);
      } else if (key == "waypoint") {
        Waypoint w;
        if (!(ss >> w.frame >> w.box.x >> w.box.y >> w.box.w >> w.box.h)) {
          throw ParseError(source, line_no, "waypoint needs: frame x y w h");
        }
        current->waypoints.push_back(w);
      } else {
        throw ParseError(source, line_no, "unknown object key '" + key + "'");
      }
    } else if (key == "name") {
      std::getline(ss >> std::ws, spec.name);
    } else if (key == "canvas") {
      if (!(ss >> spec.width >> spec.height)) throw ParseError(source, line_no, "canvas needs: width height");
    } else if (key == "frames") {
      if (!(ss >> spec.frame_count)) throw ParseError(source, line_no, "frames needs a count");
    } else if (key == "noise") {
      if (!(ss >> spec.noise)) throw ParseError(source, line_no, "noise needs a value");
    } else if (key == "background") {
      spec.background = parse_pattern(ss);
    } else {
      throw ParseError(source, line_no, "unknown key '" + key + "'");
    }
  }
  if (current) throw ParseError(source, line_no, "unterminated object block");
  try {
    validate(spec);
  } catch (const ValidationError& e) {
    throw ParseError(source, line_no, e.what());
  }
  return spec;
}

SyntheticSceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto spec = parse_scene(in, path.string());
  if (spec.name.empty()) spec.name = path.stem().string();
  return spec;
}

void write_scene(std::ostream& out, const SyntheticSceneSpec& spec) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  auto pattern = [&](const Pattern& p) {
    out << pattern_name(p.kind) << ' ' << p.cell << ' ' << p.low << ' ' << p.high << '\n';
  };
  if (!spec.name.empty()) out << "name " << spec.name << '\n';
  out << "canvas " << spec.width << ' ' << spec.height << '\n';
  out << "frames " << spec.frame_count << '\n';
  out << "noise " << spec.noise << '\n';
  out << "background ";
  pattern(spec.background);
  for (const auto& obj : spec.objects) {
    out << '\n' << (obj.occluder ? "occluder " : "object ") << obj.id << '\n';
    out << "  pattern ";
    pattern(obj.pattern);
    for (const auto& w : obj.waypoints) {
      out << "  waypoint " << w.frame << ' ' << w.box.x << ' ' << w.box.y << ' ' << w.box.w << ' ' << w.box.h << '\n';
    }
    out << "end\n";
  }
}

void save_scene(const std::filesystem::path& path, const SyntheticSceneSpec& spec) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_scene(out, spec);
}

std::vector<SyntheticSceneSpec> standard_suite() {
  const Pattern blocks{PatternKind::blocks, 7.0, 20, 235};
  const Pattern coarse{PatternKind::blocks, 9.0, 25, 230};
  const Pattern checker{PatternKind::checker, 8.0, 35, 215};
  const Pattern fine_checker{PatternKind::checker, 6.0, 40, 210};
  const Pattern gray_bar{PatternKind::solid, 1.0, 110, 110};
  const Pattern striped_bar{PatternKind::stripes_v, 5.0, 60, 170};

  std::vector<SyntheticSceneSpec> suite;
  auto scene = [&](std::string name, std::vector<SceneObject> objects) {
    SyntheticSceneSpec s;
    s.name = std::move(name);
    s.objects = std::move(objects);
    suite.push_back(std::move(s));
  };

  scene("zigzag_0", {target(1, blocks, {wp(0, 10, 20, 44, 40), wp(30, 70, 70, 44, 40), wp(60, 120, 30, 44, 40),
                                       wp(99, 140, 90, 44, 40)})});
  scene("zigzag_1", {target(1, checker, {wp(0, 140, 90, 44, 40), wp(25, 90, 20, 44, 40), wp(55, 40, 80, 44, 40),
                                        wp(99, 110, 60, 44, 40)})});
  scene("zigzag_2", {target(1, coarse, {wp(0, 20, 90, 48, 40), wp(40, 80, 30, 48, 40), wp(70, 130, 80, 48, 40),
                                       wp(99, 60, 50, 48, 40)})});
  scene("zigzag_3", {target(1, blocks, {wp(0, 100, 20, 42, 42), wp(20, 60, 60, 42, 42), wp(50, 110, 90, 42, 42),
                                       wp(80, 30, 70, 42, 42), wp(99, 60, 20, 42, 42)})});
  scene("zigzag_4", {target(1, fine_checker, {wp(0, 30, 30, 46, 38), wp(45, 140, 40, 46, 38),
                                             wp(65, 120, 95, 46, 38), wp(99, 20, 80, 46, 38)})});
  scene("zigzag_5", {target(1, coarse, {wp(0, 70, 80, 44, 44), wp(35, 20, 20, 44, 44), wp(60, 100, 10, 44, 44),
                                       wp(99, 140, 80, 44, 44)})});

  scene("scale_0", {target(1, blocks, {wp(0, 20, 30, 40, 36), wp(50, 90, 60, 56, 50), wp(99, 30, 80, 44, 40)})});
  scene("scale_1", {target(1, checker, {wp(0, 120, 70, 56, 50), wp(40, 60, 20, 42, 38), wp(99, 110, 80, 54, 48)})});
  scene("scale_2", {target(1, coarse, {wp(0, 30, 80, 42, 38), wp(30, 90, 20, 50, 46), wp(70, 130, 70, 40, 36),
                                      wp(99, 70, 90, 48, 44)})});
  scene("scale_3", {target(1, blocks, {wp(0, 130, 20, 44, 40), wp(60, 40, 70, 58, 52), wp(99, 100, 40, 46, 42)})});

  scene("distractor_0", {target(1, blocks, {wp(0, 10, 50, 44, 40), wp(50, 80, 60, 44, 40), wp(99, 140, 30, 44, 40)}),
                         target(2, blocks, {wp(0, 140, 60, 44, 40), wp(50, 70, 40, 44, 40), wp(99, 10, 80, 44, 40)})});
  scene("distractor_1", {target(1, checker, {wp(0, 20, 10, 44, 40), wp(45, 80, 80, 44, 40), wp(99, 20, 90, 44, 40)}),
                         target(2, checker, {wp(0, 130, 90, 44, 40), wp(45, 90, 40, 44, 40), wp(99, 140, 10, 44, 40)})});
  scene("distractor_2", {target(1, coarse, {wp(0, 70, 10, 44, 42), wp(40, 60, 90, 44, 42), wp(99, 130, 50, 44, 42)}),
                         target(2, coarse, {wp(0, 20, 90, 44, 42), wp(60, 100, 30, 44, 42), wp(99, 30, 40, 44, 42)})});

  scene("occlusion_0", {target(1, blocks, {wp(0, 10, 50, 44, 40), wp(60, 120, 70, 44, 40), wp(99, 140, 20, 44, 40)}),
                        occluder(9, gray_bar, {wp(0, 70, 0, 52, 144)})});
  scene("occlusion_1", {target(1, checker, {wp(0, 140, 30, 44, 40), wp(50, 60, 80, 44, 40), wp(99, 20, 20, 44, 40)}),
                        occluder(9, striped_bar, {wp(0, 0, 50, 192, 50)})});
  scene("occlusion_2", {target(1, coarse, {wp(0, 20, 20, 46, 40), wp(40, 70, 90, 46, 40), wp(99, 140, 40, 46, 40)}),
                        occluder(9, gray_bar, {wp(0, 200, 40, 60, 70), wp(99, -80, 60, 60, 70)})});
  scene("occlusion_3", {target(1, blocks, {wp(0, 20, 90, 44, 40), wp(30, 60, 20, 44, 40), wp(70, 100, 80, 44, 40),
                                          wp(99, 140, 30, 44, 40)}),
                        occluder(9, striped_bar, {wp(0, 110, 0, 50, 144)})});
  scene("occlusion_4", {target(1, fine_checker, {wp(0, 140, 90, 46, 40), wp(60, 30, 40, 46, 40), wp(99, 80, 10, 46, 40)}),
                        occluder(9, gray_bar, {wp(0, 40, -70, 70, 60), wp(99, 60, 160, 70, 60)})});

  scene("turn_0", {target(1, blocks, {wp(0, 20, 50, 44, 40), wp(25, 120, 50, 44, 40), wp(50, 30, 60, 44, 40),
                                     wp(75, 130, 70, 44, 40), wp(99, 60, 40, 44, 40)})});
  scene("turn_1", {target(1, coarse, {wp(0, 70, 5, 44, 40), wp(30, 80, 100, 44, 40), wp(55, 100, 10, 44, 40),
                                     wp(80, 60, 95, 44, 40), wp(99, 130, 60, 44, 40)})});
  return suite;
}

SyntheticSceneSpec random_scene(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5CE4E));
  SyntheticSceneSpec spec;
  spec.name = "random_" + std::to_string(seed);
  spec.frame_count = 100;
  spec.noise = rng.uniform(2.0, 4.0);
  const int lo = rng.uniform_int(80, 100);
  spec.background = Pattern{PatternKind::blocks, rng.uniform(18.0, 30.0), lo, lo + rng.uniform_int(20, 40)};

  auto random_texture = [&]() {
    const int kind = rng.uniform_int(0, 2);
    if (kind == 0) return Pattern{PatternKind::checker, rng.uniform(6.0, 9.0), rng.uniform_int(20, 50), rng.uniform_int(200, 235)};
    return Pattern{PatternKind::blocks, rng.uniform(6.0, 10.0), rng.uniform_int(15, 40), rng.uniform_int(210, 240)};
  };
  const int targets = rng.uniform_int(1, 2);
  for (int t = 0; t < targets; ++t) {
    SceneObject obj;
    obj.id = t + 1;
    obj.pattern = random_texture();
    const double w = rng.uniform(40.0, 54.0);
    const double h = rng.uniform(36.0, 48.0);
    const int legs = rng.uniform_int(2, 4);
    for (int k = 0; k <= legs; ++k) {
      const int frame = k == legs ? spec.frame_count - 1 : (k * (spec.frame_count - 1)) / legs + (k ? rng.uniform_int(-6, 6) : 0);
      const double scale = rng.uniform(0.85, 1.15);
      const double bw = std::round(w * scale), bh = std::round(h * scale);
      obj.waypoints.push_back(wp(frame, std::round(rng.uniform(0.0, spec.width - bw)),
                                 std::round(rng.uniform(0.0, spec.height - bh)), bw, bh));
    }
    spec.objects.push_back(std::move(obj));
  }
  if (rng.uniform() < 0.6) {
    const Pattern bar = rng.uniform() < 0.5 ? Pattern{PatternKind::solid, 1.0, rng.uniform_int(90, 150), 0}
                                            : Pattern{PatternKind::stripes_v, rng.uniform(4.0, 7.0), 60, 170};
    SceneObject occ;
    occ.id = 9;
    occ.occluder = true;
    occ.pattern = bar;
    if (rng.uniform() < 0.5) {
      const double bw = rng.uniform(40.0, 60.0);
      occ.waypoints.push_back(wp(0, std::round(rng.uniform(20.0, spec.width - bw - 20.0)), 0, std::round(bw), spec.height));
    } else {
      const double bh = rng.uniform(40.0, 60.0);
      occ.waypoints.push_back(wp(0, 0, std::round(rng.uniform(15.0, spec.height - bh - 15.0)), spec.width, std::round(bh)));
    }
    spec.objects.push_back(std::move(occ));
  }
  return spec;
}

SyntheticSceneSpec conditioning_scene() {
  SyntheticSceneSpec spec;
  spec.name = "conditioning";
  spec.frame_count = 101;
  spec.objects = {
      target(1, Pattern{PatternKind::blocks, 8.0, 20, 235}, {wp(0, 10, 8, 46, 42), wp(100, 136, 16, 46, 42)}),
      target(2, Pattern{PatternKind::checker, 7.0, 35, 215}, {wp(0, 10, 92, 46, 42), wp(100, 136, 88, 46, 42)}),
      occluder(9, Pattern{PatternKind::solid, 1.0, 110, 110}, {wp(0, 90, 78, 102, 66)}),
  };
  return spec;
}

SyntheticSceneSpec scene_by_name(const std::string& name) {
  if (name == "conditioning") return conditioning_scene();
  if (name.rfind("random_", 0) == 0) {
    try {
      return random_scene(std::stoull(name.substr(7)));
    } catch (const std::logic_error&) {
      throw ValidationError("scene", "invalid random scene '" + name + "'");
    }
  }
  for (auto& spec : standard_suite()) {
    if (spec.name == name) return spec;
  }
  std::error_code ec;
  if (std::filesystem::is_regular_file(name, ec)) return load_scene(name);
  throw NotFound("unknown scene '" + name + "'");
}

}  // namespace vidann
