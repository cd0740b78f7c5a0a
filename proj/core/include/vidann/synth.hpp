#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vidann/geometry.hpp"
#include "vidann/media.hpp"

namespace vidann {

enum class PatternKind : std::uint8_t { solid, checker, stripes_h, stripes_v, blocks };

struct Pattern {
  PatternKind kind = PatternKind::solid;
  double cell = 8.0;  // texture period in pixels (object-relative for objects)
  int low = 0;
  int high = 255;
};

struct Waypoint {
  int frame = 0;
  BoundingBox box;
};

struct SceneObject {
  int id = 0;
  bool occluder = false;  // drawn above targets, never reported as ground truth
  Pattern pattern;
  std::vector<Waypoint> waypoints;  // ordered by frame; exists between first and last, always if only one
};

struct SyntheticSceneSpec {
  std::string name;
  int width = 192;
  int height = 144;
  int frame_count = 100;
  double noise = 3.0;  // std-dev of per-pixel gaussian noise, in gray levels
  Pattern background{PatternKind::blocks, 24.0, 90, 130};
  std::vector<SceneObject> objects;
};

struct SyntheticVideo {
  std::shared_ptr<FrameStore> frames;
  std::vector<GroundTruthTrack> tracks;  // one per non-occluder object, ordered as in the spec
};

/// Throws ValidationError for unordered waypoints, boxes under 1 px, or frames out of range.
void validate(const SyntheticSceneSpec& spec);

/// Box of an object at a frame (center and size interpolated between waypoints), if present.
/// An object with a single waypoint is static and present in every frame.
std::optional<BoundingBox> object_box_at(const SceneObject& object, int frame);

/// Deterministic for a given (spec, seed). Ground truth is exact by construction: the rendered
/// rectangle covers pixels [round(x), round(x + w)) x [round(y), round(y + h)).
SyntheticVideo synth_generate(const SyntheticSceneSpec& spec, std::uint64_t seed);

/// Renders a single frame without building a store.
Image render_frame(const SyntheticSceneSpec& spec, std::uint64_t seed, int frame);

/// Line-oriented scene description; see docs/formats.md.
SyntheticSceneSpec parse_scene(std::istream& in, const std::string& source = "<stream>");
SyntheticSceneSpec load_scene(const std::filesystem::path& path);
void write_scene(std::ostream& out, const SyntheticSceneSpec& spec);
void save_scene(const std::filesystem::path& path, const SyntheticSceneSpec& spec);

/// The 20-scene evaluation suite: piecewise-linear motion with direction changes, scale
/// changes, crossing look-alike distractors and occluders. Scenes whose name starts with
/// "occlusion" contain an occluder.
std::vector<SyntheticSceneSpec> standard_suite();

/// Randomized scene (1-2 targets, optional occluder) used to produce ranking-head training data.
SyntheticSceneSpec random_scene(std::uint64_t seed);

/// Two targets in one video: a stable object A (id 1) and an object B (id 2) that is hidden by
/// an occluder during the second half of the candidate window.
SyntheticSceneSpec conditioning_scene();

/// Suite scene name, "random_<seed>", "conditioning", or a path to a scene file.
SyntheticSceneSpec scene_by_name(const std::string& name);

}  // namespace vidann
