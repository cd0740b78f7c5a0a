#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "vidann/error.hpp"
#include "vidann/interp.hpp"
#include "vidann/synth.hpp"

using namespace vidann;

namespace {

SyntheticSceneSpec moving_scene(int frames) {
  SyntheticSceneSpec spec;
  spec.name = "mover";
  spec.frame_count = frames;
  spec.noise = 2.0;
  SceneObject obj;
  obj.id = 1;
  obj.pattern = {PatternKind::blocks, 7.0, 20, 235};
  obj.waypoints = {{0, {20, 40, 36, 36}}, {frames / 2, {70, 60, 36, 36}}, {frames - 1, {40, 70, 36, 36}}};
  spec.objects = {obj};
  return spec;
}

struct Fixture {
  SyntheticVideo video = synth_generate(moving_scene(40), 5);
  std::shared_ptr<const GradientExtractor> extractor = std::make_shared<GradientExtractor>();
  VisualInterpolator interp{video.frames, extractor};
  const GroundTruthTrack& truth() const { return video.tracks[0]; }
  Keyframe key(int f) const { return {f, truth().boxes.at(f)}; }
};

Track track_from(std::initializer_list<std::pair<int, BoundingBox>> boxes) {
  Track t;
  for (const auto& [f, b] : boxes) t.points[f] = {b, Provenance::visual, 1.0};
  return t;
}

}  // namespace

TEST_CASE("select_templates") {
  const std::vector<Keyframe> ks{{0, {0, 0, 1, 1}}, {10, {0, 0, 1, 1}}, {20, {0, 0, 1, 1}}, {30, {0, 0, 1, 1}}};
  auto frames = [](const std::vector<Keyframe>& v) {
    std::vector<int> out;
    for (const auto& k : v) out.push_back(k.frame);
    return out;
  };
  CHECK(frames(select_templates(ks, 12, 2)) == std::vector<int>{10, 20});
  CHECK(frames(select_templates(ks, 15, 1)) == std::vector<int>{10});  // tie goes to the earlier
  CHECK(frames(select_templates(ks, 29, 3)) == std::vector<int>{10, 20, 30});
  CHECK(frames(select_templates(ks, 5, 10)) == std::vector<int>{0, 10, 20, 30});
  CHECK_THROWS_AS(select_templates(std::span<const Keyframe>{}, 3, 2), ContractViolation);
  CHECK_THROWS_AS(select_templates(ks, 3, 0), ContractViolation);
}

TEST_CASE("normalize_keyframes") {
  const auto n = normalize_keyframes({{5, {0, 0, 2, 2}}, {1, {0, 0, 3, 3}}});
  CHECK(n.front().frame == 1);
  CHECK_THROWS_AS(normalize_keyframes({{5, {0, 0, 2, 2}}, {5, {0, 0, 3, 3}}}), ValidationError);
  CHECK_THROWS_AS(normalize_keyframes({{5, {0, 0, 0, 2}}}), ValidationError);
}

TEST_CASE("interp config validation") {
  InterpConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.templates = 0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg = {};
  cfg.delta = -1.0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg = {};
  cfg.delta = 0.0;
  CHECK_NOTHROW(validate(cfg));
}

TEST_CASE("recall_at counts strictly above the threshold") {
  GroundTruthTrack gt;
  for (int f = 0; f < 5; ++f) gt.boxes[f] = {0, 0, 10, 10};
  const Track t = track_from({{0, {0, 0, 8, 10}}, {1, {0, 0, 6, 10}}, {2, {0, 0, 7.1, 10}}, {3, {0, 0, 9, 10}}});
  CHECK(recall_at(t, gt, 0.7) == doctest::Approx(0.75));
  const Track edge = track_from({{0, {0, 0, 7, 10}}});
  CHECK(iou(edge.box(0), gt.boxes.at(0)) == 0.7);
  CHECK(recall_at(edge, gt, 0.7) == 0.0);
  CHECK(recall_at(t, gt, 0.7, {1, 2}) == doctest::Approx(0.5));
  const Track far = track_from({{9, {0, 0, 10, 10}}});
  CHECK_THROWS_AS(recall_at(far, gt, 0.7), ValidationError);
}

TEST_CASE("keyframes are reproduced exactly by every strategy") {
  Fixture fx;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 4; ++trial) {
    std::set<int> frames;
    const int n = 1 + static_cast<int>(rng() % 4);
    while (static_cast<int>(frames.size()) < n) frames.insert(static_cast<int>(rng() % 40));
    std::vector<Keyframe> keys;
    for (int f : frames) keys.push_back({f, {10.0 + f, 20.0 + f * 0.5, 30.0 + trial, 25.0}});
    for (auto strategy : {TrackStrategy::linear, TrackStrategy::tracking, TrackStrategy::visual}) {
      const Track t = fx.interp.interpolate_track(keys, {0, 39}, strategy);
      CHECK(t.points.size() == 40);
      CHECK(t.keyframes == keys);
      for (const auto& k : keys) {
        CHECK(t.box(k.frame) == k.box);
        CHECK(t.points.at(k.frame).provenance == Provenance::human);
        CHECK(t.points.at(k.frame).confidence == 1.0);
      }
    }
  }
}

TEST_CASE("linear strategy interpolates and holds outside the keyframes") {
  Fixture fx;
  const std::vector<Keyframe> keys{{10, {0, 0, 10, 10}}, {20, {20, 0, 30, 10}}};
  const Track t = fx.interp.interpolate_track(keys, {0, 39}, TrackStrategy::linear);
  CHECK(t.box(15).x == doctest::Approx(10.0));
  CHECK(t.box(15).w == doctest::Approx(20.0));
  CHECK(t.points.at(15).provenance == Provenance::geometric);
  CHECK(t.box(0) == keys[0].box);
  CHECK(t.box(39) == keys[1].box);
}

TEST_CASE("visual interpolation follows a textured object") {
  Fixture fx;
  const std::vector<Keyframe> keys{fx.key(0), fx.key(39)};
  const Track visual = fx.interp.interpolate_track(keys, {0, 39}, TrackStrategy::visual);
  const Track linear = fx.interp.interpolate_track(keys, {0, 39}, TrackStrategy::linear);
  const double rv = recall_at(visual, fx.truth(), 0.7);
  const double rl = recall_at(linear, fx.truth(), 0.7);
  CHECK(rv >= 0.9);
  CHECK(rv > rl);
  // frames next to a keyframe lean on the geometric box
  CHECK(visual.points.at(1).provenance == Provenance::blended);
}

TEST_CASE("a single keyframe extrapolates over the whole range") {
  Fixture fx;
  const std::vector<Keyframe> keys{fx.key(20)};
  const Track t = fx.interp.interpolate_track(keys, {0, 39}, TrackStrategy::visual);
  CHECK(t.points.size() == 40);
  CHECK(recall_at(t, fx.truth(), 0.5) >= 0.8);
  const auto fwd = fx.interp.extrapolate(keys[0], 25);
  CHECK(fwd.size() == 5);
  CHECK(fwd.begin()->first == 21);
  const auto back = fx.interp.extrapolate(keys[0], 17);
  CHECK(back.size() == 3);
  CHECK(back.begin()->first == 17);
}

TEST_CASE("segments cover only interior frames") {
  Fixture fx;
  const auto seg = fx.interp.interpolate_segment(fx.key(5), fx.key(12));
  CHECK(seg.size() == 6);
  CHECK(seg.begin()->first == 6);
  CHECK(seg.rbegin()->first == 11);
  CHECK(fx.interp.interpolate_segment(fx.key(5), fx.key(6)).empty());
}

TEST_CASE("incremental recomputation equals a full recomputation") {
  Fixture fx;
  std::vector<Keyframe> keys{fx.key(0), fx.key(39)};
  for (auto strategy : {TrackStrategy::linear, TrackStrategy::tracking, TrackStrategy::visual}) {
    const Track before = fx.interp.interpolate_track(keys, {0, 39}, strategy);
    auto more = keys;
    more.insert(more.begin() + 1, fx.key(17));
    const Track incremental = fx.interp.interpolate_track(more, {0, 39}, strategy, &before);
    const Track full = fx.interp.interpolate_track(more, {0, 39}, strategy);
    CHECK(incremental == full);
    auto fewer = more;
    fewer.erase(fewer.begin());
    CHECK(fx.interp.interpolate_track(fewer, {0, 39}, strategy, &full) == fx.interp.interpolate_track(fewer, {0, 39}, strategy));
  }
}

TEST_CASE("track csv") {
  Track t;
  t.points[0] = {{1, 2, 3, 4}, Provenance::human, 1.0};
  t.points[1] = {{1.5, 2, 3, 4}, Provenance::blended, 0.25};
  std::ostringstream out;
  write_track_csv(out, t);
  const std::string s = out.str();
  CHECK(s.rfind("frame,x,y,w,h,provenance,confidence\n", 0) == 0);
  CHECK(s.find("\n1,1.5,2,3,4,blended,0.25\n") != std::string::npos);
  CHECK(provenance_from_string(to_string(Provenance::geometric)) == Provenance::geometric);
  CHECK(track_strategy_from_string("tracking") == TrackStrategy::tracking);
  CHECK_THROWS(track_strategy_from_string("bogus"));
}
