#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "scratch.hpp"
#include "vidann/error.hpp"
#include "vidann/image.hpp"
#include "vidann/media.hpp"
#include "vidann/synth.hpp"

using namespace vidann;
using vidann::testing::ScratchDir;

namespace {
Image gradient_image(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = static_cast<std::uint8_t>((x * 7 + y * 3) % 256);
  return img;
}
}  // namespace

TEST_CASE("png and pgm round trip") {
  ScratchDir dir("media");
  const Image img = gradient_image(37, 21);
  write_png(dir / "a.png", img);
  write_pgm(dir / "b.pgm", img);
  CHECK(read_image(dir / "a.png") == img);
  CHECK(read_image(dir / "b.pgm") == img);
  CHECK(read_image_size(dir / "a.png") == std::pair{37, 21});
  const auto bytes = encode_png(img);
  CHECK(decode_image(bytes) == img);
}

TEST_CASE("color pnm converts with luma weights") {
  ScratchDir dir("ppm");
  {
    std::ofstream out(dir / "c.ppm", std::ios::binary);
    out << "P6\n2 1\n255\n";
    const unsigned char px[] = {255, 0, 0, 0, 0, 255};
    out.write(reinterpret_cast<const char*>(px), sizeof px);
  }
  const Image img = read_image(dir / "c.ppm");
  CHECK(img.at(0, 0) == luma(255, 0, 0));
  CHECK(img.at(1, 0) == luma(0, 0, 255));
  CHECK(luma(255, 0, 0) == static_cast<int>(std::lround(0.299 * 255)));
}

TEST_CASE("crop_window resamples with border clamping") {
  Image img(10, 10, 50);
  img.at(9, 9) = 250;
  const ImageF c = crop_window(img, {5.0, 5.0, 10.0, 10});
  CHECK(c.width == 10);
  CHECK(c.at(0, 0) == doctest::Approx(50.0f));
  CHECK(c.at(9, 9) == doctest::Approx(250.0f));
  const ImageF out = crop_window(img, {-100.0, -100.0, 4.0, 4});
  for (float v : out.pixels) CHECK(v == doctest::Approx(50.0f));
  const ImageF full = resample_full(img, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) CHECK(full.at(x, y) == doctest::Approx(float(img.at(x, y))));
}

TEST_CASE("load_frame_sequence") {
  ScratchDir dir("frames");
  for (int i : {10, 2, 1}) write_png(dir / ("f" + std::to_string(i) + ".png"), Image(8, 6, static_cast<std::uint8_t>(i)));
  const auto store = load_frame_sequence(dir.path());
  CHECK(store->frame_count() == 3);
  CHECK(store->width() == 8);
  CHECK(store->frame(0)->at(0, 0) == 1);
  CHECK(store->frame(1)->at(0, 0) == 2);
  CHECK(store->frame(2)->at(0, 0) == 10);
  CHECK_THROWS_AS(store->frame(3), ContractViolation);

  ScratchDir ten("ten");
  for (int i = 0; i < 10; ++i) write_png(ten / ("img" + std::to_string(i) + ".png"), Image(4, 4));
  CHECK(load_frame_sequence(ten.path())->frame_count() == 10);

  ScratchDir empty("empty");
  CHECK_THROWS_WITH_AS(load_frame_sequence(empty.path()), doctest::Contains("no frames"), ValidationError);
  CHECK_THROWS_AS(load_frame_sequence(empty / "missing"), IoError);

  ScratchDir mixed("mixed");
  write_png(mixed / "1.png", Image(64, 48));
  write_png(mixed / "2.png", Image(32, 24));
  CHECK_THROWS_WITH_AS(load_frame_sequence(mixed.path()), doctest::Contains("inconsistent dimensions"), ValidationError);
}

TEST_CASE("MOT ground truth") {
  std::istringstream one("1,3,10,20,30,40,1,-1,-1,-1\n");
  const auto r = parse_mot_ground_truth(one);
  REQUIRE(r.tracks.size() == 1);
  CHECK(r.tracks[0].object_id == 3);
  CHECK(r.tracks[0].boxes.at(0) == BoundingBox{10, 20, 30, 40});

  std::istringstream two("1,5,0,0,4,4,1\n2,5,1,0,4,4,1\n2,6,0,0,0,4,1\n");
  const auto r2 = parse_mot_ground_truth(two);
  REQUIRE(r2.tracks.size() == 1);
  CHECK(r2.tracks[0].boxes.size() == 2);
  CHECK(r2.skipped_rows == 1);

  std::istringstream bad("1,5,0\n");
  try {
    parse_mot_ground_truth(bad, "gt.txt");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
  }
  std::istringstream bad2("1,5,0,0,4,4\nx,5,0,0,4,4\n");
  try {
    parse_mot_ground_truth(bad2, "gt.txt");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("MOT round trip") {
  std::vector<GroundTruthTrack> tracks(2);
  tracks[0].object_id = 1;
  tracks[1].object_id = 7;
  for (int f = 0; f < 20; ++f) {
    tracks[0].boxes[f] = {f * 1.25, 3.5, 10.125, 12.0};
    if (f % 3) tracks[1].boxes[f] = {100.0 - f / 3.0, f * 0.1, 5.5, 6.75};
  }
  std::ostringstream out;
  write_mot_ground_truth(out, tracks);
  std::istringstream in(out.str());
  const auto back = parse_mot_ground_truth(in).tracks;
  REQUIRE(back.size() == 2);
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(back[t].object_id == tracks[t].object_id);
    REQUIRE(back[t].boxes.size() == tracks[t].boxes.size());
    for (const auto& [f, b] : tracks[t].boxes) {
      const auto& c = back[t].boxes.at(f);
      CHECK(c.x == doctest::Approx(b.x).epsilon(1e-6));
      CHECK(c.y == doctest::Approx(b.y).epsilon(1e-6));
      CHECK(c.w == doctest::Approx(b.w).epsilon(1e-6));
      CHECK(c.h == doctest::Approx(b.h).epsilon(1e-6));
    }
  }
}

TEST_CASE("single object track") {
  std::istringstream five("1,2,3,4\n1,2,3,4\n0,0,0,0\n5,6,7,8\n9\t9\t9\t9\n");
  const auto t = parse_single_object_track(five);
  CHECK(t.boxes.size() == 4);
  CHECK_FALSE(t.contains(2));
  CHECK(t.boxes.at(4) == BoundingBox{9, 9, 9, 9});
  std::istringstream empty("");
  CHECK_THROWS_AS(parse_single_object_track(empty), ParseError);
  std::istringstream bad("1,2,3,4\n1,2,3\n");
  try {
    parse_single_object_track(bad);
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("synthetic scenes") {
  SyntheticSceneSpec spec;
  spec.name = "static";
  spec.frame_count = 10;
  spec.noise = 0.0;
  SceneObject obj;
  obj.id = 1;
  obj.pattern = {PatternKind::checker, 6.0, 0, 255};
  obj.waypoints = {{0, {20, 30, 40, 30}}};
  spec.objects = {obj};
  const auto v = synth_generate(spec, 1);
  REQUIRE(v.tracks.size() == 1);
  CHECK(v.tracks[0].boxes.size() == 10);
  for (const auto& [f, b] : v.tracks[0].boxes) CHECK(b == BoundingBox{20, 30, 40, 30});

  SceneObject mover = obj;
  mover.waypoints = {{0, {0, 0, 20, 20}}, {10, {50, 0, 20, 20}}};
  spec.objects = {mover};
  spec.frame_count = 11;
  const auto m = synth_generate(spec, 2);
  CHECK(m.tracks[0].boxes.at(5).x == doctest::Approx(25.0));

  const auto a = synth_generate(standard_suite().front(), 9);
  const auto b = synth_generate(standard_suite().front(), 9);
  for (int f = 0; f < a.frames->frame_count(); f += 7) CHECK(*a.frames->frame(f) == *b.frames->frame(f));
}

TEST_CASE("rendered rectangle matches rounded ground truth") {
  SyntheticSceneSpec spec;
  spec.name = "bounds";
  spec.frame_count = 12;
  spec.noise = 0.0;
  spec.background = {PatternKind::solid, 1.0, 0, 0};
  SceneObject obj;
  obj.id = 4;
  obj.pattern = {PatternKind::solid, 1.0, 200, 200};
  obj.waypoints = {{0, {10.3, 12.6, 30.2, 20.7}}, {11, {70.8, 40.1, 41.5, 25.2}}};
  spec.objects = {obj};
  const auto v = synth_generate(spec, 3);
  for (int f = 0; f < spec.frame_count; ++f) {
    const Image& img = *v.frames->frame(f);
    int x0 = img.width, y0 = img.height, x1 = -1, y1 = -1;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (img.at(x, y) > 100) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    const BoundingBox& b = v.tracks[0].boxes.at(f);
    CHECK(x0 == std::lround(b.x));
    CHECK(y0 == std::lround(b.y));
    CHECK(x1 + 1 == std::lround(b.x + b.w));
    CHECK(y1 + 1 == std::lround(b.y + b.h));
  }
}

TEST_CASE("scene files round trip") {
  for (const auto& spec : standard_suite()) {
    std::ostringstream out;
    write_scene(out, spec);
    std::istringstream in(out.str());
    const auto back = parse_scene(in);
    std::ostringstream again;
    write_scene(again, back);
    CHECK(again.str() == out.str());
  }
  CHECK(standard_suite().size() == 20);
  std::istringstream bad("frames 10\nobject 1\n  pattern solid 1 0 0\n  waypoint 5 0 0 10 10\n  waypoint 2 0 0 10 10\nend\n");
  CHECK_THROWS(parse_scene(bad));
}
