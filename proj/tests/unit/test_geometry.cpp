#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "vidann/error.hpp"
#include "vidann/geometry.hpp"

using namespace vidann;

namespace {
BoundingBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-50.0, 150.0), size(0.5, 80.0);
  return {pos(rng), pos(rng), size(rng), size(rng)};
}
}  // namespace

TEST_CASE("iou examples") {
  CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
  CHECK(iou({0, 0, 10, 10}, {20, 20, 5, 5}) == 0.0);
  CHECK(iou({0, 0, 10, 10}, {5, 0, 10, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou({0, 0, 10, 10}, {5, 0, 10, 10}) == doctest::Approx(oracle::iou_pixels(0, 0, 10, 10, 5, 0, 10, 10)));
  // touching edges only
  CHECK(iou({0, 0, 10, 10}, {10, 0, 10, 10}) == 0.0);
}

TEST_CASE("iou matches pixel counting on integer boxes") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pos(0, 30), size(1, 20);
  for (int i = 0; i < 300; ++i) {
    const int a[4] = {pos(rng), pos(rng), size(rng), size(rng)};
    const int b[4] = {pos(rng), pos(rng), size(rng), size(rng)};
    const double got = iou({double(a[0]), double(a[1]), double(a[2]), double(a[3])},
                           {double(b[0]), double(b[1]), double(b[2]), double(b[3])});
    CHECK(got == doctest::Approx(oracle::iou_pixels(a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3])).epsilon(1e-12));
  }
}

TEST_CASE("iou properties") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const BoundingBox a = random_box(rng), b = random_box(rng);
    CHECK(iou(a, b) == iou(b, a));
    CHECK(iou(a, a) == 1.0);
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("linear_interpolate") {
  const Keyframe k1{0, {0, 0, 10, 10}};
  const Keyframe k2{10, {20, 0, 30, 10}};
  const BoundingBox mid = linear_interpolate(k1, k2, 5);
  CHECK(mid.x == doctest::Approx(10.0));
  CHECK(mid.y == doctest::Approx(0.0));
  CHECK(mid.w == doctest::Approx(20.0));
  CHECK(mid.h == doctest::Approx(10.0));
  CHECK(linear_interpolate(k1, k2, 0) == k1.box);
  CHECK(linear_interpolate(k1, k2, 10) == k2.box);
  CHECK_THROWS_AS(linear_interpolate(k1, k2, 11), ContractViolation);
  CHECK_THROWS_AS(linear_interpolate(k2, k1, 5), ContractViolation);

  std::mt19937_64 rng(6);
  for (int i = 0; i < 500; ++i) {
    const Keyframe a{3, random_box(rng)}, b{17, random_box(rng)};
    CHECK(linear_interpolate(a, b, 3) == a.box);
    CHECK(linear_interpolate(a, b, 17) == b.box);
    const Keyframe c{17, a.box};
    const BoundingBox same = linear_interpolate(a, c, 9);
    CHECK(same.x == doctest::Approx(a.box.x));
    CHECK(same.w == doctest::Approx(a.box.w));
  }
}

TEST_CASE("template and search windows") {
  const CropWindow t = template_window({0, 0, 100, 100});
  CHECK(t.side == doctest::Approx(200.0));
  CHECK(t.center_x == 50.0);
  CHECK(t.center_y == 50.0);
  CHECK(t.output_resolution == kTemplateResolution);
  CHECK(template_window({0, 0, 127, 127}, 0.0).side == doctest::Approx(127.0));
  const CropWindow u = template_window({10, 20, 40, 20});
  CHECK(u.side == doctest::Approx(std::sqrt(3500.0)).epsilon(1e-12));
  CHECK(u.center_x == 30.0);
  CHECK(u.center_y == 30.0);

  const CropWindow s1 = search_window({0, 0, 100, 100}, 1.0);
  CHECK(s1.side == t.side);
  CHECK(s1.center_x == t.center_x);
  CHECK(s1.output_resolution == kSearchResolution);
  CHECK(search_window({0, 0, 100, 100}, 2.0).side == doctest::Approx(400.0));
  CHECK(search_window({3, 4, 5, 6}) == search_window({3, 4, 5, 6}));

  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const BoundingBox b = random_box(rng);
    const double p = (b.w + b.h) / 4.0;
    const double side = template_window(b).side;
    CHECK(side * side == doctest::Approx((b.w + 2 * p) * (b.h + 2 * p)).epsilon(1e-9));
    CHECK(side == doctest::Approx(oracle::template_side(b.w, b.h)).epsilon(1e-12));
  }
}

TEST_CASE("blend_weight") {
  CHECK(blend_weight(0, 20) == 1.0);
  CHECK(blend_weight(20, 20) == 0.0);
  CHECK(blend_weight(10, 20) == doctest::Approx(0.25));
  CHECK(blend_weight(1, 20) == doctest::Approx(0.9025));
  CHECK(blend_weight(21, 20) == 0.0);
  CHECK(blend_weight(0, 0) == 1.0);
  CHECK(blend_weight(1, 0) == 0.0);
  double prev = 1.0;
  for (int i = 0; i <= 400; ++i) {
    const double dt = i * 0.1;
    const double w = blend_weight(dt, 25.0);
    CHECK(w == doctest::Approx(oracle::blend_weight_poly(dt, 25.0)).epsilon(1e-12));
    CHECK(w <= prev);
    prev = w;
  }
}

TEST_CASE("blend_boxes") {
  const BoundingBox g{0, 0, 10, 10}, v{10, 0, 20, 10};
  CHECK(blend_boxes(g, v, 1.0) == g);
  CHECK(blend_boxes(g, v, 0.0) == v);
  const BoundingBox m = blend_boxes(g, v, 0.5);
  CHECK(m.x == doctest::Approx(5.0));
  CHECK(m.y == doctest::Approx(0.0));
  CHECK(m.w == doctest::Approx(15.0));
  CHECK(m.h == doctest::Approx(10.0));
}

TEST_CASE("box validation") {
  CHECK(is_valid({0, 0, 1, 1}));
  CHECK_FALSE(is_valid({0, 0, 0, 1}));
  CHECK_FALSE(is_valid({0, 0, 1, -1}));
  CHECK_FALSE(is_valid({std::nan(""), 0, 1, 1}));
  try {
    validate(BoundingBox{0, 0, -2, 3});
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "w");
  }
}
