#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "scratch.hpp"
#include "vidann/error.hpp"
#include "vidann/features.hpp"
#include "vidann/synth.hpp"

using namespace vidann;
using vidann::testing::ScratchDir;

TEST_CASE("cross_correlate matches the quadruple loop exactly") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 8), ch(1, 4);
  for (int i = 0; i < 200; ++i) {
    const int c = ch(rng);
    const int sh = dim(rng), sw = dim(rng);
    const int th = std::uniform_int_distribution<int>(1, sh)(rng);
    const int tw = std::uniform_int_distribution<int>(1, sw)(rng);
    const FeatureMap t = oracle::random_map(rng, th, tw, c);
    const FeatureMap s = oracle::random_map(rng, sh, sw, c);
    const ScoreMap got = cross_correlate(t, s);
    const auto want = oracle::correlate(t, s);
    REQUIRE(got.height == sh - th + 1);
    REQUIRE(got.width == sw - tw + 1);
    REQUIRE(got.values.size() == want.size());
    for (std::size_t k = 0; k < want.size(); ++k) CHECK(got.values[k] == want[k]);
  }
}

TEST_CASE("cross_correlate is linear in the template") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 50; ++i) {
    const FeatureMap a = oracle::random_map(rng, 3, 3, 4);
    const FeatureMap b = oracle::random_map(rng, 3, 3, 4);
    const FeatureMap s = oracle::random_map(rng, 7, 6, 4);
    FeatureMap sum = a;
    for (std::size_t k = 0; k < sum.values.size(); ++k) sum.values[k] = a.values[k] + b.values[k];
    const ScoreMap ra = cross_correlate(a, s), rb = cross_correlate(b, s), rs = cross_correlate(sum, s);
    for (std::size_t k = 0; k < rs.values.size(); ++k) {
      CHECK(rs.values[k] == doctest::Approx(ra.values[k] + rb.values[k]).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(cross_correlate(FeatureMap(4, 4, 2), FeatureMap(3, 5, 2)), ContractViolation);
  CHECK_THROWS_AS(cross_correlate(FeatureMap(2, 2, 2), FeatureMap(3, 3, 3)), ContractViolation);
}

TEST_CASE("fuse_templates example and algebra") {
  FeatureMap a(1, 2, 2), b(1, 2, 2);
  a.values = {1, 5, 3, 2};
  b.values = {4, 0, 1, 6};
  const FeatureMap ab[] = {a, b};
  CHECK(fuse_templates(ab).values == std::vector<float>{4, 5, 3, 6});

  std::mt19937_64 rng(13);
  for (int i = 0; i < 1000; ++i) {
    const FeatureMap x = oracle::random_map(rng, 2, 3, 2), y = oracle::random_map(rng, 2, 3, 2),
                     z = oracle::random_map(rng, 2, 3, 2);
    const FeatureMap xy[] = {x, y}, yx[] = {y, x}, xx[] = {x, x};
    const FeatureMap fxy = fuse_templates(xy);
    CHECK(fxy == fuse_templates(yx));
    CHECK(fuse_templates(xx) == x);
    const FeatureMap l[] = {fxy, z};
    const FeatureMap yz[] = {y, z};
    const FeatureMap r[] = {x, fuse_templates(yz)};
    CHECK(fuse_templates(l) == fuse_templates(r));
  }
  CHECK_THROWS_AS(fuse_templates(std::span<const FeatureMap>{}), ContractViolation);
  const FeatureMap bad[] = {FeatureMap(1, 2, 2), FeatureMap(2, 1, 2)};
  CHECK_THROWS_AS(fuse_templates(bad), ContractViolation);
}

TEST_CASE("score_to_box maps cell offsets to pixels") {
  ScoreMap m{9, 9, 8, std::vector<double>(81, 0.0)};
  m.at(4, 6) = 1.0;  // two cells right of center
  const CropWindow w{50.0, 50.0, 255.0, 255};
  const BoundingBox prior{40, 40, 20, 20};
  LocalizerConfig cfg;
  cfg.cosine_weight = 0.0;
  const Localization loc = score_to_box(m, w, prior, cfg);
  CHECK(loc.box.x == doctest::Approx(56.0));
  CHECK(loc.box.y == doctest::Approx(40.0));
  CHECK(loc.box.w == 20.0);
  CHECK(loc.confidence == doctest::Approx(1.0));

  ScoreMap flat{5, 5, 8, std::vector<double>(25, 3.0)};
  const Localization f = score_to_box(flat, w, prior, cfg);
  CHECK(f.box == prior);
  CHECK(f.confidence == 0.0);
}

TEST_CASE("score_to_box picks the scale with the damped highest peak") {
  LocalizerConfig cfg;
  cfg.cosine_weight = 0.0;
  std::vector<ScoreMap> maps(3, ScoreMap{5, 5, 8, std::vector<double>(25, 0.0)});
  maps[0].at(2, 2) = 1.0;
  maps[1].at(2, 2) = 0.9;
  maps[2].at(2, 2) = 0.5;
  const CropWindow w{50.0, 50.0, 255.0, 255};
  const BoundingBox prior{40, 40, 20, 20};
  const Localization loc = score_to_box(maps, w, prior, cfg);
  CHECK(loc.scale_index == 0);
  CHECK(loc.box.w == doctest::Approx(20.0 * 0.96));
  CHECK(loc.box.cx() == doctest::Approx(prior.cx()));
  maps[0].at(2, 2) = 0.92;  // 0.92 * 0.97 < 0.9
  CHECK(score_to_box(maps, w, prior, cfg).scale_index == 1);
}

TEST_CASE("gradient extractor layout") {
  const GradientExtractor ex;
  CHECK(ex.stride() == 8);
  CHECK(ex.channels() == 9);
  ImageF flat(127, 127, 100.0f);
  const FeatureMap f = ex.extract(flat);
  CHECK(f.height == 15);
  CHECK(f.width == 15);
  CHECK(f.stride == 8);
  for (float v : f.values) CHECK(v == 0.0f);

  ImageF patch(kSearchResolution, kSearchResolution);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> d(0.0f, 255.0f);
  for (auto& v : patch.pixels) v = d(rng);
  const FeatureMap g = ex.extract(patch);
  CHECK(g == ex.extract(patch));
  for (float v : g.values) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0f);
  }
}

TEST_CASE("gradient features follow translation by whole cells") {
  const GradientExtractor ex;
  ImageF a(127, 127, 0.0f), b(127, 127, 0.0f);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> d(0.0f, 255.0f);
  for (int y = 0; y < 127; ++y)
    for (int x = 0; x < 127; ++x) a.at(x, y) = d(rng);
  for (int y = 0; y < 127; ++y)
    for (int x = 0; x < 127; ++x) b.at(x, y) = a.at(std::min(126, x + 16), y);
  const FeatureMap fa = ex.extract(a), fb = ex.extract(b);
  // away from the borders, cell (y, x) of b equals cell (y, x + 2) of a
  for (int y = 2; y < fa.height - 2; ++y)
    for (int x = 2; x < fa.width - 5; ++x)
      for (int c = 0; c < fa.channels; ++c) CHECK(fb.at(y, x, c) == doctest::Approx(fa.at(y, x + 2, c)).epsilon(1e-5));
}

TEST_CASE("template correlation peaks at the true displacement") {
  SyntheticSceneSpec spec = scene_by_name("random_3");
  spec.noise = 0.0;
  const Image frame = render_frame(spec, 1, 0);
  const auto store = FrameStore::from_frames({frame});
  const GradientExtractor ex;
  const BoundingBox target{60, 40, 40, 40};
  const CropWindow tw = template_window(target);
  const FeatureMap t = ex.extract_window(*store, 0, tw);
  const BoundingBox prior{44, 40, 40, 40};  // target is 16 px to the right of the prior
  const CropWindow sw = search_window(prior);
  const FeatureMap s = ex.extract_window(*store, 0, sw);
  const ScoreMap score = cross_correlate(t, s);
  LocalizerConfig cfg;
  cfg.cosine_weight = 0.0;
  cfg.scales = {1.0};
  const Localization loc = score_to_box(score, sw, prior, cfg);
  CHECK(loc.box.x == doctest::Approx(target.x).epsilon(0.05));
  CHECK(std::fabs(loc.box.y - target.y) < 3.0);
}

TEST_CASE("feature files round trip") {
  ScratchDir dir("vafm");
  std::mt19937_64 rng(5);
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 3; ++i) {
    FeatureMap m = oracle::random_map(rng, 6, 8, 4);
    m.stride = 16;
    write_feature_file(dir / ("f" + std::to_string(i) + ".vafm"), m);
    CHECK(read_feature_file(dir / ("f" + std::to_string(i) + ".vafm")) == m);
    maps.push_back(m);
  }
  const PrecomputedExtractor pre(dir.path(), 8);
  CHECK(pre.frame_count() == 3);
  CHECK(pre.channels() == 4);
  CHECK_THROWS_AS(pre.extract(ImageF(8, 8)), ContractViolation);

  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "VAFX";
  }
  CHECK_THROWS(read_feature_file(dir / "bad.bin"));
}

TEST_CASE("precomputed extractor samples the stored grid") {
  FeatureMap grid(4, 4, 1, 0.0f, 16);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) grid.at(y, x, 0) = static_cast<float>(10 * y + x);
  const PrecomputedExtractor pre(std::vector<FeatureMap>{grid}, 16);
  const auto store = FrameStore::from_frames({Image(64, 64)});
  // window covering the whole frame at stride-16 resolution reproduces the grid
  const FeatureMap f = pre.extract_window(*store, 0, CropWindow{32.0, 32.0, 64.0, 64});
  REQUIRE(f.height == 4);
  REQUIRE(f.width == 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(f.at(y, x, 0) == doctest::Approx(grid.at(y, x, 0)));
  CHECK_THROWS_AS(pre.extract_window(*store, 1, CropWindow{32.0, 32.0, 64.0, 64}), ContractViolation);
}
