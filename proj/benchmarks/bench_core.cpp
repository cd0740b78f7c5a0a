#include <random>

#include <benchmark/benchmark.h>

#include "vidann/features.hpp"
#include "vidann/guidance.hpp"
#include "vidann/interp.hpp"
#include "vidann/synth.hpp"

using namespace vidann;

namespace {

const SyntheticVideo& scene() {
  static const SyntheticVideo v = synth_generate(scene_by_name("random_1"), 7);
  return v;
}

FeatureMap random_map(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  FeatureMap m(h, w, c);
  for (auto& v : m.values) v = d(rng);
  return m;
}

void BM_ExtractSearchCrop(benchmark::State& state) {
  const GradientExtractor ex;
  ImageF patch(kSearchResolution, kSearchResolution);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> d(0.0f, 255.0f);
  for (auto& v : patch.pixels) v = d(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ex.extract(patch));
}
BENCHMARK(BM_ExtractSearchCrop);

void BM_CrossCorrelate(benchmark::State& state) {
  const FeatureMap t = random_map(15, 15, 9, 2);
  const FeatureMap s = random_map(31, 31, 9, 3);
  for (auto _ : state) benchmark::DoNotOptimize(cross_correlate(t, s));
}
BENCHMARK(BM_CrossCorrelate);

void BM_PredictFrame(benchmark::State& state) {
  const auto& v = scene();
  const VisualInterpolator interp(v.frames, std::make_shared<GradientExtractor>());
  const auto& gt = v.tracks[0].boxes;
  const std::vector<Keyframe> templates{{0, gt.at(0)}, {40, gt.at(40)}};
  const FeatureMap fused = interp.template_features(templates);
  for (auto _ : state) benchmark::DoNotOptimize(interp.predict_frame(20, fused, gt.at(19)));
}
BENCHMARK(BM_PredictFrame);

void BM_InterpolateTrack(benchmark::State& state) {
  const auto& v = scene();
  const auto& gt = v.tracks[0].boxes;
  const std::vector<Keyframe> keys{{0, gt.at(0)}, {50, gt.at(50)}, {99, gt.at(99)}};
  for (auto _ : state) {
    const VisualInterpolator interp(v.frames, std::make_shared<GradientExtractor>());
    benchmark::DoNotOptimize(interp.interpolate_track(keys, {0, 99}));
  }
}
BENCHMARK(BM_InterpolateTrack)->Unit(benchmark::kMillisecond);

void BM_CompareCandidates(benchmark::State& state) {
  const auto& v = scene();
  const auto ex = std::make_shared<GradientExtractor>();
  const std::vector<Keyframe> keys{{0, v.tracks[0].boxes.at(0)}};
  const GuidanceContext ctx(v.frames, ex, keys, {55, 80}, kSearchResolution);
  const auto head = RankingHeadParams::random(HeadArchitecture{}, 1);
  const std::vector<int> cands{10, 20, 30, 40, 50, 60, 70, 80, 90, 99};
  for (int c : cands) ctx.frame_input(c);
  for (auto _ : state) benchmark::DoNotOptimize(compare_candidates(cands, ctx, head));
}
BENCHMARK(BM_CompareCandidates)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
