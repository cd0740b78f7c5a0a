#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "scratch.hpp"
#include "vidann/error.hpp"
#include "vidann/guidance.hpp"
#include "vidann/synth.hpp"

using namespace vidann;
using vidann::testing::ScratchDir;

namespace {

HeadArchitecture small_arch() {
  HeadArchitecture a;
  a.in_channels = 3;
  a.conv_channels = 4;
  a.hidden = 5;
  a.frames = 4;
  return a;
}

std::vector<PairSample> random_samples(std::mt19937_64& rng, const HeadArchitecture& a, int count) {
  std::vector<PairSample> out;
  for (int i = 0; i < count; ++i) {
    PairSample s;
    for (int f = 0; f < a.frames; ++f) {
      s.frames.push_back(std::make_shared<const FeatureMap>(oracle::random_map(rng, 5, 6, a.in_channels)));
    }
    s.sign = rng() % 2 ? 1.0 : -1.0;
    s.label = static_cast<int>(rng() % 2);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<const FeatureMap*> raw(const PairSample& s) {
  std::vector<const FeatureMap*> out;
  for (const auto& f : s.frames) out.push_back(f.get());
  return out;
}

}  // namespace

TEST_CASE("sample_candidates") {
  const GuidanceConfig cfg;
  const int last0[] = {0};
  const auto c = sample_candidates(last0, 200, cfg);
  CHECK(c == std::vector<int>{10, 20, 30, 40, 50, 60, 70, 80, 90, 100});
  const int near_end[] = {3, 195};
  CHECK(sample_candidates(near_end, 200, cfg) == std::vector<int>{196, 197, 198, 199});
  const int at_end[] = {199};
  CHECK(sample_candidates(at_end, 200, cfg).empty());
  const int partial[] = {50};
  const auto p = sample_candidates(partial, 101, cfg);
  CHECK(p.size() == 10);
  CHECK(p.front() == 55);
  CHECK(p.back() == 100);
  GuidanceConfig bad = cfg;
  bad.candidate_count = 1;
  CHECK_THROWS_AS(validate(bad), ValidationError);
}

TEST_CASE("sample_references is seeded and avoids annotated frames") {
  const int annotated[] = {0, 10};
  const auto a = sample_references(annotated, 60, 2, 5);
  CHECK(a == sample_references(annotated, 60, 2, 5));
  CHECK(a.size() == 2);
  for (int f : a) {
    CHECK(f > 10);
    CHECK(f < 60);
  }
  const int last[] = {59};
  const auto b = sample_references(last, 60, 2, 1);
  CHECK(b.size() == 2);
  for (int f : b) CHECK(f != 59);
}

TEST_CASE("aggregate example and positivity") {
  const ComparisonMatrix m{{0.0, 0.5, -0.3}, {-0.5, 0.0, 0.9}, {0.3, -0.9, 0.0}};
  const auto t = aggregate_scores(m);
  CHECK(t[0] == doctest::Approx(0.5));
  CHECK(t[1] == doctest::Approx(0.9));
  CHECK(t[2] == doctest::Approx(0.3));
  const int cands[] = {10, 20, 30};
  CHECK(select_from_totals(cands, t) == 20);
  const double ties[] = {1.0, 1.0, 0.0};
  CHECK(select_from_totals(cands, ties) == 10);

  CHECK_THROWS_AS(aggregate_scores({{0.0, 0.5}, {0.4, 0.0}}), ValidationError);
  CHECK_THROWS_AS(aggregate_scores({{0.1, 0.0}, {0.0, 0.0}}), ValidationError);
  CHECK_THROWS_AS(aggregate_scores({{0.0, 0.0}, {0.0}}), ValidationError);
}

TEST_CASE("aggregate example with integer-like totals") {
  const ComparisonMatrix m{{0.0, 0.5, 0.0}, {-0.5, 0.0, 0.9}, {0.0, -0.9, 0.0}};
  const auto t = aggregate_scores(m);
  CHECK(t[0] == doctest::Approx(0.5));
  CHECK(t[1] == doctest::Approx(0.9));
  CHECK(t[2] == doctest::Approx(0.0));
}

TEST_CASE("squash is odd and bounded") {
  for (double z = -30.0; z <= 30.0; z += 0.37) {
    CHECK(squash(-z) == -squash(z));
    CHECK(std::fabs(squash(z)) <= 1.0);
    CHECK(squash(z) == doctest::Approx(2.0 / (1.0 + std::exp(-z)) - 1.0).epsilon(1e-9));
  }
}

TEST_CASE("head forward matches the literal oracle") {
  std::mt19937_64 rng(31);
  const HeadArchitecture a = small_arch();
  RankingHeadParams p = RankingHeadParams::random(a, 4);
  std::normal_distribution<double> d(0.0, 0.3);
  for (auto& v : p.values) v += d(rng);
  for (const auto& s : random_samples(rng, a, 10)) {
    const double want = s.sign * oracle::head_forward(a, p.values, raw(s));
    CHECK(sample_logit(p, s) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("bce gradient matches central differences") {
  std::mt19937_64 rng(32);
  for (int config = 0; config < 5; ++config) {
    const HeadArchitecture a = small_arch();
    RankingHeadParams p = RankingHeadParams::random(a, 100 + config);
    std::normal_distribution<double> d(0.0, 0.2);
    for (auto& v : p.values) v += d(rng);
    const auto batch = random_samples(rng, a, 3);
    const auto got = bce_loss_and_grad(p, batch);
    auto loss_of = [&](const std::vector<double>& values) {
      std::vector<double> logits;
      std::vector<int> labels;
      for (const auto& s : batch) {
        logits.push_back(s.sign * oracle::head_forward(a, values, raw(s)));
        labels.push_back(s.label);
      }
      return oracle::bce(logits, labels);
    };
    CHECK(got.loss == doctest::Approx(loss_of(p.values)).epsilon(1e-10));
    CHECK(bce_loss(p, batch) == doctest::Approx(got.loss).epsilon(1e-12));
    const auto num = oracle::numeric_gradient(loss_of, p.values, 1e-6);
    double worst = 0.0;
    for (std::size_t i = 0; i < num.size(); ++i) {
      const double scale = std::max({std::fabs(num[i]), std::fabs(got.grad[i]), 1e-6});
      worst = std::max(worst, std::fabs(num[i] - got.grad[i]) / scale);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("zero head scores every pair as a tie") {
  const SyntheticVideo v = synth_generate(scene_by_name("random_2"), 7);
  const auto ex = std::make_shared<GradientExtractor>();
  const GuidanceConfig cfg;
  const std::vector<Keyframe> keys{{0, v.tracks[0].boxes.begin()->second}};
  GuidanceContext ctx(v.frames, ex, keys, {50, 70}, cfg.frame_resolution);
  const auto head = RankingHeadParams::zeros(HeadArchitecture{});
  const int cands[] = {10, 20, 30};
  const Selection s = select_next_frame(cands, ctx, head);
  CHECK(s.frame == 10);
  for (double t : s.totals) CHECK(t == 0.0);
}

TEST_CASE("comparisons are antisymmetric") {
  const SyntheticVideo v = synth_generate(scene_by_name("random_4"), 7);
  const auto ex = std::make_shared<GradientExtractor>();
  const std::vector<Keyframe> keys{{v.tracks[0].boxes.begin()->first, v.tracks[0].boxes.begin()->second}};
  GuidanceContext ctx(v.frames, ex, keys, {40, 60}, kSearchResolution);
  const auto head = RankingHeadParams::random(HeadArchitecture{}, 9);
  const std::vector<int> cands{12, 25, 37, 51};
  const auto m = compare_candidates(cands, ctx, head);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    CHECK(m[i][i] == 0.0);
    for (std::size_t j = 0; j < cands.size(); ++j) {
      CHECK(m[i][j] == -m[j][i]);
      if (i != j) CHECK(m[i][j] == doctest::Approx(pair_score(cands[i], cands[j], ctx, head)).epsilon(1e-12));
    }
  }
  const auto sel = select_next_frame(cands, ctx, head);
  const auto totals = aggregate_scores(m);
  CHECK(sel.totals == totals);
  const auto best = std::max_element(totals.begin(), totals.end()) - totals.begin();
  CHECK(sel.frame == cands[static_cast<std::size_t>(best)]);
}

TEST_CASE("attend standardizes the attention map") {
  FeatureMap frame(6, 6, 2, 0.0f);
  ScoreMap att{4, 4, 1, {}};
  for (int i = 0; i < 16; ++i) att.values.push_back(i);
  const FeatureMap out = attend(frame, att, 3, 3);
  double sum = 0.0, sq = 0.0;
  for (int y = 1; y < 5; ++y)
    for (int x = 1; x < 5; ++x) {
      CHECK(out.at(y, x, 0) == out.at(y, x, 1));
      sum += out.at(y, x, 0);
      sq += out.at(y, x, 0) * out.at(y, x, 0);
    }
  CHECK(sum / 16 == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(sq / 16 == doctest::Approx(1.0).epsilon(1e-5));
  for (int c = 0; c < 2; ++c) {
    CHECK(out.at(0, 0, c) == 0.0f);
    CHECK(out.at(5, 5, c) == 0.0f);
  }
}

TEST_CASE("guidance templates are the latest keyframes") {
  GuidanceConfig cfg;
  cfg.templates = 3;
  const std::vector<Keyframe> ks{{30, {0, 0, 1, 1}}, {0, {0, 0, 1, 1}}, {10, {0, 0, 1, 1}}};
  const auto t = guidance_templates(ks, cfg);
  REQUIRE(t.size() == 2);
  CHECK(t[0].frame == 10);
  CHECK(t[1].frame == 30);
}

TEST_CASE("training reduces the loss and fits a separable set") {
  std::mt19937_64 rng(40);
  const HeadArchitecture a = small_arch();
  // the label is whether the first frame is brighter than the second
  std::vector<PairSample> samples;
  for (int i = 0; i < 60; ++i) {
    PairSample s;
    const float l0 = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    const float l1 = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    s.frames.push_back(std::make_shared<const FeatureMap>(FeatureMap(5, 5, a.in_channels, l0)));
    s.frames.push_back(std::make_shared<const FeatureMap>(FeatureMap(5, 5, a.in_channels, l1)));
    for (int r = 0; r < 2; ++r) s.frames.push_back(std::make_shared<const FeatureMap>(oracle::random_map(rng, 5, 5, a.in_channels)));
    s.label = l0 > l1;
    samples.push_back(std::move(s));
  }
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 60;
  cfg.batch_size = 10;
  const auto init = RankingHeadParams::random(a, 3);
  const auto result = train_head(samples, {}, init, cfg);
  CHECK(result.history.size() == 60);
  CHECK(bce_loss(result.params, samples) < bce_loss(init, samples));
  CHECK(pair_accuracy(result.params, samples) >= 0.9);
  CHECK(train_head(samples, {}, init, cfg).params == result.params);
}

TEST_CASE("pairs jsonl round trip") {
  TrainingPair p;
  p.video = "synth:random_3:7";
  p.object_id = 2;
  p.templates = {{4, {1.5, 2.25, 30, 40}}};
  p.candidate_i = 10;
  p.candidate_j = 40;
  p.references = {55, 61};
  p.label = 1;
  p.quality_gap = 0.4375;
  std::vector<TrainingPair> pairs{p, p};
  pairs[1].label = 0;
  pairs[1].quality_gap = -0.5;
  std::ostringstream out;
  write_pairs_jsonl(out, pairs);
  std::istringstream in(out.str());
  CHECK(read_pairs_jsonl(in) == pairs);
  std::istringstream bad("{\"video\": 1}\n");
  CHECK_THROWS_AS(read_pairs_jsonl(bad), ParseError);
}

TEST_CASE("split_pairs_by_video keeps videos whole") {
  std::vector<TrainingPair> pairs;
  for (int v = 0; v < 10; ++v)
    for (int k = 0; k < 3; ++k) {
      TrainingPair p;
      p.video = "v" + std::to_string(v);
      p.candidate_i = k;
      pairs.push_back(p);
    }
  const auto split = split_pairs_by_video(pairs, 0.2, 3);
  CHECK(split.held_out.size() == 6);
  CHECK(split.train.size() == 24);
  for (const auto& h : split.held_out)
    for (const auto& t : split.train) CHECK(h.video != t.video);
  CHECK(split_pairs_by_video(pairs, 0.2, 3).held_out == split.held_out);
  CHECK(split_pairs_by_video(pairs, 0.0, 3).held_out.empty());
}

TEST_CASE("head parameter files round trip at float precision") {
  ScratchDir dir("vahp");
  const auto p = RankingHeadParams::random(HeadArchitecture{}, 77);
  save_head_params(dir / "h.vahp", p);
  const auto q = load_head_params(dir / "h.vahp");
  CHECK(q.arch == p.arch);
  REQUIRE(q.values.size() == p.arch.parameter_count());
  for (std::size_t i = 0; i < q.values.size(); ++i) CHECK(q.values[i] == static_cast<double>(static_cast<float>(p.values[i])));
  {
    std::ofstream bad(dir / "bad.vahp", std::ios::binary);
    bad << "VAHP";
  }
  CHECK_THROWS(load_head_params(dir / "bad.vahp"));
}

TEST_CASE("pair generation labels and balance") {
  const SyntheticVideo v = synth_generate(scene_by_name("random_1"), 7);
  const auto ex = std::make_shared<GradientExtractor>();
  const std::vector<TrainingVideo> vids{{"synth:random_1:7", v.frames, v.tracks}};
  PairGenerationConfig cfg;
  cfg.anchors_per_track = 1;
  const auto report = generate_training_pairs(vids, cfg, ex, 2);
  int ones = 0, earlier_wins = 0;
  for (const auto& p : report.pairs) {
    CHECK(p.video == "synth:random_1:7");
    CHECK(std::fabs(p.quality_gap) > cfg.min_gap);
    CHECK(p.label == (p.quality_gap > 0 ? 1 : 0));
    CHECK(p.references.size() == 2);
    CHECK(p.templates.size() == 1);
    ones += p.label;
    earlier_wins += (p.candidate_i < p.candidate_j) == (p.label == 1);
  }
  const int n = static_cast<int>(report.pairs.size());
  CHECK(2 * earlier_wins == n);
  CHECK(std::abs(2 * ones - n) <= 1);
}
