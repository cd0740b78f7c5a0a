#include "vidann/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vidann/error.hpp"
#include "vidann/random.hpp"

namespace vidann {

void validate(const GuidanceConfig& cfg) {
  if (cfg.candidate_count < 2) throw ValidationError("candidate_count", "must be at least 2");
  if (cfg.horizon < cfg.candidate_count) throw ValidationError("horizon", "must be at least candidate_count");
  if (cfg.references < 1) throw ValidationError("references", "N must be at least 1");
  if (cfg.templates < 2) throw ValidationError("templates", "K must be at least 2");
  if (cfg.frame_resolution < 1) throw ValidationError("frame_resolution", "must be positive");
}

std::vector<int> sample_candidates(std::span<const int> annotated_frames, int video_length, const GuidanceConfig& cfg) {
  if (annotated_frames.empty()) throw ContractViolation("sample_candidates: no annotated frames");
  const int last = *std::max_element(annotated_frames.begin(), annotated_frames.end());
  const long end = std::min<long>(static_cast<long>(last) + cfg.horizon, video_length - 1L);
  const long span = end - last;
  std::vector<int> out;
  if (span <= 0) return out;
  const long count = std::min<long>(cfg.candidate_count, span);
  for (long k = 1; k <= count; ++k) out.push_back(static_cast<int>(last + k * span / count));
  return out;
}

std::vector<int> sample_references(std::span<const int> annotated_frames, int video_length, int count,
                                   std::uint64_t seed) {
  if (count < 1) return {};
  if (video_length < 1) throw ContractViolation("sample_references: empty video");
  std::vector<int> annotated(annotated_frames.begin(), annotated_frames.end());
  std::sort(annotated.begin(), annotated.end());
  const int last = annotated.empty() ? -1 : annotated.back();
  std::vector<int> pool;
  for (int f = last + 1; f < video_length; ++f) pool.push_back(f);
  if (pool.empty()) {
    for (int f = 0; f < video_length; ++f) {
      if (!std::binary_search(annotated.begin(), annotated.end(), f)) pool.push_back(f);
    }
  }
  if (pool.empty()) pool.push_back(video_length - 1);
  Rng rng(seed);
  std::vector<int> out;
  if (static_cast<int>(pool.size()) >= count) {
    rng.shuffle(pool);
    out.assign(pool.begin(), pool.begin() + count);
  } else {
    for (int i = 0; i < count; ++i) out.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

ScoreMap attention_map(std::span<const FeatureMap> templates, const FeatureMap& frame_features) {
  return cross_correlate(fuse_templates(templates), frame_features);
}

FeatureMap attend(const FeatureMap& frame_features, const ScoreMap& attention, int template_height, int template_width) {
  if (attention.height != frame_features.height - template_height + 1 ||
      attention.width != frame_features.width - template_width + 1) {
    throw ContractViolation("attend: attention map does not match the frame features");
  }
  const double n = static_cast<double>(attention.values.size());
  const double mean = std::accumulate(attention.values.begin(), attention.values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : attention.values) var += (v - mean) * (v - mean);
  var /= n;
  const double inv_std = var > 1e-24 ? 1.0 / std::sqrt(var) : 0.0;
  const int oy = template_height / 2, ox = template_width / 2;
  FeatureMap out = frame_features;
  for (int v = 0; v < attention.height; ++v) {
    for (int u = 0; u < attention.width; ++u) {
      const auto a = static_cast<float>((attention.at(v, u) - mean) * inv_std);
      for (int c = 0; c < out.channels; ++c) out.at(v + oy, u + ox, c) += a;
    }
  }
  return out;
}

GuidanceContext::GuidanceContext(std::shared_ptr<const FrameStore> store,
                                 std::shared_ptr<const FeatureExtractor> extractor, std::span<const Keyframe> templates,
                                 std::vector<int> references, int frame_resolution)
    : store_(std::move(store)), extractor_(std::move(extractor)), references_(std::move(references)),
      resolution_(frame_resolution) {
  if (!store_ || !extractor_) throw ContractViolation("GuidanceContext: null store or extractor");
  if (templates.empty()) throw ContractViolation("GuidanceContext: no templates");
  std::vector<FeatureMap> maps;
  for (const auto& kf : templates) maps.push_back(extractor_->extract_window(*store_, kf.frame, template_window(kf.box)));
  fused_ = fuse_templates(maps);
}

std::shared_ptr<const FeatureMap> GuidanceContext::frame_input(int frame) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = inputs_.find(frame); it != inputs_.end()) return it->second;
  }
  const FeatureMap features = extractor_->extract_frame(*store_, frame, resolution_);
  auto input =
      std::make_shared<const FeatureMap>(attend(features, cross_correlate(fused_, features), fused_.height, fused_.width));
  std::lock_guard lock(mutex_);
  return inputs_.emplace(frame, std::move(input)).first->second;
}

PairSample GuidanceContext::pair_sample(int candidate_i, int candidate_j, int label) const {
  if (candidate_i == candidate_j) throw ContractViolation("pair_sample: candidates must differ");
  PairSample s;
  s.sign = candidate_i < candidate_j ? 1.0 : -1.0;
  s.label = label;
  s.frames.push_back(frame_input(std::min(candidate_i, candidate_j)));
  s.frames.push_back(frame_input(std::max(candidate_i, candidate_j)));
  for (int r : references_) s.frames.push_back(frame_input(r));
  return s;
}

namespace {

void check_context(const GuidanceContext& ctx, const RankingHeadParams& params) {
  if (static_cast<int>(ctx.references().size()) + 2 != params.arch.frames) {
    throw ContractViolation("guidance: reference count does not match the head architecture");
  }
}

}  // namespace

double pair_score(int candidate_i, int candidate_j, const GuidanceContext& ctx, const RankingHeadParams& params) {
  check_context(ctx, params);
  if (candidate_i > candidate_j) return -pair_score(candidate_j, candidate_i, ctx, params);
  return squash(sample_logit(params, ctx.pair_sample(candidate_i, candidate_j)));
}

ComparisonMatrix compare_candidates(std::span<const int> candidates, const GuidanceContext& ctx,
                                    const RankingHeadParams& params) {
  check_context(ctx, params);
  const std::size_t n = candidates.size();
  ComparisonMatrix m(n, std::vector<double>(n, 0.0));
  // Pooled activations depend only on the frame, so each frame goes through the conv once.
  std::map<int, std::vector<double>> pooled;
  auto pooled_of = [&](int frame) -> const std::vector<double>& {
    auto it = pooled.find(frame);
    if (it == pooled.end()) it = pooled.emplace(frame, pool_frame(params, *ctx.frame_input(frame))).first;
    return it->second;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (candidates[i] >= candidates[j]) continue;
      std::vector<std::vector<double>> stack{pooled_of(candidates[i]), pooled_of(candidates[j])};
      for (int r : ctx.references()) stack.push_back(pooled_of(r));
      const double s = squash(head_logit(params, stack));
      m[i][j] = s;
      m[j][i] = -s;
    }
  }
  return m;
}

std::vector<double> aggregate_scores(const ComparisonMatrix& scores) {
  const std::size_t n = scores.size();
  std::vector<double> totals(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (scores[i].size() != n) throw ValidationError("scores", "comparison matrix must be square");
    if (std::fabs(scores[i][i]) > 1e-6) throw ValidationError("scores", "diagonal must be zero");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(scores[i][j]) || std::fabs(scores[i][j] + scores[j][i]) > 1e-6) {
        throw ValidationError("scores", "comparison matrix is not antisymmetric");
      }
      totals[i] += std::max(scores[i][j], 0.0);
    }
  }
  return totals;
}

int select_from_totals(std::span<const int> candidates, std::span<const double> totals) {
  if (candidates.empty()) throw ContractViolation("select_next_frame: no candidates");
  if (candidates.size() != totals.size()) throw ContractViolation("select_next_frame: totals do not match candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (totals[i] > totals[best] || (totals[i] == totals[best] && candidates[i] < candidates[best])) best = i;
  }
  return candidates[best];
}

Selection select_next_frame(std::span<const int> candidates, const GuidanceContext& ctx,
                            const RankingHeadParams& params) {
  if (candidates.empty()) throw ContractViolation("select_next_frame: no candidates");
  Selection sel;
  sel.candidates.assign(candidates.begin(), candidates.end());
  sel.totals = aggregate_scores(compare_candidates(candidates, ctx, params));
  sel.frame = select_from_totals(sel.candidates, sel.totals);
  return sel;
}

std::vector<Keyframe> guidance_templates(std::span<const Keyframe> keyframes, const GuidanceConfig& cfg) {
  if (keyframes.empty()) throw ContractViolation("guidance_templates: no keyframes");
  std::vector<Keyframe> sorted(keyframes.begin(), keyframes.end());
  std::sort(sorted.begin(), sorted.end(), [](const Keyframe& a, const Keyframe& b) { return a.frame < b.frame; });
  const std::size_t keep = std::min<std::size_t>(sorted.size(), static_cast<std::size_t>(std::max(cfg.templates - 1, 1)));
  return {sorted.end() - static_cast<std::ptrdiff_t>(keep), sorted.end()};
}

}  // namespace vidann
