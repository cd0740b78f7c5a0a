#include "vidann/interp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "vidann/error.hpp"

namespace vidann {

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::human: return "human";
    case Provenance::visual: return "visual";
    case Provenance::blended: return "blended";
    case Provenance::geometric: return "geometric";
  }
  return "visual";
}

Provenance provenance_from_string(std::string_view text) {
  if (text == "human") return Provenance::human;
  if (text == "visual") return Provenance::visual;
  if (text == "blended") return Provenance::blended;
  if (text == "geometric") return Provenance::geometric;
  throw ValidationError("provenance", "unknown provenance '" + std::string(text) + "'");
}

std::string_view to_string(TrackStrategy s) noexcept {
  switch (s) {
    case TrackStrategy::linear: return "linear";
    case TrackStrategy::tracking: return "tracking";
    case TrackStrategy::visual: return "visual";
  }
  return "visual";
}

TrackStrategy track_strategy_from_string(std::string_view text) {
  if (text == "linear") return TrackStrategy::linear;
  if (text == "tracking") return TrackStrategy::tracking;
  if (text == "visual") return TrackStrategy::visual;
  throw ValidationError("strategy", "unknown strategy '" + std::string(text) + "'");
}

void validate(const InterpConfig& cfg) {
  if (cfg.templates < 1) throw ValidationError("templates", "K must be at least 1");
  if (!(cfg.delta >= 0.0) || !std::isfinite(cfg.delta)) throw ValidationError("delta", "must be a finite value >= 0");
  if (!(cfg.context_factor >= 1.0)) throw ValidationError("context_factor", "must be >= 1");
  if (cfg.localizer.scales.empty()) throw ValidationError("scales", "at least one scale required");
  for (double s : cfg.localizer.scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("scales", "scales must be positive");
  }
  if (cfg.localizer.cosine_weight < 0.0 || cfg.localizer.cosine_weight > 1.0) {
    throw ValidationError("cosine_weight", "must lie in [0, 1]");
  }
  if (!(cfg.localizer.scale_damping > 0.0)) throw ValidationError("scale_damping", "must be positive");
}

std::vector<Keyframe> select_templates(std::span<const Keyframe> keyframes, int target_frame, int k) {
  if (keyframes.empty()) throw ContractViolation("select_templates: no keyframes");
  if (k < 1) throw ContractViolation("select_templates: K must be >= 1");
  std::vector<Keyframe> sorted(keyframes.begin(), keyframes.end());
  std::stable_sort(sorted.begin(), sorted.end(), [target_frame](const Keyframe& a, const Keyframe& b) {
    const long da = std::labs(static_cast<long>(a.frame) - target_frame);
    const long db = std::labs(static_cast<long>(b.frame) - target_frame);
    return da != db ? da < db : a.frame < b.frame;
  });
  sorted.resize(std::min<std::size_t>(sorted.size(), static_cast<std::size_t>(k)));
  std::sort(sorted.begin(), sorted.end(), [](const Keyframe& a, const Keyframe& b) { return a.frame < b.frame; });
  return sorted;
}

std::vector<Keyframe> normalize_keyframes(std::vector<Keyframe> keyframes) {
  std::sort(keyframes.begin(), keyframes.end(), [](const Keyframe& a, const Keyframe& b) { return a.frame < b.frame; });
  for (std::size_t i = 0; i < keyframes.size(); ++i) {
    validate(keyframes[i].box);
    if (i > 0 && keyframes[i].frame == keyframes[i - 1].frame) {
      throw ValidationError("frame", "duplicate keyframe at frame " + std::to_string(keyframes[i].frame));
    }
  }
  return keyframes;
}

VisualInterpolator::VisualInterpolator(std::shared_ptr<const FrameStore> store,
                                       std::shared_ptr<const FeatureExtractor> extractor, InterpConfig cfg)
    : store_(std::move(store)), extractor_(std::move(extractor)), cfg_(std::move(cfg)) {
  if (!store_ || !extractor_) throw ContractViolation("VisualInterpolator: null store or extractor");
  validate(cfg_);
}

std::shared_ptr<const FeatureMap> VisualInterpolator::template_feature(const Keyframe& kf) const {
  const auto key = std::make_tuple(kf.frame, std::bit_cast<std::uint64_t>(kf.box.x), std::bit_cast<std::uint64_t>(kf.box.y),
                                   std::bit_cast<std::uint64_t>(kf.box.w), std::bit_cast<std::uint64_t>(kf.box.h));
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = template_cache_.find(key); it != template_cache_.end()) return it->second;
  }
  auto features =
      std::make_shared<const FeatureMap>(extractor_->extract_window(*store_, kf.frame, template_window(kf.box)));
  std::lock_guard lock(cache_mutex_);
  return template_cache_.emplace(key, std::move(features)).first->second;
}

FeatureMap VisualInterpolator::template_features(std::span<const Keyframe> templates) const {
  if (templates.empty()) throw ContractViolation("template_features: no templates");
  std::vector<FeatureMap> maps;
  maps.reserve(templates.size());
  for (const auto& kf : templates) maps.push_back(*template_feature(kf));
  return fuse_templates(maps);
}

Localization VisualInterpolator::predict_frame(int frame, std::span<const Keyframe> templates,
                                               const BoundingBox& prior) const {
  return predict_frame(frame, template_features(templates), prior);
}

Localization VisualInterpolator::predict_frame(int frame, const FeatureMap& fused, const BoundingBox& prior) const {
  validate(prior);
  const CropWindow window = search_window(prior, cfg_.context_factor);
  std::vector<ScoreMap> maps;
  maps.reserve(cfg_.localizer.scales.size());
  for (double s : cfg_.localizer.scales) {
    CropWindow scaled = window;
    scaled.side *= s;
    maps.push_back(cross_correlate(fused, extractor_->extract_window(*store_, frame, scaled)));
  }
  return score_to_box(maps, window, prior, cfg_.localizer);
}

std::map<int, TrackPoint> VisualInterpolator::interpolate_segment(const Keyframe& left, const Keyframe& right) const {
  if (left.frame >= right.frame) throw ContractViolation("interpolate_segment: left must precede right");
  std::map<int, TrackPoint> out;
  if (right.frame - left.frame < 2) return out;
  const Keyframe bounds[2] = {left, right};
  // With K >= 2 every interior frame shares one fused template; with K = 1 it switches at the midpoint.
  const FeatureMap both = template_features(select_templates(bounds, left.frame, std::min(cfg_.templates, 2)));
  const FeatureMap only_left = cfg_.templates >= 2 ? FeatureMap{} : template_features(std::span(bounds, 1));
  const FeatureMap only_right = cfg_.templates >= 2 ? FeatureMap{} : template_features(std::span(bounds + 1, 1));
  for (int t = left.frame + 1; t < right.frame; ++t) {
    const BoundingBox geometric = linear_interpolate(left, right, t);
    const FeatureMap* fused = &both;
    if (cfg_.templates < 2) fused = (t - left.frame) <= (right.frame - t) ? &only_left : &only_right;
    const Localization visual = predict_frame(t, *fused, geometric);
    const double dt = std::min(t - left.frame, right.frame - t);
    const double w = blend_weight(dt, cfg_.delta);
    out[t] = {blend_boxes(geometric, visual.box, w), w > 0.0 ? Provenance::blended : Provenance::visual,
              visual.confidence};
  }
  return out;
}

std::map<int, TrackPoint> VisualInterpolator::sequential(const Keyframe& anchor, int to, double delta) const {
  std::map<int, TrackPoint> out;
  if (to == anchor.frame) return out;
  const int step = to > anchor.frame ? 1 : -1;
  const FeatureMap fused = template_features(std::span(&anchor, 1));
  BoundingBox prior = anchor.box;
  for (int t = anchor.frame + step;; t += step) {
    const Localization visual = predict_frame(t, fused, prior);
    const double w = blend_weight(std::abs(t - anchor.frame), delta);
    const BoundingBox box = blend_boxes(anchor.box, visual.box, w);
    out[t] = {box, w > 0.0 ? Provenance::blended : Provenance::visual, visual.confidence};
    prior = box;
    if (t == to) break;
  }
  return out;
}

std::map<int, TrackPoint> VisualInterpolator::extrapolate(const Keyframe& anchor, int to) const {
  return sequential(anchor, to, cfg_.delta);
}

std::map<int, TrackPoint> VisualInterpolator::linear_segment(const Keyframe& left, const Keyframe& right) const {
  std::map<int, TrackPoint> out;
  for (int t = left.frame + 1; t < right.frame; ++t) out[t] = {linear_interpolate(left, right, t), Provenance::geometric, 0.0};
  return out;
}

namespace {

std::map<int, TrackPoint> hold(const Keyframe& anchor, int to) {
  std::map<int, TrackPoint> out;
  const int lo = std::min(anchor.frame, to), hi = std::max(anchor.frame, to);
  for (int t = lo; t <= hi; ++t) {
    if (t != anchor.frame) out[t] = {anchor.box, Provenance::geometric, 0.0};
  }
  return out;
}

// Copies frames [lo, hi] from previous when all of them are present.
bool copy_range(const Track& previous, int lo, int hi, std::map<int, TrackPoint>& out) {
  if (hi < lo) return true;
  auto it = previous.points.find(lo);
  auto end = previous.points.upper_bound(hi);
  if (it == previous.points.end() || std::distance(it, end) != hi - lo + 1) return false;
  out.insert(it, end);
  return true;
}

}  // namespace

Track VisualInterpolator::interpolate_track(std::span<const Keyframe> keyframes, FrameRange range,
                                            TrackStrategy strategy, const Track* previous) const {
  if (range.first < 0 || range.last >= store_->frame_count() || range.first > range.last) {
    throw ContractViolation("interpolate_track: frame range outside the video");
  }
  std::vector<Keyframe> kfs;
  for (const auto& kf : keyframes) {
    if (range.contains(kf.frame)) kfs.push_back(kf);
  }
  if (kfs.empty()) throw ValidationError("keyframes", "no keyframes inside the frame range");
  kfs = normalize_keyframes(std::move(kfs));

  Track track;
  track.keyframes = kfs;
  for (const auto& kf : kfs) track.points[kf.frame] = {kf.box, Provenance::human, 1.0};

  // Reuse is keyed on the bounding keyframes of each piece.
  auto prev_index = [&](const Keyframe& kf) -> int {
    if (!previous) return -1;
    for (std::size_t i = 0; i < previous->keyframes.size(); ++i) {
      if (previous->keyframes[i] == kf) return static_cast<int>(i);
    }
    return -1;
  };

  auto end_piece = [&](const Keyframe& anchor, int to) {
    switch (strategy) {
      case TrackStrategy::linear: return hold(anchor, to);
      case TrackStrategy::tracking: return sequential(anchor, to, 0.0);
      case TrackStrategy::visual: break;
    }
    return extrapolate(anchor, to);
  };

  // Head: frames before the first keyframe.
  {
    const Keyframe& first = kfs.front();
    const int pi = prev_index(first);
    std::map<int, TrackPoint> piece;
    if (!(pi == 0 && copy_range(*previous, range.first, first.frame - 1, piece))) piece = end_piece(first, range.first);
    track.points.insert(piece.begin(), piece.end());
  }
  for (std::size_t i = 0; i + 1 < kfs.size(); ++i) {
    const Keyframe& l = kfs[i];
    const Keyframe& r = kfs[i + 1];
    const int pi = prev_index(l);
    std::map<int, TrackPoint> piece;
    const bool reusable = pi >= 0 && static_cast<std::size_t>(pi + 1) < previous->keyframes.size() &&
                          previous->keyframes[static_cast<std::size_t>(pi) + 1] == r &&
                          copy_range(*previous, l.frame + 1, r.frame - 1, piece);
    if (!reusable) {
      switch (strategy) {
        case TrackStrategy::linear: piece = linear_segment(l, r); break;
        case TrackStrategy::tracking: piece = r.frame - l.frame >= 2 ? sequential(l, r.frame - 1, 0.0) : std::map<int, TrackPoint>{}; break;
        case TrackStrategy::visual: piece = interpolate_segment(l, r); break;
      }
    }
    track.points.insert(piece.begin(), piece.end());
  }
  // Tail: frames after the last keyframe.
  {
    const Keyframe& last = kfs.back();
    const int pi = prev_index(last);
    std::map<int, TrackPoint> piece;
    const bool reusable = pi >= 0 && static_cast<std::size_t>(pi) + 1 == previous->keyframes.size() &&
                          copy_range(*previous, last.frame + 1, range.last, piece) &&
                          (range.last == previous->points.rbegin()->first);
    if (!reusable) piece = end_piece(last, range.last);
    track.points.insert(piece.begin(), piece.end());
  }
  return track;
}

double recall_at(const Track& predicted, const GroundTruthTrack& truth, double tau, FrameRange range) {
  int evaluated = 0, hits = 0;
  for (const auto& [frame, gt] : truth.boxes) {
    if (!range.contains(frame)) continue;
    auto it = predicted.points.find(frame);
    if (it == predicted.points.end()) continue;
    ++evaluated;
    if (iou(it->second.box, gt) > tau) ++hits;
  }
  if (evaluated == 0) throw ValidationError("track", "prediction and ground truth share no frame");
  return static_cast<double>(hits) / evaluated;
}

void write_track_csv(std::ostream& out, const Track& track) {
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  out << "frame,x,y,w,h,provenance,confidence\n";
  for (const auto& [frame, p] : track.points) {
    out << frame << ',' << p.box.x << ',' << p.box.y << ',' << p.box.w << ',' << p.box.h << ',' << to_string(p.provenance)
        << ',' << p.confidence << '\n';
  }
  out.precision(old_precision);
}

}  // namespace vidann
