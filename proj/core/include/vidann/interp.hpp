#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <string_view>
#include <vector>

#include "vidann/features.hpp"
#include "vidann/geometry.hpp"
#include "vidann/media.hpp"

namespace vidann {

enum class Provenance : std::uint8_t { human, visual, blended, geometric };

std::string_view to_string(Provenance p) noexcept;
Provenance provenance_from_string(std::string_view text);

/// How boxes between keyframes are produced.
///   linear   - geometric interpolation, boxes held constant beyond the outer keyframes
///   tracking - single-template tracker restarted at every keyframe, running forward
///              (backward before the first keyframe), no geometric blending
///   visual   - multi-template visual interpolation blended with geometric interpolation
enum class TrackStrategy : std::uint8_t { linear, tracking, visual };

std::string_view to_string(TrackStrategy s) noexcept;
TrackStrategy track_strategy_from_string(std::string_view text);

struct TrackPoint {
  BoundingBox box;
  Provenance provenance = Provenance::visual;
  double confidence = 0.0;
  friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

/// Inclusive range of frame indices.
struct FrameRange {
  int first = 0;
  int last = 0;
  bool contains(int f) const noexcept { return f >= first && f <= last; }
  int size() const noexcept { return last - first + 1; }
  friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

struct Track {
  int object_id = 0;
  std::vector<Keyframe> keyframes;  // sorted by frame
  std::map<int, TrackPoint> points;

  bool contains(int frame) const { return points.contains(frame); }
  const BoundingBox& box(int frame) const { return points.at(frame).box; }
  friend bool operator==(const Track&, const Track&) = default;
};

struct InterpConfig {
  int templates = 2;      // K
  double delta = 10.0;    // geometric neighbourhood radius in frames
  double context_factor = kDefaultContextFactor;
  LocalizerConfig localizer;
  friend bool operator==(const InterpConfig&, const InterpConfig&) = default;
};

/// Throws ValidationError when K < 1, delta < 0 or context_factor < 1.
void validate(const InterpConfig& cfg);

/// The K keyframes nearest to target (ties toward earlier frames), ordered by frame.
/// Throws ContractViolation on an empty set or K < 1.
std::vector<Keyframe> select_templates(std::span<const Keyframe> keyframes, int target_frame, int k);

/// Sorts by frame and rejects duplicates (ValidationError) and invalid boxes.
std::vector<Keyframe> normalize_keyframes(std::vector<Keyframe> keyframes);

/// Keyframe-conditioned visual interpolation over one video. Thread-safe: methods are const and
/// the template feature cache is internally locked.
class VisualInterpolator {
 public:
  VisualInterpolator(std::shared_ptr<const FrameStore> store, std::shared_ptr<const FeatureExtractor> extractor,
                     InterpConfig cfg = {});

  const FrameStore& store() const noexcept { return *store_; }
  const FeatureExtractor& extractor() const noexcept { return *extractor_; }
  const InterpConfig& config() const noexcept { return cfg_; }

  /// Fused template features for a set of keyframes (element-wise max).
  FeatureMap template_features(std::span<const Keyframe> templates) const;

  /// One frame: search crops around the prior at every localizer scale, correlated with the
  /// fused template features.
  Localization predict_frame(int frame, std::span<const Keyframe> templates, const BoundingBox& prior) const;
  Localization predict_frame(int frame, const FeatureMap& fused_templates, const BoundingBox& prior) const;

  /// Interior frames of (left, right). Templates are drawn from the two bounding keyframes.
  std::map<int, TrackPoint> interpolate_segment(const Keyframe& left, const Keyframe& right) const;

  /// Sequential prediction from the anchor keyframe towards `to` (either direction), exclusive of
  /// the anchor, inclusive of `to`. The geometric box is held at the anchor box.
  std::map<int, TrackPoint> extrapolate(const Keyframe& anchor, int to) const;

  /// Full track over range for the given strategy. Keyframes outside the range are ignored.
  /// When `previous` is given, segments whose bounding keyframes are unchanged are copied from it
  /// (the result is identical to a full recomputation).
  Track interpolate_track(std::span<const Keyframe> keyframes, FrameRange range,
                          TrackStrategy strategy = TrackStrategy::visual, const Track* previous = nullptr) const;

 private:
  std::shared_ptr<const FeatureMap> template_feature(const Keyframe& kf) const;
  std::map<int, TrackPoint> linear_segment(const Keyframe& left, const Keyframe& right) const;
  std::map<int, TrackPoint> sequential(const Keyframe& anchor, int to, double delta) const;

  std::shared_ptr<const FrameStore> store_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  InterpConfig cfg_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::tuple<int, std::uint64_t, std::uint64_t, std::uint64_t, std::uint64_t>,
                   std::shared_ptr<const FeatureMap>>
      template_cache_;
};

/// Fraction of frames in both the prediction and the truth with IoU strictly above tau.
/// Throws ValidationError when they share no frame.
double recall_at(const Track& predicted, const GroundTruthTrack& truth, double tau,
                 FrameRange range = {0, std::numeric_limits<int>::max()});

/// CSV with header "frame,x,y,w,h,provenance,confidence", one row per frame.
void write_track_csv(std::ostream& out, const Track& track);

}  // namespace vidann
