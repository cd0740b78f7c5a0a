#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vidann/guidance.hpp"
#include "vidann/interp.hpp"

namespace vidann {

struct SessionConfig {
  std::string session_id;
  std::string video;  // catalog id or video reference
  int object_id = 0;
  InterpConfig interp;
  GuidanceConfig guidance;
  TrackStrategy strategy = TrackStrategy::visual;
  std::uint64_t seed = 0;    // reference-frame sampling
  bool suggestions = true;   // false: never compute a suggestion
  friend bool operator==(const SessionConfig&, const SessionConfig&) = default;
};

enum class EventKind : std::uint8_t {
  session_start,
  keyframe_added,
  keyframe_removed,
  suggestion_issued,
  suggestion_overridden,
  finalized
};

std::string_view to_string(EventKind kind) noexcept;
EventKind event_kind_from_string(std::string_view text);

/// One log record. Which fields are meaningful depends on kind:
///   session_start          config, frame, box (the first keyframe)
///   keyframe_added         frame, box
///   keyframe_removed       frame
///   suggestion_issued      suggestion (empty when none remains)
///   suggestion_overridden  frame (annotated), suggestion (the one that was pending)
///   finalized              -
struct AnnotationEvent {
  long seq = 0;
  double timestamp = 0.0;  // seconds
  EventKind kind = EventKind::session_start;
  int frame = -1;
  std::optional<BoundingBox> box;
  std::optional<int> suggestion;
  std::optional<SessionConfig> config;
  friend bool operator==(const AnnotationEvent&, const AnnotationEvent&) = default;
};

/// Immutable value; every operation returns a new state.
struct SessionState {
  SessionConfig config;
  std::vector<Keyframe> keyframes;  // ordered by frame
  Track track;
  std::optional<int> suggestion;
  std::vector<AnnotationEvent> events;
  bool finalized = false;
  friend bool operator==(const SessionState&, const SessionState&) = default;
};

struct SessionSummary {
  int n_box = 0;
  int keyframes_added = 0;    // after the first keyframe
  int keyframes_removed = 0;
  int suggestions_issued = 0;
  int overrides = 0;
  double elapsed_seconds = 0.0;  // first to last event
  friend bool operator==(const SessionSummary&, const SessionSummary&) = default;
};

using Clock = std::function<double()>;

/// Seconds since the Unix epoch from the system clock.
double system_clock_seconds();

/// Inclusive frame range over which two tracks differ, if any.
std::optional<FrameRange> changed_range(const Track& before, const Track& after);

/// The session state machine for one video. Thread-safe; holds no per-session state.
class SessionEngine {
 public:
  SessionEngine(std::shared_ptr<const FrameStore> store, std::shared_ptr<const FeatureExtractor> extractor,
                std::shared_ptr<const RankingHeadParams> head = nullptr, Clock clock = system_clock_seconds);

  const FrameStore& store() const noexcept { return *store_; }

  /// Throws ValidationError for an out-of-range frame, an invalid box or invalid configs.
  SessionState start(const SessionConfig& config, int frame, const BoundingBox& box) const;
  /// Throws Conflict on a finalized session, ValidationError on a duplicate frame or invalid box.
  SessionState add_keyframe(const SessionState& state, int frame, const BoundingBox& box) const;
  /// Throws Conflict on a finalized session, NotFound for a non-keyframe, ValidationError for the
  /// last remaining keyframe.
  SessionState remove_keyframe(const SessionState& state, int frame) const;
  /// Idempotent: finalizing a finalized state returns it unchanged.
  SessionState finalize(const SessionState& state) const;

  /// Rebuilds a state from its event log; ValidationError when the log is inconsistent.
  SessionState replay(std::span<const AnnotationEvent> events) const;

  /// Engine used for a given interpolation config (cached).
  std::shared_ptr<const VisualInterpolator> interpolator(const InterpConfig& cfg) const;

 private:
  SessionState start_at(const SessionConfig& config, int frame, const BoundingBox& box, double ts) const;
  SessionState add_at(const SessionState& state, int frame, const BoundingBox& box, double ts) const;
  SessionState remove_at(const SessionState& state, int frame, double ts) const;
  SessionState finalize_at(const SessionState& state, double ts) const;
  void refresh(SessionState& next, const SessionState* previous, double ts) const;
  std::optional<int> suggest(const SessionState& state, long seq) const;

  std::shared_ptr<const FrameStore> store_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  std::shared_ptr<const RankingHeadParams> head_;
  Clock clock_;
  mutable std::mutex mutex_;
  mutable std::vector<std::pair<InterpConfig, std::shared_ptr<const VisualInterpolator>>> interpolators_;
};

SessionSummary summarize(const SessionState& state);

/// Serializes mutations of one session; readers get consistent snapshots without waiting for writers.
class SessionHandle {
 public:
  explicit SessionHandle(SessionState initial);

  std::shared_ptr<const SessionState> snapshot() const;

  /// Runs fn on the current state under the writer lock and publishes its result. fn may throw,
  /// in which case nothing changes. `commit` runs under the writer lock before publication (used
  /// for durable logging).
  std::shared_ptr<const SessionState> update(const std::function<SessionState(const SessionState&)>& fn,
                                             const std::function<void(const SessionState&)>& commit = {});

 private:
  std::mutex writer_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const SessionState> state_;
};

/// One JSON object per line; see docs/formats.md.
std::string event_to_json(const AnnotationEvent& event);
AnnotationEvent event_from_json(const std::string& line);
void write_events_jsonl(std::ostream& out, std::span<const AnnotationEvent> events);
std::vector<AnnotationEvent> read_events_jsonl(std::istream& in, const std::string& source = "<stream>");

/// Structured snapshot document (JSON).
std::string snapshot_to_json(const SessionState& state);
SessionState snapshot_from_json(const std::string& text);

std::string config_to_json(const SessionConfig& config);
SessionConfig config_from_json(const std::string& text);

}  // namespace vidann
