#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "vidann/session.hpp"

namespace vidann {

struct VideoCatalogEntry {
  std::string id;
  std::filesystem::path directory;
  int frame_count = 0;
  int width = 0;
  int height = 0;
  std::optional<std::filesystem::path> ground_truth;
  friend bool operator==(const VideoCatalogEntry&, const VideoCatalogEntry&) = default;
};

enum class SessionStatus : std::uint8_t { active, finalized };
std::string_view to_string(SessionStatus s) noexcept;

struct SessionRecord {
  std::string id;
  std::string video_id;
  int object_id = 0;
  SessionStatus status = SessionStatus::active;
  std::filesystem::path events_path;
  std::filesystem::path snapshot_path;
};

struct ServiceConfig {
  std::filesystem::path data_dir;
  std::shared_ptr<const FeatureExtractor> extractor;  // null: GradientExtractor
  std::shared_ptr<const RankingHeadParams> head;      // null: every candidate ties
  InterpConfig interp;
  GuidanceConfig guidance;
  TrackStrategy strategy = TrackStrategy::visual;
  bool suggestions = true;
  int snapshot_every = 8;  // mutations between snapshot rewrites
  Clock clock = system_clock_seconds;
};

/// Per-session overrides accepted by create_session.
struct SessionOptions {
  std::optional<TrackStrategy> strategy;
  std::optional<bool> suggestions;
  std::optional<std::uint64_t> seed;
};

struct MutationResult {
  std::optional<int> suggestion;
  std::optional<FrameRange> changed;  // frames whose box or provenance changed
  int keyframes = 0;
  long last_seq = 0;
  friend bool operator==(const MutationResult&, const MutationResult&) = default;
};

struct TrackSlice {
  FrameRange range;
  std::vector<std::pair<int, TrackPoint>> points;  // ascending frames within range
  std::vector<Keyframe> keyframes;                 // all keyframes of the session
  std::optional<int> suggestion;
  bool finalized = false;
};

/// Live annotation backend: video catalog plus file-backed sessions.
///
/// Layout under data_dir:
///   catalog.json
///   sessions/<id>/events.jsonl      append-only, fsynced before a mutation is acknowledged
///   sessions/<id>/snapshot.json     rewritten every snapshot_every mutations and on finalize
///   sessions/<id>/idempotency.jsonl keys of acknowledged post_keyframe calls
///   sessions/<id>/track.csv         export written by finalize_session
///
/// Construction recovers every session by replaying its event log. All methods are thread-safe;
/// mutations of one session serialize, reads take a snapshot without blocking writers.
class AnnotationService {
 public:
  explicit AnnotationService(ServiceConfig config);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  /// Validates the frame directory; registering the same directory twice returns the existing
  /// entry. Throws IoError/ValidationError for unusable directories.
  VideoCatalogEntry register_video(const std::filesystem::path& directory,
                                   const std::optional<std::filesystem::path>& ground_truth = {});
  VideoCatalogEntry video(const std::string& video_id) const;
  std::vector<VideoCatalogEntry> videos() const;

  /// Returns the new session id.
  std::string create_session(const std::string& video_id, int object_id, int frame, const BoundingBox& box,
                             const SessionOptions& options = {});
  /// A retry carrying an already acknowledged idempotency key returns the original result; the same
  /// key with a different frame or box is a Conflict.
  MutationResult post_keyframe(const std::string& session_id, int frame, const BoundingBox& box,
                               const std::optional<std::string>& idempotency_key = {});
  MutationResult delete_keyframe(const std::string& session_id, int frame);
  /// Defaults to the whole video; the range is clamped to it. ValidationError when from > to.
  TrackSlice get_track(const std::string& session_id, std::optional<int> from = {}, std::optional<int> to = {}) const;
  std::optional<int> get_suggestion(const std::string& session_id) const;
  /// PNG bytes of an 8-bit grayscale frame.
  std::vector<std::uint8_t> get_frame(const std::string& video_id, int frame) const;
  /// Idempotent; returns the path of the exported track CSV.
  std::filesystem::path finalize_session(const std::string& session_id);

  SessionRecord record(const std::string& session_id) const;
  std::vector<SessionRecord> sessions() const;
  std::shared_ptr<const SessionState> state(const std::string& session_id) const;

 private:
  struct VideoSlot;
  struct SessionSlot;

  std::shared_ptr<VideoSlot> video_slot(const std::string& video_id) const;
  std::shared_ptr<SessionSlot> session_slot(const std::string& session_id) const;
  std::shared_ptr<VideoSlot> open_video(const VideoCatalogEntry& entry) const;
  void save_catalog() const;
  void recover();
  MutationResult mutate(SessionSlot& slot, const std::function<SessionState(const SessionEngine&, const SessionState&)>& fn,
                        const std::function<void(const MutationResult&)>& after_commit = {});

  ServiceConfig config_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<VideoSlot>> videos_;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
  long next_video_ = 1;
  long next_session_ = 1;
};

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Transport-independent router for the HTTP endpoints (see docs/formats.md). Errors map to
/// 400 (malformed request), 404 (unknown id), 409 (conflict) and 422 (validation, with field).
ApiResponse handle_request(AnnotationService& service, const ApiRequest& request);

/// Minimal HTTP/1.1 server around handle_request.
class HttpServer {
 public:
  explicit HttpServer(AnnotationService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port or throws IoError.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vidann
