#include "vidann/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "vidann/error.hpp"
#include "vidann/image.hpp"

namespace vidann {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(SessionStatus s) noexcept { return s == SessionStatus::active ? "active" : "finalized"; }

namespace {

void append_durably(const fs::path& path, const std::string& text) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw IoError("cannot write " + path.string() + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw IoError("cannot sync " + path.string());
}

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A record cut short by a crash was never acknowledged; drop it.
std::string read_complete_lines(const fs::path& path) {
  std::string text = read_text(path);
  const auto end = text.rfind('\n');
  const std::size_t keep = end == std::string::npos ? 0 : end + 1;
  if (keep != text.size()) {
    text.resize(keep);
    write_atomically(path, text);
  }
  return text;
}

json box_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

BoundingBox box_from(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

json result_json(const MutationResult& r) {
  json j = {{"keyframes", r.keyframes}, {"last_seq", r.last_seq}};
  j["suggestion"] = r.suggestion ? json(*r.suggestion) : json(nullptr);
  j["changed"] = r.changed ? json::array({r.changed->first, r.changed->last}) : json(nullptr);
  return j;
}

MutationResult result_from(const json& j) {
  MutationResult r;
  r.keyframes = j.at("keyframes").get<int>();
  r.last_seq = j.at("last_seq").get<long>();
  if (!j.at("suggestion").is_null()) r.suggestion = j.at("suggestion").get<int>();
  if (!j.at("changed").is_null()) r.changed = FrameRange{j.at("changed").at(0).get<int>(), j.at("changed").at(1).get<int>()};
  return r;
}

MutationResult make_result(const SessionState& before, const SessionState& after) {
  MutationResult r;
  r.suggestion = after.suggestion;
  r.changed = changed_range(before.track, after.track);
  r.keyframes = static_cast<int>(after.keyframes.size());
  r.last_seq = after.events.empty() ? -1 : after.events.back().seq;
  return r;
}

long parse_counter(const std::string& id, char prefix) {
  if (id.size() < 2 || id[0] != prefix) return 0;
  try {
    return std::stol(id.substr(1));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

struct AnnotationService::VideoSlot {
  VideoCatalogEntry entry;
  std::shared_ptr<const FrameStore> store;
  std::shared_ptr<const SessionEngine> engine;
};

struct AnnotationService::SessionSlot {
  struct Idempotent {
    int frame;
    BoundingBox box;
    MutationResult result;
  };
  SessionRecord record;
  std::shared_ptr<VideoSlot> video;
  std::unique_ptr<SessionHandle> handle;
  // Guarded by the handle's writer lock.
  std::map<std::string, Idempotent> keys;
  std::size_t persisted = 0;
  int since_snapshot = 0;
};

AnnotationService::AnnotationService(ServiceConfig config) : config_(std::move(config)) {
  if (config_.data_dir.empty()) throw ValidationError("data_dir", "must be set");
  if (!config_.extractor) config_.extractor = std::make_shared<GradientExtractor>();
  if (config_.snapshot_every < 1) throw ValidationError("snapshot_every", "must be >= 1");
  validate(config_.interp);
  validate(config_.guidance);
  fs::create_directories(config_.data_dir / "sessions");
  recover();
}

AnnotationService::~AnnotationService() = default;

std::shared_ptr<AnnotationService::VideoSlot> AnnotationService::open_video(const VideoCatalogEntry& entry) const {
  auto slot = std::make_shared<VideoSlot>();
  slot->entry = entry;
  slot->store = load_frame_sequence(entry.directory);
  slot->engine = std::make_shared<SessionEngine>(slot->store, config_.extractor, config_.head, config_.clock);
  return slot;
}

void AnnotationService::save_catalog() const {
  json videos = json::array();
  for (const auto& [id, slot] : videos_) {
    const auto& e = slot->entry;
    json v = {{"id", e.id},
              {"directory", e.directory.string()},
              {"frame_count", e.frame_count},
              {"width", e.width},
              {"height", e.height}};
    v["ground_truth"] = e.ground_truth ? json(e.ground_truth->string()) : json(nullptr);
    videos.push_back(v);
  }
  write_atomically(config_.data_dir / "catalog.json", json{{"next_video", next_video_}, {"videos", videos}}.dump(1));
}

void AnnotationService::recover() {
  const fs::path catalog = config_.data_dir / "catalog.json";
  if (fs::exists(catalog)) {
    try {
      const json j = json::parse(read_text(catalog));
      next_video_ = j.at("next_video").get<long>();
      for (const auto& v : j.at("videos")) {
        VideoCatalogEntry e;
        e.id = v.at("id").get<std::string>();
        e.directory = v.at("directory").get<std::string>();
        e.frame_count = v.at("frame_count").get<int>();
        e.width = v.at("width").get<int>();
        e.height = v.at("height").get<int>();
        if (!v.at("ground_truth").is_null()) e.ground_truth = fs::path(v.at("ground_truth").get<std::string>());
        videos_[e.id] = open_video(e);
      }
    } catch (const json::exception& e) {
      throw ParseError(catalog.string(), 0, e.what());
    }
  }
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(config_.data_dir / "sessions")) {
    if (d.is_directory() && fs::exists(d.path() / "events.jsonl")) dirs.push_back(d.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::istringstream in(read_complete_lines(dir / "events.jsonl"));
    const auto events = read_events_jsonl(in, (dir / "events.jsonl").string());
    if (events.empty()) continue;  // crashed before the first record was acknowledged
    const SessionConfig& sc = events.front().config.value();
    auto slot = std::make_shared<SessionSlot>();
    slot->video = video_slot(sc.video);
    SessionState state = slot->video->engine->replay(events);
    slot->record = {sc.session_id, sc.video, sc.object_id,
                    state.finalized ? SessionStatus::finalized : SessionStatus::active, dir / "events.jsonl",
                    dir / "snapshot.json"};
    slot->persisted = state.events.size();
    if (fs::exists(dir / "idempotency.jsonl")) {
      std::istringstream keys(read_complete_lines(dir / "idempotency.jsonl"));
      std::string line;
      while (std::getline(keys, line)) {
        const json k = json::parse(line);
        slot->keys[k.at("key").get<std::string>()] = {k.at("frame").get<int>(), box_from(k.at("box")),
                                                      result_from(k.at("result"))};
      }
    }
    write_atomically(slot->record.snapshot_path, snapshot_to_json(state));
    slot->handle = std::make_unique<SessionHandle>(std::move(state));
    next_session_ = std::max(next_session_, parse_counter(sc.session_id, 's') + 1);
    sessions_[sc.session_id] = std::move(slot);
  }
}

std::shared_ptr<AnnotationService::VideoSlot> AnnotationService::video_slot(const std::string& video_id) const {
  const auto it = videos_.find(video_id);
  if (it == videos_.end()) throw NotFound("unknown video '" + video_id + "'");
  return it->second;
}

std::shared_ptr<AnnotationService::SessionSlot> AnnotationService::session_slot(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + session_id + "'");
  return it->second;
}

VideoCatalogEntry AnnotationService::register_video(const fs::path& directory,
                                                    const std::optional<fs::path>& ground_truth) {
  if (!fs::is_directory(directory)) throw IoError("not a directory: " + directory.string());
  const fs::path canonical = fs::weakly_canonical(directory);
  std::optional<fs::path> gt;
  if (ground_truth) {
    if (!fs::is_regular_file(*ground_truth)) throw ValidationError("ground_truth", "no such file: " + ground_truth->string());
    gt = fs::weakly_canonical(*ground_truth);
  }
  std::unique_lock lock(mutex_);
  for (const auto& [id, slot] : videos_) {
    if (slot->entry.directory == canonical) return slot->entry;
  }
  VideoCatalogEntry e;
  e.id = "v" + std::to_string(next_video_);
  e.directory = canonical;
  e.ground_truth = gt;
  auto store = load_frame_sequence(canonical);
  e.frame_count = store->frame_count();
  e.width = store->width();
  e.height = store->height();
  auto slot = std::make_shared<VideoSlot>();
  slot->entry = e;
  slot->store = std::move(store);
  slot->engine = std::make_shared<SessionEngine>(slot->store, config_.extractor, config_.head, config_.clock);
  videos_[e.id] = slot;
  ++next_video_;
  save_catalog();
  return e;
}

VideoCatalogEntry AnnotationService::video(const std::string& video_id) const {
  std::shared_lock lock(mutex_);
  return video_slot(video_id)->entry;
}

std::vector<VideoCatalogEntry> AnnotationService::videos() const {
  std::shared_lock lock(mutex_);
  std::vector<VideoCatalogEntry> out;
  for (const auto& [id, slot] : videos_) out.push_back(slot->entry);
  return out;
}

std::string AnnotationService::create_session(const std::string& video_id, int object_id, int frame,
                                              const BoundingBox& box, const SessionOptions& options) {
  std::shared_ptr<VideoSlot> video;
  long number = 0;
  {
    std::unique_lock lock(mutex_);
    video = video_slot(video_id);
    number = next_session_++;
  }
  SessionConfig sc;
  sc.session_id = "s" + std::to_string(number);
  sc.video = video_id;
  sc.object_id = object_id;
  sc.interp = config_.interp;
  sc.guidance = config_.guidance;
  sc.strategy = options.strategy.value_or(config_.strategy);
  sc.suggestions = options.suggestions.value_or(config_.suggestions);
  sc.seed = options.seed.value_or(static_cast<std::uint64_t>(number));
  SessionState state = video->engine->start(sc, frame, box);

  const fs::path dir = config_.data_dir / "sessions" / sc.session_id;
  fs::create_directories(dir);
  auto slot = std::make_shared<SessionSlot>();
  slot->record = {sc.session_id, video_id, object_id, SessionStatus::active, dir / "events.jsonl", dir / "snapshot.json"};
  slot->video = video;
  std::ostringstream log;
  write_events_jsonl(log, state.events);
  append_durably(slot->record.events_path, log.str());
  slot->persisted = state.events.size();
  write_atomically(slot->record.snapshot_path, snapshot_to_json(state));
  slot->handle = std::make_unique<SessionHandle>(std::move(state));
  std::unique_lock lock(mutex_);
  sessions_[sc.session_id] = std::move(slot);
  return sc.session_id;
}

MutationResult AnnotationService::mutate(SessionSlot& slot,
                                         const std::function<SessionState(const SessionEngine&, const SessionState&)>& fn,
                                         const std::function<void(const MutationResult&)>& after_commit) {
  MutationResult result;
  slot.handle->update(
      [&](const SessionState& current) {
        SessionState next = fn(*slot.video->engine, current);
        result = make_result(current, next);
        return next;
      },
      [&](const SessionState& next) {
        if (next.events.size() > slot.persisted) {
          std::ostringstream log;
          write_events_jsonl(log, std::span(next.events).subspan(slot.persisted));
          append_durably(slot.record.events_path, log.str());
          slot.persisted = next.events.size();
          ++slot.since_snapshot;
        }
        if (after_commit) after_commit(result);
        if (slot.since_snapshot >= config_.snapshot_every || next.finalized) {
          write_atomically(slot.record.snapshot_path, snapshot_to_json(next));
          slot.since_snapshot = 0;
        }
      });
  return result;
}

MutationResult AnnotationService::post_keyframe(const std::string& session_id, int frame, const BoundingBox& box,
                                                const std::optional<std::string>& idempotency_key) {
  auto slot = session_slot(session_id);
  std::optional<MutationResult> replayed;
  const MutationResult result = mutate(
      *slot,
      [&](const SessionEngine& engine, const SessionState& current) {
        if (idempotency_key) {
          const auto it = slot->keys.find(*idempotency_key);
          if (it != slot->keys.end()) {
            if (it->second.frame != frame || !(it->second.box == box)) {
              throw Conflict("idempotency key '" + *idempotency_key + "' was used for a different keyframe");
            }
            replayed = it->second.result;
            return current;
          }
        }
        return engine.add_keyframe(current, frame, box);
      },
      [&](const MutationResult& r) {
        if (replayed || !idempotency_key) return;
        // Recorded after the event log: a crash in between makes a retry fail as a duplicate
        // keyframe instead of silently adding a second one.
        append_durably(slot->record.events_path.parent_path() / "idempotency.jsonl",
                       json{{"key", *idempotency_key}, {"frame", frame}, {"box", box_json(box)}, {"result", result_json(r)}}
                               .dump() +
                           "\n");
        slot->keys[*idempotency_key] = {frame, box, r};
      });
  if (replayed) return *replayed;
  return result;
}

MutationResult AnnotationService::delete_keyframe(const std::string& session_id, int frame) {
  auto slot = session_slot(session_id);
  return mutate(*slot, [&](const SessionEngine& engine, const SessionState& s) { return engine.remove_keyframe(s, frame); });
}

TrackSlice AnnotationService::get_track(const std::string& session_id, std::optional<int> from, std::optional<int> to) const {
  auto slot = session_slot(session_id);
  const auto state = slot->handle->snapshot();
  const int last = slot->video->entry.frame_count - 1;
  const int a = std::max(0, from.value_or(0));
  const int b = std::min(last, to.value_or(last));
  if (from && to && *from > *to) throw ValidationError("from", "must not exceed to");
  TrackSlice out;
  out.range = {a, b};
  for (auto it = state->track.points.lower_bound(a); it != state->track.points.end() && it->first <= b; ++it) {
    out.points.emplace_back(it->first, it->second);
  }
  out.keyframes = state->keyframes;
  out.suggestion = state->suggestion;
  out.finalized = state->finalized;
  return out;
}

std::optional<int> AnnotationService::get_suggestion(const std::string& session_id) const {
  return session_slot(session_id)->handle->snapshot()->suggestion;
}

std::vector<std::uint8_t> AnnotationService::get_frame(const std::string& video_id, int frame) const {
  std::shared_ptr<VideoSlot> slot;
  {
    std::shared_lock lock(mutex_);
    slot = video_slot(video_id);
  }
  if (frame < 0 || frame >= slot->entry.frame_count) {
    throw NotFound("frame " + std::to_string(frame) + " outside video '" + video_id + "'");
  }
  return encode_png(*slot->store->frame(frame));
}

fs::path AnnotationService::finalize_session(const std::string& session_id) {
  auto slot = session_slot(session_id);
  const fs::path out = slot->record.events_path.parent_path() / "track.csv";
  mutate(*slot, [](const SessionEngine& engine, const SessionState& s) { return engine.finalize(s); });
  const auto state = slot->handle->snapshot();
  std::ostringstream csv;
  write_track_csv(csv, state->track);
  write_atomically(out, csv.str());
  return out;
}

SessionRecord AnnotationService::record(const std::string& session_id) const {
  auto slot = session_slot(session_id);
  SessionRecord r = slot->record;
  r.status = slot->handle->snapshot()->finalized ? SessionStatus::finalized : SessionStatus::active;
  return r;
}

std::vector<SessionRecord> AnnotationService::sessions() const {
  std::vector<std::string> ids;
  {
    std::shared_lock lock(mutex_);
    for (const auto& [id, slot] : sessions_) ids.push_back(id);
  }
  std::vector<SessionRecord> out;
  for (const auto& id : ids) out.push_back(record(id));
  return out;
}

std::shared_ptr<const SessionState> AnnotationService::state(const std::string& session_id) const {
  return session_slot(session_id)->handle->snapshot();
}

}  // namespace vidann
