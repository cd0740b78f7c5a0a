#include "vidann/session.hpp"

#include <algorithm>
#include <chrono>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "vidann/error.hpp"
#include "vidann/random.hpp"

namespace vidann {

using nlohmann::json;

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::session_start: return "session_start";
    case EventKind::keyframe_added: return "keyframe_added";
    case EventKind::keyframe_removed: return "keyframe_removed";
    case EventKind::suggestion_issued: return "suggestion_issued";
    case EventKind::suggestion_overridden: return "suggestion_overridden";
    case EventKind::finalized: return "finalized";
  }
  return "session_start";
}

EventKind event_kind_from_string(std::string_view text) {
  for (auto k : {EventKind::session_start, EventKind::keyframe_added, EventKind::keyframe_removed,
                 EventKind::suggestion_issued, EventKind::suggestion_overridden, EventKind::finalized}) {
    if (to_string(k) == text) return k;
  }
  throw ValidationError("kind", "unknown event kind '" + std::string(text) + "'");
}

double system_clock_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::optional<FrameRange> changed_range(const Track& before, const Track& after) {
  std::optional<FrameRange> range;
  auto mark = [&](int f) {
    if (!range) range = FrameRange{f, f};
    range->first = std::min(range->first, f);
    range->last = std::max(range->last, f);
  };
  for (const auto& [f, p] : before.points) {
    auto it = after.points.find(f);
    if (it == after.points.end() || !(it->second == p)) mark(f);
  }
  for (const auto& [f, p] : after.points) {
    if (!before.points.contains(f)) mark(f);
  }
  return range;
}

// ---------------------------------------------------------------------------------------------

SessionEngine::SessionEngine(std::shared_ptr<const FrameStore> store, std::shared_ptr<const FeatureExtractor> extractor,
                             std::shared_ptr<const RankingHeadParams> head, Clock clock)
    : store_(std::move(store)), extractor_(std::move(extractor)), head_(std::move(head)), clock_(std::move(clock)) {
  if (!store_ || !extractor_) throw ContractViolation("SessionEngine: null store or extractor");
  if (!clock_) clock_ = system_clock_seconds;
}

std::shared_ptr<const VisualInterpolator> SessionEngine::interpolator(const InterpConfig& cfg) const {
  std::lock_guard lock(mutex_);
  for (const auto& [c, engine] : interpolators_) {
    if (c == cfg) return engine;
  }
  auto engine = std::make_shared<const VisualInterpolator>(store_, extractor_, cfg);
  interpolators_.emplace_back(cfg, engine);
  return engine;
}

std::optional<int> SessionEngine::suggest(const SessionState& state, long seq) const {
  const auto& cfg = state.config.guidance;
  std::vector<int> annotated;
  for (const auto& kf : state.keyframes) annotated.push_back(kf.frame);
  const std::vector<int> candidates = sample_candidates(annotated, store_->frame_count(), cfg);
  if (candidates.empty()) return std::nullopt;
  const RankingHeadParams zero = RankingHeadParams::zeros(
      HeadArchitecture{extractor_->channels(), 16, 3, cfg.references + 2, 32});
  const RankingHeadParams& head = head_ ? *head_ : zero;
  if (head.arch.frames != cfg.references + 2) {
    throw ValidationError("guidance.references",
                          "ranking head expects " + std::to_string(head.arch.frames - 2) + " reference frames");
  }
  const GuidanceContext ctx(store_, extractor_, guidance_templates(state.keyframes, cfg),
                            sample_references(annotated, store_->frame_count(), cfg.references,
                                              mix_seed(state.config.seed, static_cast<std::uint64_t>(seq))),
                            cfg.frame_resolution);
  return select_next_frame(candidates, ctx, head).frame;
}

void SessionEngine::refresh(SessionState& next, const SessionState* previous, double ts) const {
  next.track = interpolator(next.config.interp)
                   ->interpolate_track(next.keyframes, {0, store_->frame_count() - 1}, next.config.strategy,
                                       previous ? &previous->track : nullptr);
  next.track.object_id = next.config.object_id;
  next.suggestion.reset();
  if (!next.config.suggestions) return;
  const long seq = static_cast<long>(next.events.size());
  next.suggestion = suggest(next, seq);
  AnnotationEvent e;
  e.seq = seq;
  e.timestamp = ts;
  e.kind = EventKind::suggestion_issued;
  e.suggestion = next.suggestion;
  next.events.push_back(e);
}

namespace {

void check_frame(const FrameStore& store, int frame) {
  if (frame < 0 || frame >= store.frame_count()) {
    throw ValidationError("frame", "frame " + std::to_string(frame) + " outside [0, " +
                                       std::to_string(store.frame_count() - 1) + "]");
  }
}

AnnotationEvent make_event(const SessionState& s, double ts, EventKind kind) {
  AnnotationEvent e;
  e.seq = static_cast<long>(s.events.size());
  e.timestamp = ts;
  e.kind = kind;
  return e;
}

}  // namespace

SessionState SessionEngine::start_at(const SessionConfig& config, int frame, const BoundingBox& box, double ts) const {
  validate(config.interp);
  if (config.suggestions) validate(config.guidance);
  check_frame(*store_, frame);
  validate(box);
  SessionState s;
  s.config = config;
  s.keyframes = {Keyframe{frame, box, KeyframeSource::human}};
  AnnotationEvent e = make_event(s, ts, EventKind::session_start);
  e.frame = frame;
  e.box = box;
  e.config = config;
  s.events.push_back(e);
  refresh(s, nullptr, ts);
  return s;
}

SessionState SessionEngine::add_at(const SessionState& state, int frame, const BoundingBox& box, double ts) const {
  if (state.finalized) throw Conflict("session " + state.config.session_id + " is finalized");
  check_frame(*store_, frame);
  validate(box);
  auto pos = std::lower_bound(state.keyframes.begin(), state.keyframes.end(), frame,
                              [](const Keyframe& k, int f) { return k.frame < f; });
  if (pos != state.keyframes.end() && pos->frame == frame) {
    throw ValidationError("frame", "frame " + std::to_string(frame) + " is already a keyframe");
  }
  SessionState next = state;
  next.keyframes.insert(next.keyframes.begin() + (pos - state.keyframes.begin()), Keyframe{frame, box, KeyframeSource::human});
  AnnotationEvent added = make_event(next, ts, EventKind::keyframe_added);
  added.frame = frame;
  added.box = box;
  next.events.push_back(added);
  if (state.suggestion && *state.suggestion != frame) {
    AnnotationEvent over = make_event(next, ts, EventKind::suggestion_overridden);
    over.frame = frame;
    over.suggestion = state.suggestion;
    next.events.push_back(over);
  }
  refresh(next, &state, ts);
  return next;
}

SessionState SessionEngine::remove_at(const SessionState& state, int frame, double ts) const {
  if (state.finalized) throw Conflict("session " + state.config.session_id + " is finalized");
  auto pos = std::find_if(state.keyframes.begin(), state.keyframes.end(), [frame](const Keyframe& k) { return k.frame == frame; });
  if (pos == state.keyframes.end()) throw NotFound("frame " + std::to_string(frame) + " is not a keyframe");
  if (state.keyframes.size() == 1) throw ValidationError("frame", "cannot remove the only keyframe");
  SessionState next = state;
  next.keyframes.erase(next.keyframes.begin() + (pos - state.keyframes.begin()));
  AnnotationEvent removed = make_event(next, ts, EventKind::keyframe_removed);
  removed.frame = frame;
  next.events.push_back(removed);
  refresh(next, &state, ts);
  return next;
}

SessionState SessionEngine::finalize_at(const SessionState& state, double ts) const {
  if (state.finalized) return state;
  SessionState next = state;
  next.events.push_back(make_event(next, ts, EventKind::finalized));
  next.finalized = true;
  return next;
}

SessionState SessionEngine::start(const SessionConfig& config, int frame, const BoundingBox& box) const {
  return start_at(config, frame, box, clock_());
}

SessionState SessionEngine::add_keyframe(const SessionState& state, int frame, const BoundingBox& box) const {
  return add_at(state, frame, box, clock_());
}

SessionState SessionEngine::remove_keyframe(const SessionState& state, int frame) const {
  return remove_at(state, frame, clock_());
}

SessionState SessionEngine::finalize(const SessionState& state) const {
  if (state.finalized) return state;
  return finalize_at(state, clock_());
}

SessionState SessionEngine::replay(std::span<const AnnotationEvent> events) const {
  if (events.empty() || events.front().kind != EventKind::session_start || !events.front().config ||
      !events.front().box) {
    throw ValidationError("events", "log must begin with a complete session_start event");
  }
  auto check_prefix = [&](const SessionState& s) {
    if (s.events.size() > events.size() || !std::equal(s.events.begin(), s.events.end(), events.begin())) {
      throw ValidationError("events", "log diverges from the recomputed session at seq " +
                                          std::to_string(std::min(s.events.size(), events.size()) - 1));
    }
  };
  const auto& first = events.front();
  SessionState s = start_at(*first.config, first.frame, *first.box, first.timestamp);
  check_prefix(s);
  while (s.events.size() < events.size()) {
    const AnnotationEvent& e = events[s.events.size()];
    switch (e.kind) {
      case EventKind::keyframe_added:
        if (!e.box) throw ValidationError("events", "keyframe_added without a box");
        s = add_at(s, e.frame, *e.box, e.timestamp);
        break;
      case EventKind::keyframe_removed: s = remove_at(s, e.frame, e.timestamp); break;
      case EventKind::finalized: s = finalize_at(s, e.timestamp); break;
      default:
        throw ValidationError("events", "unexpected " + std::string(to_string(e.kind)) + " event at seq " + std::to_string(e.seq));
    }
    check_prefix(s);
  }
  return s;
}

SessionSummary summarize(const SessionState& state) {
  SessionSummary sum;
  sum.n_box = static_cast<int>(state.keyframes.size());
  for (const auto& e : state.events) {
    switch (e.kind) {
      case EventKind::keyframe_added: ++sum.keyframes_added; break;
      case EventKind::keyframe_removed: ++sum.keyframes_removed; break;
      case EventKind::suggestion_issued: ++sum.suggestions_issued; break;
      case EventKind::suggestion_overridden: ++sum.overrides; break;
      default: break;
    }
  }
  if (!state.events.empty()) sum.elapsed_seconds = state.events.back().timestamp - state.events.front().timestamp;
  return sum;
}

// ---------------------------------------------------------------------------------------------

SessionHandle::SessionHandle(SessionState initial) : state_(std::make_shared<const SessionState>(std::move(initial))) {}

std::shared_ptr<const SessionState> SessionHandle::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return state_;
}

std::shared_ptr<const SessionState> SessionHandle::update(const std::function<SessionState(const SessionState&)>& fn,
                                                          const std::function<void(const SessionState&)>& commit) {
  std::lock_guard writer(writer_);
  auto next = std::make_shared<const SessionState>(fn(*snapshot()));
  if (commit) commit(*next);
  std::lock_guard lock(snapshot_mutex_);
  state_ = next;
  return next;
}

// ---------------------------------------------------------------------------------------------

namespace {

json box_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

BoundingBox box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("box", "expected [x, y, w, h]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json config_json(const SessionConfig& c) {
  return {{"session_id", c.session_id},
          {"video", c.video},
          {"object_id", c.object_id},
          {"strategy", std::string(to_string(c.strategy))},
          {"seed", c.seed},
          {"suggestions", c.suggestions},
          {"interp",
           {{"templates", c.interp.templates},
            {"delta", c.interp.delta},
            {"context_factor", c.interp.context_factor},
            {"scales", c.interp.localizer.scales},
            {"cosine_weight", c.interp.localizer.cosine_weight},
            {"scale_damping", c.interp.localizer.scale_damping}}},
          {"guidance",
           {{"horizon", c.guidance.horizon},
            {"candidate_count", c.guidance.candidate_count},
            {"references", c.guidance.references},
            {"templates", c.guidance.templates},
            {"frame_resolution", c.guidance.frame_resolution}}}};
}

SessionConfig config_from(const json& j) {
  SessionConfig c;
  c.session_id = j.at("session_id").get<std::string>();
  c.video = j.at("video").get<std::string>();
  c.object_id = j.at("object_id").get<int>();
  c.strategy = track_strategy_from_string(j.at("strategy").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.suggestions = j.at("suggestions").get<bool>();
  const auto& i = j.at("interp");
  c.interp.templates = i.at("templates").get<int>();
  c.interp.delta = i.at("delta").get<double>();
  c.interp.context_factor = i.at("context_factor").get<double>();
  c.interp.localizer.scales = i.at("scales").get<std::vector<double>>();
  c.interp.localizer.cosine_weight = i.at("cosine_weight").get<double>();
  c.interp.localizer.scale_damping = i.at("scale_damping").get<double>();
  const auto& g = j.at("guidance");
  c.guidance.horizon = g.at("horizon").get<int>();
  c.guidance.candidate_count = g.at("candidate_count").get<int>();
  c.guidance.references = g.at("references").get<int>();
  c.guidance.templates = g.at("templates").get<int>();
  c.guidance.frame_resolution = g.at("frame_resolution").get<int>();
  return c;
}

json event_json(const AnnotationEvent& e) {
  json j = {{"seq", e.seq}, {"ts", e.timestamp}, {"kind", std::string(to_string(e.kind))}};
  if (e.frame >= 0) j["frame"] = e.frame;
  if (e.box) j["box"] = box_json(*e.box);
  if (e.kind == EventKind::suggestion_issued || e.kind == EventKind::suggestion_overridden) {
    j["suggestion"] = e.suggestion ? json(*e.suggestion) : json(nullptr);
  }
  if (e.config) j["config"] = config_json(*e.config);
  return j;
}

AnnotationEvent event_from(const json& j) {
  AnnotationEvent e;
  e.seq = j.at("seq").get<long>();
  e.timestamp = j.at("ts").get<double>();
  e.kind = event_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("frame")) e.frame = j.at("frame").get<int>();
  if (j.contains("box")) e.box = box_from(j.at("box"));
  if (j.contains("suggestion") && !j.at("suggestion").is_null()) e.suggestion = j.at("suggestion").get<int>();
  if (j.contains("config")) e.config = config_from(j.at("config"));
  return e;
}

}  // namespace

std::string config_to_json(const SessionConfig& config) { return config_json(config).dump(); }

SessionConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ValidationError("config", e.what());
  }
}

std::string event_to_json(const AnnotationEvent& event) { return event_json(event).dump(); }

AnnotationEvent event_from_json(const std::string& line) {
  try {
    return event_from(json::parse(line));
  } catch (const json::exception& e) {
    throw ValidationError("event", e.what());
  }
}

void write_events_jsonl(std::ostream& out, std::span<const AnnotationEvent> events) {
  for (const auto& e : events) out << event_to_json(e) << '\n';
}

std::vector<AnnotationEvent> read_events_jsonl(std::istream& in, const std::string& source) {
  std::vector<AnnotationEvent> events;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      events.push_back(event_from(json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
    if (events.back().seq != static_cast<long>(events.size()) - 1) {
      throw ParseError(source, line_no, "sequence numbers must be dense from 0");
    }
  }
  return events;
}

std::string snapshot_to_json(const SessionState& s) {
  json keyframes = json::array();
  for (const auto& kf : s.keyframes) {
    keyframes.push_back({{"frame", kf.frame}, {"box", box_json(kf.box)}, {"source", std::string(to_string(kf.source))}});
  }
  json track = json::array();
  for (const auto& [f, p] : s.track.points) {
    track.push_back({{"frame", f},
                     {"box", box_json(p.box)},
                     {"provenance", std::string(to_string(p.provenance))},
                     {"confidence", p.confidence}});
  }
  json events = json::array();
  for (const auto& e : s.events) events.push_back(event_json(e));
  json j = {{"config", config_json(s.config)},
            {"keyframes", keyframes},
            {"suggestion", s.suggestion ? json(*s.suggestion) : json(nullptr)},
            {"finalized", s.finalized},
            {"object_id", s.track.object_id},
            {"track", track},
            {"events", events}};
  return j.dump(1);
}

SessionState snapshot_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    SessionState s;
    s.config = config_from(j.at("config"));
    for (const auto& k : j.at("keyframes")) {
      s.keyframes.push_back({k.at("frame").get<int>(), box_from(k.at("box")),
                             keyframe_source_from_string(k.at("source").get<std::string>())});
    }
    if (!j.at("suggestion").is_null()) s.suggestion = j.at("suggestion").get<int>();
    s.finalized = j.at("finalized").get<bool>();
    s.track.object_id = j.at("object_id").get<int>();
    s.track.keyframes = s.keyframes;
    for (const auto& p : j.at("track")) {
      s.track.points[p.at("frame").get<int>()] = {box_from(p.at("box")),
                                                  provenance_from_string(p.at("provenance").get<std::string>()),
                                                  p.at("confidence").get<double>()};
    }
    for (const auto& e : j.at("events")) s.events.push_back(event_from(e));
    return s;
  } catch (const json::exception& e) {
    throw ValidationError("snapshot", e.what());
  }
}

}  // namespace vidann
