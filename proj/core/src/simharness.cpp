#include "vidann/simharness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "vidann/error.hpp"
#include "vidann/random.hpp"
#include "vidann/synth.hpp"

namespace vidann {

double annotation_time(int n_box, const TimeModelParams& params) {
  if (n_box < 0) throw ContractViolation("annotation_time: negative box count");
  return params.lambda * params.t_watch + params.t_box * n_box;
}

double watch_time(int frames, double playback_fps) {
  if (!(playback_fps > 0.0)) throw ContractViolation("watch_time: playback rate must be positive");
  return frames / playback_fps;
}

KeyframePolicy parse_policy(const std::string& text) {
  KeyframePolicy p;
  p.label = text;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? std::string() : text.substr(colon + 1);
  if (kind == "uniform") {
    p.kind = PolicyKind::uniform;
    if (!arg.empty()) {
      try {
        std::size_t used = 0;
        p.stride = std::stoi(arg, &used);
        if (used != arg.size() || p.stride < 1) throw std::invalid_argument(arg);
      } catch (const std::exception&) {
        throw ValidationError("policy", "uniform stride must be a positive integer, got '" + arg + "'");
      }
    }
  } else if (kind == "guided") {
    p.kind = PolicyKind::guided;
    if (!arg.empty()) p.head = std::make_shared<const RankingHeadParams>(load_head_params(arg));
  } else if (kind == "oracle" && arg.empty()) {
    p.kind = PolicyKind::oracle;
  } else if (kind == "replay" && !arg.empty()) {
    p.kind = PolicyKind::human_replay;
    std::ifstream in(arg);
    if (!in) throw IoError("cannot open " + arg);
    for (const auto& e : read_events_jsonl(in, arg)) {
      if ((e.kind == EventKind::session_start || e.kind == EventKind::keyframe_added) && e.box) {
        p.replay.push_back({e.frame, *e.box, KeyframeSource::human});
      } else if (e.kind == EventKind::keyframe_removed) {
        std::erase_if(p.replay, [&](const Keyframe& k) { return k.frame == e.frame; });
      }
    }
    if (p.replay.empty()) throw ValidationError("policy", "event log contains no keyframes");
  } else {
    throw ValidationError("policy", "unknown policy '" + text + "'");
  }
  return p;
}

void validate(const SimulationConfig& cfg) {
  if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold < 1.0)) throw ValidationError("iou", "must lie in (0, 1)");
  if (cfg.budget < 0) throw ValidationError("budget", "must be >= 0");
  if (cfg.policy.stride < 0) throw ValidationError("stride", "must be >= 1");
  if (cfg.target_recall && !(*cfg.target_recall > 0.0 && *cfg.target_recall <= 1.0)) {
    throw ValidationError("target_recall", "must lie in (0, 1]");
  }
  const bool bounded = cfg.budget > 0 || cfg.target_recall.has_value();
  if ((cfg.policy.kind == PolicyKind::guided || cfg.policy.kind == PolicyKind::oracle) && !bounded) {
    throw ValidationError("budget", "guided and oracle policies need a budget or a target recall");
  }
  if (cfg.policy.kind == PolicyKind::uniform && cfg.policy.stride == 0 && cfg.budget == 0) {
    throw ValidationError("policy", "uniform policy needs a stride or a budget");
  }
  if (!(cfg.t_box >= 0.0) || !(cfg.lambda >= 0.0)) throw ValidationError("time_model", "parameters must be >= 0");
  validate(cfg.interp);
}

namespace {

GroundTruthTrack shift(const GroundTruthTrack& t, int offset, int count) {
  GroundTruthTrack out{t.object_id, {}};
  for (const auto& [f, b] : t.boxes) {
    if (f - offset >= 0 && f - offset < count) out.boxes.emplace(f - offset, b);
  }
  return out;
}

// Simulated annotator: the ground-truth box, or the nearest frame that has one.
std::pair<int, BoundingBox> annotate(const GroundTruthTrack& truth, int frame) {
  auto it = truth.boxes.lower_bound(frame);
  if (it != truth.boxes.end() && it->first == frame) return {frame, it->second};
  if (it == truth.boxes.end()) --it;
  return {it->first, it->second};
}

bool is_keyframe(const SessionState& s, int frame) {
  return std::any_of(s.keyframes.begin(), s.keyframes.end(), [frame](const Keyframe& k) { return k.frame == frame; });
}

}  // namespace

TrackSimulation simulate_track(std::shared_ptr<const FrameStore> video, const GroundTruthTrack& truth,
                               const SimulationConfig& cfg, std::shared_ptr<const FeatureExtractor> extractor) {
  validate(cfg);
  std::vector<int> frames;
  for (const auto& [f, b] : truth.boxes) {
    if (f >= 0 && f < video->frame_count()) frames.push_back(f);
  }
  if (frames.empty()) throw ValidationError("truth", "track has no frames inside the video");
  const int first = frames.front();
  const int span = frames.back() - first + 1;
  auto sub = std::make_shared<const FrameStore>(
      span, video->width(), video->height(), [video, first](int i) { return *video->frame(first + i); },
      video->name() + "@" + std::to_string(first));
  const GroundTruthTrack local = shift(truth, first, span);

  GuidanceConfig guidance = cfg.guidance;
  if (guidance.horizon == 0) {
    guidance.horizon = cfg.budget > 0 ? (2 * span + cfg.budget - 1) / cfg.budget : 100;
    guidance.horizon = std::max(guidance.horizon, guidance.candidate_count);
  }
  double sim_clock = 0.0;
  const SessionEngine engine(sub, extractor, cfg.policy.kind == PolicyKind::guided ? cfg.policy.head : nullptr,
                             [&sim_clock] { return sim_clock; });
  SessionConfig sc;
  sc.session_id = "sim";
  sc.video = video->name();
  sc.object_id = truth.object_id;
  sc.interp = cfg.interp;
  sc.guidance = guidance;
  sc.strategy = cfg.strategy;
  sc.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(truth.object_id));
  sc.suggestions = cfg.policy.kind == PolicyKind::guided;

  std::vector<Keyframe> replay;
  for (const auto& k : cfg.policy.replay) {
    if (k.frame >= first && k.frame < first + span) replay.push_back({k.frame - first, k.box, k.source});
  }
  if (cfg.policy.kind == PolicyKind::human_replay && replay.empty()) {
    throw ValidationError("policy", "replayed keyframes do not overlap the track");
  }

  auto budget_left = [&](const SessionState& s) { return cfg.budget == 0 || static_cast<int>(s.keyframes.size()) < cfg.budget; };
  auto target_met = [&](const SessionState& s) {
    return cfg.target_recall && recall_at(s.track, local, cfg.iou_threshold) >= *cfg.target_recall;
  };
  auto add = [&](const SessionState& s, int frame) {
    sim_clock += cfg.t_box;
    const auto [f, box] = annotate(local, frame);
    return is_keyframe(s, f) ? s : engine.add_keyframe(s, f, box);
  };

  SessionState state;
  if (cfg.policy.kind == PolicyKind::human_replay) {
    state = engine.start(sc, replay.front().frame, replay.front().box);
  } else {
    const auto [f, box] = annotate(local, 0);
    state = engine.start(sc, f, box);
  }
  switch (cfg.policy.kind) {
    case PolicyKind::uniform: {
      const int stride = cfg.policy.stride > 0 ? cfg.policy.stride : (span + cfg.budget - 1) / cfg.budget;
      for (int f = stride; f < span && budget_left(state) && !target_met(state); f += stride) state = add(state, f);
      break;
    }
    case PolicyKind::guided:
      while (state.suggestion && budget_left(state) && !target_met(state)) state = add(state, *state.suggestion);
      break;
    case PolicyKind::oracle: {
      const auto interp = engine.interpolator(cfg.interp);
      while (budget_left(state) && !target_met(state)) {
        std::vector<int> annotated;
        for (const auto& k : state.keyframes) annotated.push_back(k.frame);
        const auto candidates = sample_candidates(annotated, span, guidance);
        if (candidates.empty()) break;
        int best = -1;
        double best_recall = -1.0;
        for (int c : candidates) {
          std::vector<Keyframe> kfs = state.keyframes;
          const auto [f, box] = annotate(local, c);
          if (is_keyframe(state, f)) continue;
          kfs.push_back({f, box, KeyframeSource::simulated_oracle});
          const Track t = interp->interpolate_track(kfs, {0, span - 1}, cfg.strategy, &state.track);
          const double r = recall_at(t, local, cfg.iou_threshold);
          if (r > best_recall) {
            best_recall = r;
            best = c;
          }
        }
        if (best < 0) break;
        state = add(state, best);
      }
      break;
    }
    case PolicyKind::human_replay:
      for (std::size_t i = 1; i < replay.size() && budget_left(state); ++i) {
        sim_clock += cfg.t_box;
        if (!is_keyframe(state, replay[i].frame)) state = engine.add_keyframe(state, replay[i].frame, replay[i].box);
      }
      break;
  }
  state = engine.finalize(state);

  TrackSimulation out;
  out.span_first = first;
  out.events = state.events;
  out.track.object_id = truth.object_id;
  for (const auto& k : state.keyframes) out.track.keyframes.push_back({k.frame + first, k.box, k.source});
  for (const auto& [f, p] : state.track.points) out.track.points.emplace(f + first, p);
  for (const auto& e : state.events) {
    if (e.kind == EventKind::session_start || e.kind == EventKind::keyframe_added) out.keyframes.push_back(e.frame + first);
  }
  const int n_box = static_cast<int>(state.keyframes.size());
  out.point.boxes_per_track = n_box;
  out.point.recall = recall_at(state.track, local, cfg.iou_threshold);
  out.point.sim_time_s = annotation_time(n_box, {cfg.t_box, cfg.lambda, watch_time(span, cfg.playback_fps)});
  return out;
}

std::vector<TrackResult> simulate_dataset(const std::vector<BenchmarkVideo>& dataset, const SimulationConfig& cfg,
                                          std::shared_ptr<const FeatureExtractor> extractor,
                                          const std::function<void(const TrackResult&)>& progress) {
  std::vector<TrackResult> results;
  for (const auto& video : dataset) {
    for (const auto& track : video.tracks) {
      const TrackSimulation sim = simulate_track(video.frames, track, cfg, extractor);
      results.push_back({video.name, track.object_id, sim.point, sim.keyframes});
      if (progress) progress(results.back());
    }
  }
  return results;
}

CurvePoint average(const std::vector<TrackResult>& results) {
  CurvePoint p;
  if (results.empty()) return p;
  for (const auto& r : results) {
    p.boxes_per_track += r.point.boxes_per_track;
    p.recall += r.point.recall;
    p.sim_time_s += r.point.sim_time_s;
  }
  const double n = static_cast<double>(results.size());
  p.boxes_per_track /= n;
  p.recall /= n;
  p.sim_time_s /= n;
  return p;
}

std::vector<CurveRow> run_benchmark(const std::vector<BenchmarkVideo>& dataset, const std::vector<SimulationConfig>& grid,
                                    std::shared_ptr<const FeatureExtractor> extractor) {
  std::vector<CurveRow> rows;
  for (const auto& cfg : grid) {
    rows.push_back({std::string(to_string(cfg.strategy)), cfg.policy.label, average(simulate_dataset(dataset, cfg, extractor))});
  }
  return rows;
}

void write_curves_csv(std::ostream& out, const std::vector<CurveRow>& rows) {
  out << "strategy,policy,boxes_per_track,recall,sim_time_s\n";
  const auto old = out.precision(10);
  for (const auto& r : rows) {
    out << r.strategy << ',' << r.policy << ',' << r.point.boxes_per_track << ',' << r.point.recall << ','
        << r.point.sim_time_s << '\n';
  }
  out.precision(old);
}

// ---------------------------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::vector<fs::path> subdirectories(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

BenchmarkVideo load_mot_sequence(const fs::path& dir) {
  const fs::path frames = fs::is_directory(dir / "img1") ? dir / "img1" : dir;
  BenchmarkVideo v;
  v.name = dir.filename().string();
  v.ref = frames.string();
  v.frames = load_frame_sequence(frames);
  v.tracks = load_mot_ground_truth(dir / "gt" / "gt.txt").tracks;
  return v;
}

std::optional<fs::path> single_gt(const fs::path& dir) {
  for (const char* name : {"groundtruth.txt", "groundtruth_rect.txt"}) {
    if (fs::is_regular_file(dir / name)) return dir / name;
  }
  return std::nullopt;
}

BenchmarkVideo load_single_sequence(const fs::path& dir, const fs::path& gt) {
  const fs::path frames = fs::is_directory(dir / "img") ? dir / "img" : dir;
  BenchmarkVideo v;
  v.name = dir.filename().string();
  v.ref = frames.string();
  v.frames = load_frame_sequence(frames);
  GroundTruthTrack t = load_single_object_track(gt);
  t.object_id = 1;
  v.tracks.push_back(std::move(t));
  return v;
}

BenchmarkVideo render(const SyntheticSceneSpec& spec, std::uint64_t seed, const std::string& scene) {
  SyntheticVideo sv = synth_generate(spec, seed);
  return {spec.name, "synth:" + scene + ":" + std::to_string(seed), sv.frames, sv.tracks};
}

}  // namespace

std::vector<BenchmarkVideo> synthetic_suite(std::uint64_t seed) {
  std::vector<BenchmarkVideo> out;
  for (const auto& spec : standard_suite()) out.push_back(render(spec, seed, spec.name));
  return out;
}

std::vector<BenchmarkVideo> load_dataset(const std::string& location, const std::string& format, std::uint64_t seed) {
  std::vector<BenchmarkVideo> out;
  const fs::path path(location);
  if (format == "synth") {
    if (location == "suite") return synthetic_suite(seed);
    if (fs::is_regular_file(path)) return {render(load_scene(path), seed, path.string())};
    if (!fs::is_directory(path)) throw IoError("dataset not found: " + location);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".scene") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(render(load_scene(f), seed, f.string()));
  } else if (format == "mot") {
    if (!fs::is_directory(path)) throw IoError("dataset not found: " + location);
    if (fs::is_regular_file(path / "gt" / "gt.txt")) return {load_mot_sequence(path)};
    for (const auto& d : subdirectories(path)) {
      if (fs::is_regular_file(d / "gt" / "gt.txt")) out.push_back(load_mot_sequence(d));
    }
  } else if (format == "single") {
    if (!fs::is_directory(path)) throw IoError("dataset not found: " + location);
    if (auto gt = single_gt(path)) return {load_single_sequence(path, *gt)};
    for (const auto& d : subdirectories(path)) {
      if (auto gt = single_gt(d)) out.push_back(load_single_sequence(d, *gt));
    }
  } else {
    throw ValidationError("format", "unknown dataset format '" + format + "' (expected mot, single or synth)");
  }
  if (out.empty()) throw ValidationError("dataset", "no sequences found in " + location);
  return out;
}

}  // namespace vidann
