#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vidann/guidance.hpp"
#include "vidann/interp.hpp"
#include "vidann/session.hpp"

namespace vidann {

struct TimeModelParams {
  double t_box = 5.2;   // seconds per manually drawn box
  double lambda = 1.0;  // watch-time multiplier
  double t_watch = 0.0; // seconds to watch through the track
};

/// lambda * t_watch + t_box * n_box. Throws ContractViolation for n_box < 0.
double annotation_time(int n_box, const TimeModelParams& params);

/// Seconds to play `frames` frames at the given rate.
double watch_time(int frames, double playback_fps = 30.0);

struct CurvePoint {
  double boxes_per_track = 0.0;
  double recall = 0.0;
  double sim_time_s = 0.0;
};

enum class PolicyKind : std::uint8_t { uniform, guided, oracle, human_replay };

struct KeyframePolicy {
  PolicyKind kind = PolicyKind::uniform;
  int stride = 0;  // uniform; 0 derives the stride from the budget
  std::shared_ptr<const RankingHeadParams> head;  // guided; null scores every pair 0
  std::vector<Keyframe> replay;                   // human_replay: keyframes in annotation order
  std::string label;                              // as written in the curve table
};

/// "uniform", "uniform:<stride>", "guided", "guided:<params file>", "oracle" or
/// "replay:<event log>". Throws ValidationError for anything else.
KeyframePolicy parse_policy(const std::string& text);

struct SimulationConfig {
  TrackStrategy strategy = TrackStrategy::visual;
  KeyframePolicy policy;
  double iou_threshold = 0.7;
  int budget = 0;                        // max manual boxes per track; 0 = unlimited
  std::optional<double> target_recall;   // stop once reached
  std::uint64_t seed = 0;
  InterpConfig interp;
  GuidanceConfig guidance;               // horizon 0 derives it from the budget
  double playback_fps = 30.0;
  double lambda = 1.0;
  double t_box = 5.2;
};

/// Throws ValidationError for tau outside (0, 1), a negative budget or stride, or a guided/oracle
/// policy without a budget or target recall.
void validate(const SimulationConfig& cfg);

struct TrackSimulation {
  Track track;                          // in video frame indices
  CurvePoint point;
  std::vector<AnnotationEvent> events;  // session log, frames relative to the track span
  std::vector<int> keyframes;           // video frames, in annotation order
  int span_first = 0;
};

/// Runs the annotation loop for one ground-truth track with a simulated annotator that answers
/// with the ground-truth box. The session covers the track's frame span.
TrackSimulation simulate_track(std::shared_ptr<const FrameStore> video, const GroundTruthTrack& truth,
                               const SimulationConfig& cfg, std::shared_ptr<const FeatureExtractor> extractor);

struct BenchmarkVideo {
  std::string name;
  std::string ref;  // frame directory or "synth:<scene>:<seed>", accepted by resolve_video
  std::shared_ptr<const FrameStore> frames;
  std::vector<GroundTruthTrack> tracks;
};

struct TrackResult {
  std::string video;
  int object_id = 0;
  CurvePoint point;
  std::vector<int> keyframes;
};

std::vector<TrackResult> simulate_dataset(const std::vector<BenchmarkVideo>& dataset, const SimulationConfig& cfg,
                                          std::shared_ptr<const FeatureExtractor> extractor,
                                          const std::function<void(const TrackResult&)>& progress = {});

/// Mean over tracks.
CurvePoint average(const std::vector<TrackResult>& results);

struct CurveRow {
  std::string strategy;
  std::string policy;
  CurvePoint point;
};

std::vector<CurveRow> run_benchmark(const std::vector<BenchmarkVideo>& dataset, const std::vector<SimulationConfig>& grid,
                                    std::shared_ptr<const FeatureExtractor> extractor);

/// Columns: strategy,policy,boxes_per_track,recall,sim_time_s.
void write_curves_csv(std::ostream& out, const std::vector<CurveRow>& rows);

/// Datasets on disk:
///   mot    - a sequence directory (img1/ or frames, gt/gt.txt) or a directory of them
///   single - a directory with frames (img/ or the directory itself) and groundtruth.txt or
///            groundtruth_rect.txt, or a directory of them
///   synth  - "suite", a .scene file, or a directory of .scene files (rendered with `seed`)
std::vector<BenchmarkVideo> load_dataset(const std::string& location, const std::string& format, std::uint64_t seed);

/// The standard synthetic suite rendered with one seed.
std::vector<BenchmarkVideo> synthetic_suite(std::uint64_t seed);

}  // namespace vidann
