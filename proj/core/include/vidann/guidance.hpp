#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "vidann/features.hpp"
#include "vidann/interp.hpp"
#include "vidann/media.hpp"

namespace vidann {

struct GuidanceConfig {
  int horizon = 100;          // candidate interval length in frames
  int candidate_count = 10;
  int references = 2;         // N
  int templates = 2;          // K; K - 1 annotated frames condition the attention maps
  int frame_resolution = kSearchResolution;
  friend bool operator==(const GuidanceConfig&, const GuidanceConfig&) = default;
};

/// Throws ValidationError unless horizon >= candidate_count >= 2, N >= 1 and K >= 2.
void validate(const GuidanceConfig& cfg);

/// Evenly spaced frames after the last annotated one: last + floor(k * span / c) for k = 1..c,
/// span = min(last + horizon, video_length - 1) - last and c = min(candidate_count, span).
/// Empty when nothing remains after the last annotated frame.
std::vector<int> sample_candidates(std::span<const int> annotated_frames, int video_length, const GuidanceConfig& cfg);

/// N frames drawn with a seeded generator from the unannotated frames after the last annotated
/// one (falling back to any unannotated frame, then to the last frame). May repeat frames only
/// when fewer than N are available.
std::vector<int> sample_references(std::span<const int> annotated_frames, int video_length, int count,
                                   std::uint64_t seed);

/// Correlation of the fused templates with whole-frame features.
ScoreMap attention_map(std::span<const FeatureMap> templates, const FeatureMap& frame_features);

/// Frame features plus the attention map, standardised to zero mean and unit variance, placed at
/// the template-centre offset (zero elsewhere) and added to every channel.
FeatureMap attend(const FeatureMap& frame_features, const ScoreMap& attention, int template_height, int template_width);

/// Shape of the ranking head F': per-frame 3x3 valid convolution + ReLU, global average pooling,
/// concatenation over all frames, dense + ReLU, dense to a scalar logit.
struct HeadArchitecture {
  int in_channels = 9;
  int conv_channels = 16;
  int kernel = 3;
  int frames = 4;  // N + 2
  int hidden = 32;

  std::size_t parameter_count() const noexcept;
  std::uint64_t digest() const noexcept;
  friend bool operator==(const HeadArchitecture&, const HeadArchitecture&) = default;
};

struct RankingHeadParams {
  HeadArchitecture arch;
  std::vector<double> values;  // conv W [o][ky][kx][c], conv b [o], W1 [h][i], b1 [h], w2 [h], b2

  static RankingHeadParams zeros(const HeadArchitecture& arch);
  static RankingHeadParams random(const HeadArchitecture& arch, std::uint64_t seed);
  friend bool operator==(const RankingHeadParams&, const RankingHeadParams&) = default;
};

/// Binary file: "VAHP", u32 version, u64 architecture digest, five u32 dimensions, u32 count,
/// count little-endian float32. Values are rounded to float32 on save.
void save_head_params(const std::filesystem::path& path, const RankingHeadParams& params);
RankingHeadParams load_head_params(const std::filesystem::path& path);

/// Pooled per-frame activations (length conv_channels).
std::vector<double> pool_frame(const RankingHeadParams& params, const FeatureMap& input);

/// Raw logit from pooled frame vectors, in stacking order.
double head_logit(const RankingHeadParams& params, std::span<const std::vector<double>> pooled);

/// Bounded odd squashing: tanh(z / 2) = 2 sigmoid(z) - 1.
double squash(double logit) noexcept;

/// One labelled comparison ready for the head: frames in stacking order [earlier candidate, later
/// candidate, references...]. sign is +1 when the labelled "first" candidate is the earlier one.
struct PairSample {
  std::vector<std::shared_ptr<const FeatureMap>> frames;
  double sign = 1.0;
  int label = 0;  // 1 when the first candidate yields the higher recall
};

/// Signed logit of the labelled orientation.
double sample_logit(const RankingHeadParams& params, const PairSample& sample);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean binary cross entropy of sigmoid(signed logit) against the labels, with the exact gradient
/// for every head parameter.
LossAndGrad bce_loss_and_grad(const RankingHeadParams& params, std::span<const PairSample> batch);
double bce_loss(const RankingHeadParams& params, std::span<const PairSample> batch);
double pair_accuracy(const RankingHeadParams& params, std::span<const PairSample> samples);

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 12;
  int epochs = 10;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct TrainResult {
  RankingHeadParams params;  // best validation accuracy (earliest on ties)
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

/// Momentum SGD over shuffled mini-batches. With an empty validation set the training accuracy
/// selects the returned parameters. Throws std::runtime_error naming the step on a non-finite loss.
TrainResult train_head(std::span<const PairSample> train, std::span<const PairSample> validation,
                       const RankingHeadParams& init, const TrainConfig& cfg,
                       const std::function<void(const EpochStats&)>& on_epoch = {});

/// Per-object frame-selection context: fused templates from the K - 1 latest keyframes and the
/// reference frames. Frame inputs are computed once and cached (thread-safe).
class GuidanceContext {
 public:
  GuidanceContext(std::shared_ptr<const FrameStore> store, std::shared_ptr<const FeatureExtractor> extractor,
                  std::span<const Keyframe> templates, std::vector<int> references, int frame_resolution);

  const std::vector<int>& references() const noexcept { return references_; }
  const FeatureMap& fused_templates() const noexcept { return fused_; }

  /// attend(features of the whole frame, attention of the fused templates).
  std::shared_ptr<const FeatureMap> frame_input(int frame) const;

  /// Frame stack for a candidate pair in canonical (ascending) order.
  PairSample pair_sample(int candidate_i, int candidate_j, int label = 0) const;

 private:
  std::shared_ptr<const FrameStore> store_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  FeatureMap fused_;
  std::vector<int> references_;
  int resolution_;
  mutable std::mutex mutex_;
  mutable std::map<int, std::shared_ptr<const FeatureMap>> inputs_;
};

/// Antisymmetric comparison matrix; entry (i, j) > 0 means candidate i is the better keyframe.
using ComparisonMatrix = std::vector<std::vector<double>>;

/// Scores every candidate pair once in ascending orientation and fills the reverse by negation.
ComparisonMatrix compare_candidates(std::span<const int> candidates, const GuidanceContext& ctx,
                                    const RankingHeadParams& params);

/// Score of the ordered pair (i, j): computed for i < j, negated otherwise.
double pair_score(int candidate_i, int candidate_j, const GuidanceContext& ctx, const RankingHeadParams& params);

/// total(i) = sum over j of max(score(i, j), 0). Throws ValidationError for a non-square matrix, a
/// non-zero diagonal or entries that are not antisymmetric within 1e-6.
std::vector<double> aggregate_scores(const ComparisonMatrix& scores);

struct Selection {
  int frame = -1;
  std::vector<int> candidates;
  std::vector<double> totals;
};

/// Highest aggregate total; ties go to the earliest frame. Throws ContractViolation when empty.
Selection select_next_frame(std::span<const int> candidates, const GuidanceContext& ctx,
                            const RankingHeadParams& params);
int select_from_totals(std::span<const int> candidates, std::span<const double> totals);

/// Templates used for guidance: the K - 1 latest keyframes.
std::vector<Keyframe> guidance_templates(std::span<const Keyframe> keyframes, const GuidanceConfig& cfg);

// ---------------------------------------------------------------------------------------------
// Training data.

struct TrainingPair {
  std::string video;  // frame directory, or "synth:<scene>:<seed>" for generated scenes
  int object_id = 0;
  std::vector<Keyframe> templates;  // K - 1 annotated frames with boxes
  int candidate_i = 0;
  int candidate_j = 0;
  std::vector<int> references;
  int label = 0;  // 1 when candidate_i yields the higher recall
  double quality_gap = 0.0;  // recall_i - recall_j
  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

/// One JSON object per line; see docs/formats.md.
void write_pairs_jsonl(std::ostream& out, std::span<const TrainingPair> pairs);
std::vector<TrainingPair> read_pairs_jsonl(std::istream& in, const std::string& source = "<stream>");

struct TrainingVideo {
  std::string ref;
  std::shared_ptr<const FrameStore> frames;
  std::vector<GroundTruthTrack> tracks;
};

struct PairGenerationConfig {
  GuidanceConfig guidance;
  InterpConfig interp;
  double iou_threshold = 0.7;
  double min_area_fraction = 0.05;
  double min_gap = 0.3;
  int anchors_per_track = 4;  // template frames drawn per track
};

struct PairGenerationReport {
  std::vector<TrainingPair> pairs;
  int tracks_used = 0;
  int skipped_small_tracks = 0;   // mean box area under min_area_fraction of the frame
  int skipped_short_tracks = 0;   // no candidates after the anchor
  int skipped_small_gap = 0;      // candidate pairs with |gap| <= min_gap
  int skipped_unbalanced = 0;     // dropped so earlier and later winners are equally frequent
};

/// For each anchor frame a of a track: candidates after a, each simulated as the second keyframe
/// with its ground-truth box, visual interpolation over [a, a + horizon] scored by recall@tau;
/// pairs with a recall gap above min_gap are kept. The kept set has as many pairs won by the earlier
/// candidate as by the later one, and stored orientation alternates so labels are balanced.
PairGenerationReport generate_training_pairs(std::span<const TrainingVideo> videos, const PairGenerationConfig& cfg,
                                             std::shared_ptr<const FeatureExtractor> extractor, std::uint64_t seed);

struct PairSplit {
  std::vector<TrainingPair> train;
  std::vector<TrainingPair> held_out;
};

/// Holds out round(fraction * videos) whole videos (at least one when fraction > 0 and more than
/// one video exists), chosen by seed. Pairs keep their order.
PairSplit split_pairs_by_video(std::span<const TrainingPair> pairs, double held_out_fraction, std::uint64_t seed);

/// Resolves a video reference: "synth:<scene>:<seed>" for suite or random scenes, else a directory.
using VideoResolver = std::function<std::shared_ptr<const FrameStore>(const std::string&)>;
std::shared_ptr<const FrameStore> resolve_video(const std::string& ref);

/// Builds head inputs for stored pairs. Frame inputs are shared between pairs with equal context.
std::vector<PairSample> build_samples(std::span<const TrainingPair> pairs, std::shared_ptr<const FeatureExtractor> extractor,
                                      int frame_resolution, const VideoResolver& resolver = resolve_video);

}  // namespace vidann
