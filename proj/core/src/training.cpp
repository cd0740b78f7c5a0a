#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

#include <json.hpp>

#include "vidann/error.hpp"
#include "vidann/guidance.hpp"
#include "vidann/random.hpp"
#include "vidann/synth.hpp"

namespace vidann {

using nlohmann::json;

namespace {

json box_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

BoundingBox box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be [x, y, w, h]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void write_pairs_jsonl(std::ostream& out, std::span<const TrainingPair> pairs) {
  for (const auto& p : pairs) {
    json templates = json::array();
    for (const auto& kf : p.templates) templates.push_back({{"frame", kf.frame}, {"box", box_json(kf.box)}});
    json j = {{"video", p.video},         {"object", p.object_id},   {"templates", templates},
              {"candidates", {p.candidate_i, p.candidate_j}}, {"references", p.references},
              {"label", p.label},         {"gap", p.quality_gap}};
    out << j.dump() << '\n';
  }
}

std::vector<TrainingPair> read_pairs_jsonl(std::istream& in, const std::string& source) {
  std::vector<TrainingPair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      TrainingPair p;
      p.video = j.at("video").get<std::string>();
      p.object_id = j.at("object").get<int>();
      for (const auto& t : j.at("templates")) {
        p.templates.push_back({t.at("frame").get<int>(), box_from(t.at("box")), KeyframeSource::human});
      }
      const auto& c = j.at("candidates");
      if (!c.is_array() || c.size() != 2) throw std::invalid_argument("candidates must hold two frames");
      p.candidate_i = c[0].get<int>();
      p.candidate_j = c[1].get<int>();
      p.references = j.at("references").get<std::vector<int>>();
      p.label = j.at("label").get<int>();
      p.quality_gap = j.at("gap").get<double>();
      if (p.label != 0 && p.label != 1) throw std::invalid_argument("label must be 0 or 1");
      if (p.candidate_i == p.candidate_j) throw std::invalid_argument("candidates must differ");
      if (p.templates.empty()) throw std::invalid_argument("at least one template required");
      pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return pairs;
}

PairGenerationReport generate_training_pairs(std::span<const TrainingVideo> videos, const PairGenerationConfig& cfg,
                                             std::shared_ptr<const FeatureExtractor> extractor, std::uint64_t seed) {
  validate(cfg.guidance);
  validate(cfg.interp);
  PairGenerationReport report;
  for (const auto& video : videos) {
    const VisualInterpolator engine(video.frames, extractor, cfg.interp);
    const double frame_area = static_cast<double>(video.frames->width()) * video.frames->height();
    for (const auto& track : video.tracks) {
      if (track.boxes.empty()) continue;
      double area = 0.0;
      for (const auto& [f, b] : track.boxes) area += b.area();
      if (area / static_cast<double>(track.boxes.size()) <= cfg.min_area_fraction * frame_area) {
        ++report.skipped_small_tracks;
        continue;
      }
      const int first = track.boxes.begin()->first;
      const int last = std::min(track.boxes.rbegin()->first, video.frames->frame_count() - 1);
      Rng rng(mix_seed(seed, mix_seed(hash_string(video.ref), static_cast<std::uint64_t>(track.object_id))));
      std::vector<int> anchor_pool;
      for (int f = first; f + 2 <= last; ++f) {
        if (track.contains(f)) anchor_pool.push_back(f);
      }
      rng.shuffle(anchor_pool);
      anchor_pool.resize(std::min<std::size_t>(anchor_pool.size(), static_cast<std::size_t>(std::max(cfg.anchors_per_track, 0))));
      std::sort(anchor_pool.begin(), anchor_pool.end());
      bool used = false;
      for (int a : anchor_pool) {
        const int annotated[] = {a};
        std::vector<int> candidates;
        for (int c : sample_candidates(annotated, last + 1, cfg.guidance)) {
          if (track.contains(c)) candidates.push_back(c);
        }
        if (candidates.size() < 2) {
          ++report.skipped_short_tracks;
          continue;
        }
        used = true;
        const Keyframe anchor{a, track.boxes.at(a), KeyframeSource::simulated_oracle};
        const FrameRange range{a, std::min(a + cfg.guidance.horizon, last)};
        std::vector<double> recall;
        for (int c : candidates) {
          const Keyframe kfs[] = {anchor, {c, track.boxes.at(c), KeyframeSource::simulated_oracle}};
          const Track predicted = engine.interpolate_track(kfs, range, TrackStrategy::visual);
          recall.push_back(recall_at(predicted, track, cfg.iou_threshold, range));
        }
        const std::vector<int> refs =
            sample_references(annotated, last + 1, cfg.guidance.references, mix_seed(rng.next(), static_cast<std::uint64_t>(a)));
        std::vector<Keyframe> templates{anchor};
        templates.back().source = KeyframeSource::human;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
          for (std::size_t j = i + 1; j < candidates.size(); ++j) {
            const double gap = recall[i] - recall[j];
            if (!(std::fabs(gap) > cfg.min_gap)) {
              ++report.skipped_small_gap;
              continue;
            }
            TrainingPair p;
            p.video = video.ref;
            p.object_id = track.object_id;
            p.templates = templates;
            p.candidate_i = candidates[i];
            p.candidate_j = candidates[j];
            p.references = refs;
            p.label = gap > 0.0 ? 1 : 0;
            p.quality_gap = gap;
            report.pairs.push_back(std::move(p));
          }
        }
      }
      if (used) ++report.tracks_used;
    }
  }

  // The head sees every pair in ascending frame order, so "the earlier candidate wins" must be as
  // frequent as "the later candidate wins" or a constant output beats chance. Subsample the
  // majority outcome, then alternate the stored orientation so labels are balanced as well.
  std::vector<std::size_t> earlier;
  std::vector<std::size_t> later;
  for (std::size_t k = 0; k < report.pairs.size(); ++k) (report.pairs[k].label == 1 ? earlier : later).push_back(k);
  auto& majority = earlier.size() > later.size() ? earlier : later;
  const std::size_t keep = std::min(earlier.size(), later.size());
  Rng rng(mix_seed(seed, 0xBA1A4CEULL));
  rng.shuffle(majority);
  report.skipped_unbalanced = static_cast<int>(majority.size() - keep);
  majority.resize(keep);
  std::vector<std::size_t> kept(earlier);
  kept.insert(kept.end(), later.begin(), later.end());
  std::sort(kept.begin(), kept.end());
  std::vector<TrainingPair> balanced;
  balanced.reserve(kept.size());
  for (std::size_t n = 0; n < kept.size(); ++n) {
    TrainingPair p = std::move(report.pairs[kept[n]]);
    const bool want_positive = n % 2 == 0;
    if (want_positive != (p.label == 1)) {
      std::swap(p.candidate_i, p.candidate_j);
      p.label = 1 - p.label;
      p.quality_gap = -p.quality_gap;
    }
    balanced.push_back(std::move(p));
  }
  report.pairs = std::move(balanced);
  return report;
}

PairSplit split_pairs_by_video(std::span<const TrainingPair> pairs, double held_out_fraction, std::uint64_t seed) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) {
    throw ValidationError("held_out_fraction", "must lie in [0, 1)");
  }
  std::vector<std::string> videos;
  for (const auto& p : pairs) videos.push_back(p.video);
  std::sort(videos.begin(), videos.end());
  videos.erase(std::unique(videos.begin(), videos.end()), videos.end());
  Rng rng(mix_seed(seed, 0x5B117ULL));
  rng.shuffle(videos);
  auto n = static_cast<std::size_t>(std::lround(held_out_fraction * static_cast<double>(videos.size())));
  if (n == 0 && held_out_fraction > 0.0 && videos.size() > 1) n = 1;
  const std::set<std::string> held(videos.begin(), videos.begin() + static_cast<std::ptrdiff_t>(n));
  PairSplit split;
  for (const auto& p : pairs) (held.contains(p.video) ? split.held_out : split.train).push_back(p);
  return split;
}

std::shared_ptr<const FrameStore> resolve_video(const std::string& ref) {
  static const std::string kPrefix = "synth:";
  if (ref.rfind(kPrefix, 0) != 0) return load_frame_sequence(ref);
  const auto colon = ref.rfind(':');
  if (colon <= kPrefix.size()) throw ValidationError("video", "expected synth:<scene>:<seed>, got '" + ref + "'");
  const std::string scene = ref.substr(kPrefix.size(), colon - kPrefix.size());
  std::uint64_t seed = 0;
  try {
    seed = std::stoull(ref.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("video", "invalid seed in '" + ref + "'");
  }
  return synth_generate(scene_by_name(scene), seed).frames;
}

std::vector<PairSample> build_samples(std::span<const TrainingPair> pairs, std::shared_ptr<const FeatureExtractor> extractor,
                                      int frame_resolution, const VideoResolver& resolver) {
  std::map<std::string, std::shared_ptr<const FrameStore>> stores;
  std::map<std::string, std::shared_ptr<const GuidanceContext>> contexts;
  std::vector<PairSample> samples;
  samples.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto store_it = stores.find(p.video);
    if (store_it == stores.end()) store_it = stores.emplace(p.video, resolver(p.video)).first;
    json key = {p.video, p.references};
    for (const auto& t : p.templates) key.push_back({t.frame, box_json(t.box)});
    const std::string k = key.dump();
    auto ctx_it = contexts.find(k);
    if (ctx_it == contexts.end()) {
      ctx_it = contexts
                   .emplace(k, std::make_shared<const GuidanceContext>(store_it->second, extractor, p.templates,
                                                                      p.references, frame_resolution))
                   .first;
    }
    samples.push_back(ctx_it->second->pair_sample(p.candidate_i, p.candidate_j, p.label));
  }
  return samples;
}

}  // namespace vidann
