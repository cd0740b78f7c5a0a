// Ranking-head data generation, training and evaluation.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "vidann/error.hpp"
#include "vidann/simharness.hpp"
#include "vidann/synth.hpp"

using namespace vidann;

namespace {

std::vector<TrainingPair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_pairs_jsonl(in, path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guidance - train and evaluate the keyframe ranking head"};
  app.require_subcommand(1);

  std::string pairs_path = "pairs.jsonl";
  std::string params_path = "head.vahp";
  std::uint64_t seed = 0;

  std::string dataset;
  std::string format = "synth";
  int random_scenes = 0;
  int random_offset = 0;
  std::uint64_t render_seed = 7;
  int anchors = 4;
  auto* generate = app.add_subcommand("generate", "simulate candidate keyframes and write labelled pairs");
  generate->add_option("--dataset", dataset, "dataset directory or scene (see annosim run)");
  generate->add_option("--format", format, "mot, single or synth")
      ->check(CLI::IsMember({"mot", "single", "synth"}))
      ->capture_default_str();
  generate->add_option("--random-scenes", random_scenes, "number of random_<n> synthetic scenes")->capture_default_str();
  generate->add_option("--random-offset", random_offset, "first random scene index")->capture_default_str();
  generate->add_option("--render-seed", render_seed, "seed for rendering synthetic scenes")->capture_default_str();
  generate->add_option("--anchors", anchors, "template frames drawn per track")->capture_default_str();
  generate->add_option("--seed", seed)->capture_default_str();
  generate->add_option("--out", pairs_path)->capture_default_str();

  TrainConfig train_cfg;
  double held_out = 0.2;
  auto* train = app.add_subcommand("train", "train the head with momentum SGD");
  train->add_option("--pairs", pairs_path)->required();
  train->add_option("--seed", seed)->capture_default_str();
  train->add_option("--epochs", train_cfg.epochs)->capture_default_str();
  train->add_option("--lr", train_cfg.learning_rate)->capture_default_str();
  train->add_option("--momentum", train_cfg.momentum)->capture_default_str();
  train->add_option("--batch", train_cfg.batch_size)->capture_default_str();
  train->add_option("--validation", held_out, "fraction of videos held out for model selection")->capture_default_str();
  train->add_option("--out", params_path)->capture_default_str();

  auto* eval = app.add_subcommand("eval", "pair accuracy of a trained head");
  eval->add_option("--pairs", pairs_path)->required();
  eval->add_option("--params", params_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const auto extractor = std::make_shared<GradientExtractor>();
    const GuidanceConfig guidance;
    if (*generate) {
      std::vector<TrainingVideo> videos;
      for (int s = random_offset; s < random_offset + random_scenes; ++s) {
        const std::string scene = "random_" + std::to_string(s);
        SyntheticVideo v = synth_generate(scene_by_name(scene), render_seed);
        videos.push_back({"synth:" + scene + ":" + std::to_string(render_seed), v.frames, v.tracks});
      }
      if (!dataset.empty()) {
        for (auto& v : load_dataset(dataset, format, render_seed)) videos.push_back({v.ref, v.frames, v.tracks});
      }
      if (videos.empty()) throw ValidationError("dataset", "give --dataset and/or --random-scenes");
      PairGenerationConfig cfg;
      cfg.anchors_per_track = anchors;
      const auto report = generate_training_pairs(videos, cfg, extractor, seed);
      std::ofstream out(pairs_path);
      if (!out) throw IoError("cannot write " + pairs_path);
      write_pairs_jsonl(out, report.pairs);
      std::cout << "pairs " << report.pairs.size() << " tracks_used " << report.tracks_used << " skipped_small_tracks "
                << report.skipped_small_tracks << " skipped_short_tracks " << report.skipped_short_tracks
                << " skipped_small_gap " << report.skipped_small_gap << " skipped_unbalanced " << report.skipped_unbalanced
                << "\n";
      return 0;
    }

    const auto pairs = load_pairs(pairs_path);
    if (*train) {
      const PairSplit split = split_pairs_by_video(pairs, held_out, seed);
      const auto train_samples = build_samples(split.train, extractor, guidance.frame_resolution);
      const auto validation = build_samples(split.held_out, extractor, guidance.frame_resolution);
      train_cfg.seed = seed;
      const auto result = train_head(train_samples, validation, RankingHeadParams::random(HeadArchitecture{}, seed),
                                     train_cfg, [](const EpochStats& e) {
                                       std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " train_acc "
                                                 << e.train_accuracy << " val_acc " << e.validation_accuracy << "\n";
                                     });
      save_head_params(params_path, result.params);
      std::cout << "best epoch " << result.best_epoch << " (" << train_samples.size() << " train, " << validation.size()
                << " validation pairs) -> " << params_path << "\n";
      return 0;
    }

    const auto params = load_head_params(params_path);
    const auto samples = build_samples(pairs, extractor, guidance.frame_resolution);
    std::cout << "accuracy " << pair_accuracy(params, samples) << " over " << samples.size() << " pairs\n";
  } catch (const std::exception& e) {
    std::cerr << "guidance: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
