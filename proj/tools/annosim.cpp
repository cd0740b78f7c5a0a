// Simulated annotation benchmark: runs keyframe policies against ground truth and writes the
// boxes/recall/time curve table.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "vidann/error.hpp"
#include "vidann/image.hpp"
#include "vidann/simharness.hpp"
#include "vidann/synth.hpp"

namespace fs = std::filesystem;
using namespace vidann;

namespace {

void render_scene(const SyntheticSceneSpec& spec, std::uint64_t seed, const fs::path& out) {
  const SyntheticVideo video = synth_generate(spec, seed);
  fs::create_directories(out / "img1");
  fs::create_directories(out / "gt");
  for (int f = 0; f < video.frames->frame_count(); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", f + 1);
    write_png(out / "img1" / name, *video.frames->frame(f));
  }
  write_mot_ground_truth(out / "gt" / "gt.txt", video.tracks);
  save_scene(out / "scene.txt", spec);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annosim - simulated keyframe annotation benchmark"};
  app.require_subcommand(1);

  std::string dataset = "suite";
  std::string format = "synth";
  std::vector<std::string> strategies{"visual"};
  std::vector<std::string> policies{"uniform"};
  std::vector<int> budgets{3};
  double iou = 0.7;
  std::optional<double> target_recall;
  std::uint64_t seed = 0;
  std::string out = "curves.csv";
  std::string tracks_out;
  double lambda = 1.0;
  double t_box = 5.2;
  double fps = 30.0;
  int templates = 2;
  double delta = 10.0;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "simulate a policy/strategy grid and write curves.csv");
  run->add_option("--dataset", dataset, "dataset directory, scene file, or 'suite'")->capture_default_str();
  run->add_option("--format", format, "mot, single or synth")
      ->check(CLI::IsMember({"mot", "single", "synth"}))
      ->capture_default_str();
  run->add_option("--strategy", strategies, "linear, tracking or visual (repeatable)")
      ->check(CLI::IsMember({"linear", "tracking", "visual"}))
      ->capture_default_str();
  run->add_option("--policy", policies, "uniform[:stride], guided[:params], oracle, replay:<log> (repeatable)")
      ->capture_default_str();
  run->add_option("--budget", budgets, "manual boxes per track, 0 = unlimited (repeatable)")->capture_default_str();
  run->add_option("--iou", iou, "IoU threshold for recall")->capture_default_str();
  run->add_option("--target-recall", target_recall, "stop a track once this recall is reached");
  run->add_option("--seed", seed, "scene rendering and sampling seed")->capture_default_str();
  run->add_option("--out", out, "curve table")->capture_default_str();
  run->add_option("--tracks-out", tracks_out, "optional per-track CSV");
  run->add_option("--lambda", lambda, "watch-time multiplier")->capture_default_str();
  run->add_option("--t-box", t_box, "seconds per manual box")->capture_default_str();
  run->add_option("--fps", fps, "review playback rate")->capture_default_str();
  run->add_option("--templates", templates, "K templates per prediction")->capture_default_str();
  run->add_option("--delta", delta, "geometric blending radius in frames")->capture_default_str();
  run->add_flag("--quiet", quiet, "no per-track progress");

  std::string scene = "conditioning";
  std::string render_out = "scene";
  auto* render = app.add_subcommand("render", "render a synthetic scene as a MOT-style sequence");
  render->add_option("--scene", scene, "suite scene name, random_<n>, conditioning or a scene file")->capture_default_str();
  render->add_option("--seed", seed)->capture_default_str();
  render->add_option("--out", render_out, "output directory")->capture_default_str();

  auto* suite = app.add_subcommand("suite", "render the whole synthetic suite");
  suite->add_option("--seed", seed)->capture_default_str();
  suite->add_option("--out", render_out, "output directory, one subdirectory per scene")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*render) {
      render_scene(scene_by_name(scene), seed, render_out);
      std::cerr << "wrote " << render_out << "\n";
      return 0;
    }
    if (*suite) {
      for (const auto& spec : standard_suite()) render_scene(spec, seed, fs::path(render_out) / spec.name);
      std::cerr << "wrote " << standard_suite().size() << " scenes under " << render_out << "\n";
      return 0;
    }

    const auto data = load_dataset(dataset, format, seed);
    auto extractor = std::make_shared<GradientExtractor>();
    std::ofstream tracks_file;
    if (!tracks_out.empty()) {
      tracks_file.open(tracks_out);
      if (!tracks_file) throw IoError("cannot write " + tracks_out);
      tracks_file << "strategy,policy,budget,video,object_id,boxes,recall,sim_time_s,keyframes\n" << std::setprecision(10);
    }
    std::vector<CurveRow> rows;
    for (const auto& strategy : strategies) {
      for (const auto& policy_text : policies) {
        const KeyframePolicy policy = parse_policy(policy_text);
        for (int budget : budgets) {
          SimulationConfig cfg;
          cfg.strategy = track_strategy_from_string(strategy);
          cfg.policy = policy;
          cfg.iou_threshold = iou;
          cfg.budget = budget;
          cfg.target_recall = target_recall;
          cfg.seed = seed;
          cfg.interp.templates = templates;
          cfg.interp.delta = delta;
          cfg.lambda = lambda;
          cfg.t_box = t_box;
          cfg.playback_fps = fps;
          const auto results = simulate_dataset(data, cfg, extractor, [&](const TrackResult& r) {
            if (!quiet) {
              std::cerr << strategy << " " << policy.label << " b=" << budget << " " << r.video << "#" << r.object_id
                        << " boxes=" << r.point.boxes_per_track << " recall=" << r.point.recall << "\n";
            }
            if (tracks_file.is_open()) {
              tracks_file << strategy << ',' << policy.label << ',' << budget << ',' << r.video << ',' << r.object_id << ','
                          << r.point.boxes_per_track << ',' << r.point.recall << ',' << r.point.sim_time_s << ',';
              for (std::size_t k = 0; k < r.keyframes.size(); ++k) tracks_file << (k ? ";" : "") << r.keyframes[k];
              tracks_file << '\n';
            }
          });
          rows.push_back({strategy, policy.label, average(results)});
        }
      }
    }
    std::ofstream csv(out);
    if (!csv) throw IoError("cannot write " + out);
    write_curves_csv(csv, rows);
    write_curves_csv(std::cout, rows);
  } catch (const ValidationError& e) {
    std::cerr << "annosim: invalid " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "annosim: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
