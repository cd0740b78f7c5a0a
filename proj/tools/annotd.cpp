// HTTP annotation server.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "vidann/error.hpp"
#include "vidann/service.hpp"

using namespace vidann;

namespace {
HttpServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annotd - annotation session server"};
  std::string data_dir = "annotd-data";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string params;
  std::string strategy = "visual";
  bool no_suggestions = false;
  std::vector<std::string> videos;
  app.add_option("--data-dir", data_dir, "catalog, event logs and snapshots")->capture_default_str();
  app.add_option("--host", host)->capture_default_str();
  app.add_option("--port", port, "0 picks a free port")->capture_default_str();
  app.add_option("--params", params, "ranking head parameters (default: no ranking, earliest candidate)");
  app.add_option("--strategy", strategy)->check(CLI::IsMember({"linear", "tracking", "visual"}))->capture_default_str();
  app.add_flag("--no-suggestions", no_suggestions, "never compute next-frame suggestions");
  app.add_option("--register", videos, "frame directories to register at startup");
  CLI11_PARSE(app, argc, argv);

  try {
    ServiceConfig cfg;
    cfg.data_dir = data_dir;
    if (!params.empty()) cfg.head = std::make_shared<const RankingHeadParams>(load_head_params(params));
    cfg.strategy = track_strategy_from_string(strategy);
    cfg.suggestions = !no_suggestions;
    AnnotationService service(cfg);
    for (const auto& dir : videos) {
      const auto e = service.register_video(dir);
      std::cout << e.id << " " << e.directory.string() << " " << e.frame_count << " frames\n";
    }
    HttpServer server(service);
    const int bound = server.bind(host, port);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on http://" << host << ":" << bound << std::endl;
    server.serve();
  } catch (const std::exception& e) {
    std::cerr << "annotd: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
