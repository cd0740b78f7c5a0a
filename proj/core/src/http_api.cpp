#include <algorithm>
#include <cctype>
#include <charconv>

#include <httplib.h>
#include <json.hpp>

#include "vidann/error.hpp"
#include "vidann/service.hpp"

namespace vidann {

using json = nlohmann::json;

namespace {

struct HttpError {
  int status;
  std::string code;
  std::string message;
  std::string field;
};

ApiResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

ApiResponse error_response(const HttpError& e) {
  json body = {{"error", e.code}, {"message", e.message}};
  if (!e.field.empty()) body["field"] = e.field;
  return json_response(e.status, body);
}

json parse_body(const ApiRequest& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw HttpError{400, "bad_request", "request body must be a JSON object", {}};
    return j;
  } catch (const json::parse_error& e) {
    throw HttpError{400, "bad_request", std::string("malformed JSON: ") + e.what(), {}};
  }
}

int parse_int(const std::string& text, const std::string& field) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw HttpError{400, "bad_request", "'" + text + "' is not an integer", field};
  }
  return value;
}

template <class T>
T field_as(const json& body, const std::string& name) {
  if (!body.contains(name)) throw HttpError{422, "validation", "missing field", name};
  try {
    return body.at(name).get<T>();
  } catch (const json::exception&) {
    throw HttpError{422, "validation", "wrong type", name};
  }
}

BoundingBox box_field(const json& body) {
  if (!body.contains("box")) throw HttpError{422, "validation", "missing field", "box"};
  const json& b = body.at("box");
  if (b.is_array() && b.size() == 4 && std::all_of(b.begin(), b.end(), [](const json& v) { return v.is_number(); })) {
    return {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  }
  if (b.is_object() && b.contains("x") && b.contains("y") && b.contains("w") && b.contains("h")) {
    try {
      return {b.at("x").get<double>(), b.at("y").get<double>(), b.at("w").get<double>(), b.at("h").get<double>()};
    } catch (const json::exception&) {
    }
  }
  throw HttpError{422, "validation", "expected [x, y, w, h] or {x, y, w, h}", "box"};
}

json box_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

json optional_int(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

json entry_json(const VideoCatalogEntry& e) {
  return {{"video_id", e.id},
          {"directory", e.directory.string()},
          {"frame_count", e.frame_count},
          {"width", e.width},
          {"height", e.height},
          {"ground_truth", e.ground_truth ? json(e.ground_truth->string()) : json(nullptr)}};
}

json mutation_json(const std::string& session_id, const MutationResult& r) {
  return {{"session_id", session_id},
          {"suggestion", optional_int(r.suggestion)},
          {"changed", r.changed ? json::array({r.changed->first, r.changed->last}) : json(nullptr)},
          {"keyframes", r.keyframes},
          {"seq", r.last_seq}};
}

json keyframes_json(const std::vector<Keyframe>& keyframes) {
  json out = json::array();
  for (const auto& k : keyframes) out.push_back({{"frame", k.frame}, {"box", box_json(k.box)}});
  return out;
}

json record_json(const AnnotationService& service, const std::string& id) {
  const SessionRecord r = service.record(id);
  const SessionSummary s = summarize(*service.state(id));
  return {{"session_id", r.id},
          {"video_id", r.video_id},
          {"object_id", r.object_id},
          {"status", std::string(to_string(r.status))},
          {"events", r.events_path.string()},
          {"snapshot", r.snapshot_path.string()},
          {"summary",
           {{"n_box", s.n_box},
            {"keyframes_added", s.keyframes_added},
            {"keyframes_removed", s.keyframes_removed},
            {"suggestions_issued", s.suggestions_issued},
            {"overrides", s.overrides},
            {"elapsed_seconds", s.elapsed_seconds}}}};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string::npos ? path.size() : j;
    if (end > i) parts.push_back(path.substr(i, end - i));
    i = end;
  }
  return parts;
}

std::optional<int> query_int(const ApiRequest& req, const std::string& name) {
  const auto it = req.query.find(name);
  if (it == req.query.end() || it->second.empty()) return std::nullopt;
  return parse_int(it->second, name);
}

ApiResponse route(AnnotationService& service, const ApiRequest& req) {
  const auto p = split_path(req.path);
  const std::string& m = req.method;
  auto method_not_allowed = [&]() -> ApiResponse {
    throw HttpError{405, "method_not_allowed", m + " not supported on " + req.path, {}};
  };

  if (p.size() == 1 && p[0] == "videos") {
    if (m == "GET") {
      json out = json::array();
      for (const auto& e : service.videos()) out.push_back(entry_json(e));
      return json_response(200, out);
    }
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(req);
    std::optional<std::filesystem::path> gt;
    if (body.contains("ground_truth") && !body.at("ground_truth").is_null()) gt = field_as<std::string>(body, "ground_truth");
    return json_response(201, entry_json(service.register_video(field_as<std::string>(body, "directory"), gt)));
  }
  if (p.size() == 2 && p[0] == "videos") {
    if (m != "GET") return method_not_allowed();
    return json_response(200, entry_json(service.video(p[1])));
  }
  if (p.size() == 4 && p[0] == "videos" && p[2] == "frames") {
    if (m != "GET") return method_not_allowed();
    const auto png = service.get_frame(p[1], parse_int(p[3], "frame"));
    return {200, "image/png", std::string(png.begin(), png.end())};
  }
  if (p.size() == 1 && p[0] == "sessions") {
    if (m == "GET") {
      json out = json::array();
      for (const auto& r : service.sessions()) out.push_back(record_json(service, r.id));
      return json_response(200, out);
    }
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(req);
    SessionOptions options;
    if (body.contains("strategy")) options.strategy = track_strategy_from_string(field_as<std::string>(body, "strategy"));
    if (body.contains("suggestions")) options.suggestions = field_as<bool>(body, "suggestions");
    if (body.contains("seed")) options.seed = field_as<std::uint64_t>(body, "seed");
    const std::string id = service.create_session(field_as<std::string>(body, "video_id"), field_as<int>(body, "object_id"),
                                                  field_as<int>(body, "frame"), box_field(body), options);
    const auto state = service.state(id);
    return json_response(201, {{"session_id", id},
                               {"suggestion", optional_int(state->suggestion)},
                               {"keyframes", state->keyframes.size()}});
  }
  if (p.size() >= 2 && p[0] == "sessions") {
    const std::string& id = p[1];
    if (p.size() == 2) {
      if (m != "GET") return method_not_allowed();
      return json_response(200, record_json(service, id));
    }
    if (p.size() == 3 && p[2] == "keyframes") {
      if (m != "POST") return method_not_allowed();
      const json body = parse_body(req);
      std::optional<std::string> key;
      if (const auto it = req.headers.find("idempotency-key"); it != req.headers.end()) key = it->second;
      return json_response(200, mutation_json(id, service.post_keyframe(id, field_as<int>(body, "frame"), box_field(body), key)));
    }
    if (p.size() == 4 && p[2] == "keyframes") {
      if (m != "DELETE") return method_not_allowed();
      return json_response(200, mutation_json(id, service.delete_keyframe(id, parse_int(p[3], "frame"))));
    }
    if (p.size() == 3 && p[2] == "track") {
      if (m != "GET") return method_not_allowed();
      const TrackSlice slice = service.get_track(id, query_int(req, "from"), query_int(req, "to"));
      json points = json::array();
      for (const auto& [f, tp] : slice.points) {
        points.push_back({{"frame", f},
                          {"box", box_json(tp.box)},
                          {"provenance", std::string(to_string(tp.provenance))},
                          {"confidence", tp.confidence}});
      }
      return json_response(200, {{"session_id", id},
                                 {"range", json::array({slice.range.first, slice.range.last})},
                                 {"finalized", slice.finalized},
                                 {"suggestion", optional_int(slice.suggestion)},
                                 {"keyframes", keyframes_json(slice.keyframes)},
                                 {"points", points}});
    }
    if (p.size() == 3 && p[2] == "suggestion") {
      if (m != "GET") return method_not_allowed();
      return json_response(200, {{"session_id", id}, {"suggestion", optional_int(service.get_suggestion(id))}});
    }
    if (p.size() == 3 && p[2] == "finalize") {
      if (m != "POST") return method_not_allowed();
      const auto path = service.finalize_session(id);
      json out = record_json(service, id);
      out["export"] = path.string();
      return json_response(200, out);
    }
  }
  throw HttpError{404, "not_found", "no route for " + req.path, {}};
}

}  // namespace

ApiResponse handle_request(AnnotationService& service, const ApiRequest& request) {
  try {
    return route(service, request);
  } catch (const HttpError& e) {
    return error_response(e);
  } catch (const NotFound& e) {
    return error_response({404, "not_found", e.what(), {}});
  } catch (const Conflict& e) {
    return error_response({409, "conflict", e.what(), {}});
  } catch (const ValidationError& e) {
    return error_response({422, "validation", e.what(), e.field()});
  } catch (const ParseError& e) {
    return error_response({400, "bad_request", e.what(), {}});
  } catch (const IoError& e) {
    return error_response({422, "validation", e.what(), "directory"});
  } catch (const std::exception& e) {
    return error_response({500, "internal", e.what(), {}});
  }
}

struct HttpServer::Impl {
  explicit Impl(AnnotationService& s) : service(s) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      ApiRequest r;
      r.method = req.method;
      r.path = req.path;
      for (const auto& [k, v] : req.params) r.query.emplace(k, v);
      for (const auto& [k, v] : req.headers) {
        std::string name = k;
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
        r.headers.emplace(std::move(name), v);
      }
      r.body = req.body;
      const ApiResponse out = handle_request(service, r);
      res.status = out.status;
      res.set_content(out.body, out.content_type);
    };
    server.Get(".*", handler);
    server.Post(".*", handler);
    server.Delete(".*", handler);
    server.Put(".*", handler);
  }

  AnnotationService& service;
  httplib::Server server;
};

HttpServer::HttpServer(AnnotationService& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::serve() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace vidann
