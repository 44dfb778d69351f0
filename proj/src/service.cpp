// Copyright 2026 The DataEngine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dataengine/service.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <vector>

#include "httplib.h"

namespace dataengine {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct HttpError {
  int status;
  std::string message;
};

[[noreturn]] void not_found(const std::string& what) { throw HttpError{404, what}; }
[[noreturn]] void bad_request(const std::string& what) { throw HttpError{400, what}; }

ServiceResponse json_response(const json& j, int status = 200) {
  ServiceResponse r;
  r.status = status;
  r.body = j.dump();
  return r;
}

ServiceResponse error_response(int status, const std::string& message) {
  return json_response(json{{"error", message}}, status);
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// "*" matches one segment and is captured.
bool match(const std::vector<std::string>& segs, std::initializer_list<const char*> pattern,
           std::vector<std::string>* captures) {
  if (segs.size() != pattern.size()) return false;
  captures->clear();
  std::size_t i = 0;
  for (const char* p : pattern) {
    if (std::string_view(p) == "*") {
      captures->push_back(segs[i]);
    } else if (segs[i] != p) {
      return false;
    }
    ++i;
  }
  return true;
}

json parse_body(const std::string& body) {
  if (trim(body).empty()) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) bad_request("request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    bad_request(std::string("malformed JSON body: ") + e.what());
  }
}

std::uint32_t parse_u32(const std::string& text, const std::string& what) {
  if (text.empty() || text.size() > 9 ||
      text.find_first_not_of("0123456789") != std::string::npos) {
    bad_request(what + " must be a non-negative integer, got '" + text + "'");
  }
  return static_cast<std::uint32_t>(std::stoul(text));
}

template <typename T>
T field(const json& body, const char* key) {
  if (!body.contains(key)) bad_request(std::string("missing field '") + key + "'");
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    bad_request(std::string("field '") + key + "' has the wrong type");
  }
}

std::string content_type_for(const fs::path& p) {
  std::string ext = to_lower(p.extension().string());
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

bool token_matches(const std::string& header, const std::string& token) {
  static constexpr std::string_view kPrefix = "Bearer ";
  if (header.size() < kPrefix.size() || header.compare(0, kPrefix.size(), kPrefix) != 0) {
    return false;
  }
  const std::string_view given = std::string_view(header).substr(kPrefix.size());
  if (given.size() != token.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < given.size(); ++i) {
    diff |= static_cast<unsigned char>(given[i] ^ token[i]);
  }
  return diff == 0;
}

json session_json(const IpoSession& s) { return to_json(s); }

}  // namespace

std::string api_token_from_env() {
  const char* v = std::getenv(kApiTokenEnv);
  if (!v || !*v) {
    throw Error(std::string(kApiTokenEnv) + " must be set before the service starts");
  }
  return v;
}

struct Service::Http {
  httplib::Server server;
};

Service::Service(Engine& engine, std::string token, ServiceOptions options)
    : engine_(engine), token_(std::move(token)), options_(std::move(options)) {
  if (token_.empty()) throw Error("the service needs a non-empty API token");
}

Service::~Service() = default;

ServiceResponse Service::handle(const ServiceRequest& request) {
  if (request.path != "/api" && request.path.rfind("/api/", 0) != 0) {
    return error_response(404, "no route for " + request.path);
  }
  if (!token_matches(request.authorization, token_)) {
    return error_response(401, "missing or wrong bearer token");
  }
  try {
    return route(request);
  } catch (const HttpError& e) {
    return error_response(e.status, e.message);
  } catch (const IllegalTransitionError& e) {
    return error_response(409, e.what());
  } catch (const IpoError& e) {
    const std::string what = e.what();
    const bool missing = what.rfind("unknown ", 0) == 0 || what.rfind("no review batch", 0) == 0;
    return error_response(missing ? 404 : 409, what);
  } catch (const GatewayError& e) {
    return error_response(502, e.what());
  } catch (const PromptStoreError& e) {
    return error_response(404, e.what());
  } catch (const Error& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ServiceResponse Service::route(const ServiceRequest& req) {
  const auto segs = split_path(req.path);
  const bool get = req.method == "GET";
  const bool post = req.method == "POST";
  std::vector<std::string> c;
  IpoWorkspace& ws = engine_.workspace();
  const fs::path run_dir = engine_.config().paths.run_dir;

  auto require_session = [&](const std::string& id) {
    for (const auto& s : ws.sessions()) {
      if (s.session_id == id) return s;
    }
    not_found("unknown session " + id);
  };

  if (get && match(segs, {"api", "rounds"}, &c)) {
    json out = json::array();
    for (std::uint32_t r = 1;; ++r) {
      const fs::path dir = round_dir(run_dir, r);
      if (!fs::exists(dir)) break;
      const bool complete = fs::exists(dir / "manifest");
      std::string status = fs::exists(dir / "status") ? trim(read_file(dir / "status")) : "";
      out.push_back({{"round", r}, {"complete", complete}, {"status", status}});
    }
    return json_response(out);
  }
  if (get && match(segs, {"api", "rounds", "*", "manifest"}, &c)) {
    const fs::path path = round_dir(run_dir, parse_u32(c[0], "round")) / "manifest";
    if (!fs::exists(path)) not_found("round " + c[0] + " has no manifest");
    ServiceResponse r;
    r.body = read_file(path);
    return r;
  }
  if (get && match(segs, {"api", "scoreboard", "*"}, &c)) {
    const fs::path dir = round_dir(run_dir, parse_u32(c[0], "round"));
    if (!fs::exists(dir / "scoreboard")) not_found("round " + c[0] + " has no scoreboard");
    json out = {{"round", parse_u32(c[0], "round")},
                {"before", json::parse(read_file(dir / "scoreboard"))},
                {"after", nullptr}};
    if (fs::exists(dir / "scoreboard.after")) {
      out["after"] = json::parse(read_file(dir / "scoreboard.after"));
    }
    return json_response(out);
  }

  if (get && match(segs, {"api", "prompts"}, &c)) {
    json out = json::array();
    for (const auto& id : ws.store().template_ids()) {
      const auto versions = ws.store().versions(id);
      const auto active = ws.store().active(id);
      out.push_back({{"template_id", id},
                     {"versions", versions.size()},
                     {"latest_version", versions.empty() ? 0 : versions.back().version},
                     {"active_version", active ? json(active->version) : json(nullptr)}});
    }
    return json_response(out);
  }
  if (get && match(segs, {"api", "prompts", "*", "versions"}, &c)) {
    if (!ws.store().contains(c[0])) not_found("unknown template " + c[0]);
    json out = json::array();
    for (const auto& t : ws.store().versions(c[0])) out.push_back(to_json(t));
    return json_response(out);
  }
  if (get && match(segs, {"api", "prompts", "*", "diff"}, &c)) {
    if (!ws.store().contains(c[0])) not_found("unknown template " + c[0]);
    auto from_it = req.query.find("from");
    auto to_it = req.query.find("to");
    if (from_it == req.query.end() || to_it == req.query.end()) {
      bad_request("diff needs from and to query parameters");
    }
    const auto from = parse_u32(from_it->second, "from");
    const auto to = parse_u32(to_it->second, "to");
    const auto hunks = ws.store().diff(c[0], from, to);
    return json_response({{"template_id", c[0]},
                          {"from", from},
                          {"to", to},
                          {"hunks", to_json(hunks)},
                          {"text", format_diff(hunks)}});
  }

  if (match(segs, {"api", "ipo", "sessions"}, &c)) {
    if (get) {
      json out = json::array();
      for (const auto& s : ws.sessions()) out.push_back(session_json(s));
      return json_response(out);
    }
    if (post) {
      const json body = parse_body(req.body);
      const auto template_id = body.value("template_id", std::string(kGenerationTemplate));
      if (!ws.store().contains(template_id)) not_found("unknown template " + template_id);
      std::uint32_t version = 0;
      if (body.contains("version")) {
        version = field<std::uint32_t>(body, "version");
      } else {
        const auto versions = ws.store().versions(template_id);
        version = versions.back().version;
      }
      const auto s = ws.start_session(template_id, version,
                                      body.value("batch_size", kDefaultReviewBatchSize),
                                      body.value("theta", engine_.config().theta));
      return json_response(session_json(s), 201);
    }
  }
  if (get && match(segs, {"api", "ipo", "sessions", "*"}, &c)) {
    return json_response(session_json(require_session(c[0])));
  }
  if (match(segs, {"api", "ipo", "sessions", "*", "batch"}, &c)) {
    require_session(c[0]);
    if (get) return json_response(to_json(ws.batch(c[0])));
    if (post) {
      const json body = parse_body(req.body);
      std::lock_guard lock(batch_mu_);
      const BatchContext ctx = engine_.batch_context(body.value("questions_per_seed", 1u));
      return json_response(to_json(ws.generate_review_batch(c[0], ctx)));
    }
  }
  if (post && match(segs, {"api", "ipo", "sessions", "*", "conflict-check"}, &c)) {
    require_session(c[0]);
    return json_response(
        to_json(ws.run_conflict_check(c[0], engine_.gateway(), engine_.config().gateway.model)));
  }
  if (post && match(segs, {"api", "ipo", "sessions", "*", "failures"}, &c)) {
    require_session(c[0]);
    const json body = parse_body(req.body);
    FailureType type;
    try {
      type = parse_failure_type(field<std::string>(body, "failure_type"));
    } catch (const Error& e) {
      bad_request(e.what());
    }
    const FailureCase fc = ws.record_failure(
        c[0], field<std::string>(body, "qa_id"), type, field<std::string>(body, "explanation"),
        field<std::string>(body, "tagger"), body.value("override", false));
    return json_response(to_json(fc), 201);
  }
  if (post && match(segs, {"api", "ipo", "sessions", "*", "clear"}, &c)) {
    require_session(c[0]);
    const json body = parse_body(req.body);
    ws.clear_case(c[0], field<std::string>(body, "qa_id"), field<std::string>(body, "tagger"));
    return json_response(to_json(ws.batch(c[0])));
  }
  if (post && match(segs, {"api", "ipo", "sessions", "*", "step"}, &c)) {
    require_session(c[0]);
    ws.step(c[0]);
    const IpoSession s = ws.session(c[0]);
    json out = session_json(s);
    if (!s.history.empty()) out["failure_rate"] = s.history.back().failure_rate;
    return json_response(out);
  }
  if (post && match(segs, {"api", "ipo", "sessions", "*", "correction"}, &c)) {
    require_session(c[0]);
    const json body = parse_body(req.body);
    return json_response(to_json(ws.propose_correction(
        c[0], engine_.gateway(), engine_.config().gateway.model, body.value("k", 5u))));
  }

  if (get && match(segs, {"api", "proposals"}, &c)) {
    json out = json::array();
    for (const auto& p : ws.proposals()) out.push_back(to_json(p));
    return json_response(out);
  }
  if (get && match(segs, {"api", "proposals", "*"}, &c)) {
    return json_response(to_json(ws.proposal(c[0])));
  }
  if (post && match(segs, {"api", "proposals", "*", "decision"}, &c)) {
    const json body = parse_body(req.body);
    const bool approve = field<bool>(body, "approve");
    return json_response(
        to_json(ws.decide_proposal(c[0], approve, field<std::string>(body, "decider"))));
  }

  if (get && match(segs, {"api", "images", "*"}, &c)) {
    const ImageAnnotation* ann = engine_.catalog().find(c[0]);
    if (!ann) not_found("unknown image " + c[0]);
    const auto& dir = engine_.config().paths.images_dir;
    if (!dir) not_found("no image directory is configured");
    const fs::path path = *dir / ann->file_name;
    if (ann->file_name.empty() || !fs::exists(path)) not_found("image file missing for " + c[0]);
    ServiceResponse r;
    r.content_type = content_type_for(path);
    r.body = read_file(path);
    return r;
  }
  if (get && match(segs, {"api", "images", "*", "annotation"}, &c)) {
    const ImageAnnotation* ann = engine_.catalog().find(c[0]);
    if (!ann) not_found("unknown image " + c[0]);
    return json_response(to_json(*ann));
  }

  if (get && match(segs, {"api", "ledger"}, &c)) {
    json out = json::array();
    for (const auto& fc : ws.ledger()) out.push_back(to_json(fc));
    return json_response(out);
  }
  if (get && match(segs, {"api", "ledger", "stats"}, &c)) {
    VersionRange range;
    if (auto it = req.query.find("min_version"); it != req.query.end()) {
      range.min = parse_u32(it->second, "min_version");
    }
    if (auto it = req.query.find("max_version"); it != req.query.end()) {
      range.max = parse_u32(it->second, "max_version");
    }
    std::string template_id;
    if (auto it = req.query.find("template_id"); it != req.query.end()) template_id = it->second;
    const auto cases = ws.ledger();
    json counts = json::object();
    std::size_t total = 0;
    for (const auto& [type, n] : ledger_stats(cases, range, template_id)) {
      counts[std::string(to_string(type))] = n;
      total += n;
    }
    return json_response({{"counts", counts}, {"total", total}});
  }

  if (!get && !post) throw HttpError{405, "method " + req.method + " is not supported"};
  not_found("no route for " + req.method + " " + req.path);
}

int Service::bind(const std::string& host, int port) {
  http_ = std::make_unique<Http>();
  auto& svr = http_->server;
  auto adapt = [this](const httplib::Request& hreq, httplib::Response& hres) {
    ServiceRequest req;
    req.method = hreq.method;
    req.path = hreq.path;
    for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
    req.body = hreq.body;
    req.authorization = hreq.get_header_value("Authorization");
    const ServiceResponse res = handle(req);
    hres.status = res.status;
    if (res.status == 401) hres.set_header("WWW-Authenticate", "Bearer");
    hres.set_content(res.body, res.content_type);
  };
  svr.Get(R"(/api(/.*)?)", adapt);
  svr.Post(R"(/api(/.*)?)", adapt);
  if (options_.static_dir && !svr.set_mount_point("/", options_.static_dir->string())) {
    throw Error("static directory " + options_.static_dir->string() + " does not exist");
  }
  int bound = port;
  if (port == 0) {
    bound = svr.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
  } else if (!svr.bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void Service::serve() {
  if (!http_) throw Error("bind() must be called before serve()");
  http_->server.listen_after_bind();
}

void Service::stop() {
  if (http_) http_->server.stop();
}

}  // namespace dataengine
