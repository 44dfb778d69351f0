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

// JSON-over-HTTP API for the review console. Every route lives under /api
// and needs "Authorization: Bearer <token>".
//
//   GET  /api/rounds
//   GET  /api/rounds/{n}/manifest
//   GET  /api/scoreboard/{n}
//   GET  /api/prompts
//   GET  /api/prompts/{id}/versions
//   GET  /api/prompts/{id}/diff?from=&to=
//   GET  /api/ipo/sessions                  POST /api/ipo/sessions
//   GET  /api/ipo/sessions/{id}
//   GET  /api/ipo/sessions/{id}/batch       POST /api/ipo/sessions/{id}/batch
//   POST /api/ipo/sessions/{id}/conflict-check
//   POST /api/ipo/sessions/{id}/failures
//   POST /api/ipo/sessions/{id}/clear
//   POST /api/ipo/sessions/{id}/step
//   POST /api/ipo/sessions/{id}/correction
//   GET  /api/proposals                     GET /api/proposals/{id}
//   POST /api/proposals/{id}/decision
//   GET  /api/images/{id}                   GET /api/images/{id}/annotation
//   GET  /api/ledger                        GET /api/ledger/stats
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "dataengine/loop_orchestrator.hpp"

namespace dataengine {

inline constexpr const char* kApiTokenEnv = "DATAENGINE_API_TOKEN";

// Throws when the variable is unset or empty.
std::string api_token_from_env();

struct ServiceRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string authorization;  // raw header value
};

struct ServiceResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ServiceOptions {
  // Served at / when set, e.g. a built console bundle.
  std::optional<std::filesystem::path> static_dir;
};

class Service {
 public:
  Service(Engine& engine, std::string token, ServiceOptions options = {});
  ~Service();

  // Routes one request; never throws.
  ServiceResponse handle(const ServiceRequest& request);

  // Binds `host:port` (port 0 picks a free one) and returns the bound port.
  // Throws when the address cannot be bound.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  void stop();

 private:
  ServiceResponse route(const ServiceRequest& request);

  Engine& engine_;
  std::string token_;
  ServiceOptions options_;
  // Review-batch generation shares the engine's batch context.
  std::mutex batch_mu_;
  struct Http;
  std::unique_ptr<Http> http_;
};

}  // namespace dataengine
