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

#include "dataengine/http_provider.hpp"

#include <cstdlib>

#include "httplib.h"

namespace dataengine {

using nlohmann::json;

HttpProviderOptions http_provider_options_from_env() {
  HttpProviderOptions o;
  if (const char* e = std::getenv("DATAENGINE_LLM_ENDPOINT")) o.endpoint = e;
  if (const char* t = std::getenv("DATAENGINE_LLM_TOKEN")) o.token = t;
  return o;
}

HttpChatProvider::HttpChatProvider(HttpProviderOptions options) : options_(std::move(options)) {
  const auto scheme_end = options_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw Error("endpoint must be an absolute URL: '" + options_.endpoint + "'");
  }
  const auto path_start = options_.endpoint.find('/', scheme_end + 3);
  origin_ = options_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : options_.endpoint.substr(path_start);
}

ProviderReply parse_chat_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
    ProviderReply reply;
    reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage")) {
      reply.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::uint64_t{0});
      reply.usage.completion_tokens = j["usage"].value("completion_tokens", std::uint64_t{0});
    }
    return reply;
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed provider response: ") + e.what(), false);
  }
}

ProviderReply HttpChatProvider::send(const ChatRequest& request) {
  httplib::Client client(origin_);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);
  httplib::Headers headers;
  if (!options_.token.empty()) {
    headers.emplace("Authorization", "Bearer " + options_.token);
  }
  const std::string body = canonical_json(request).dump();
  auto res = client.Post(path_, headers, body, "application/json");
  if (!res) {
    throw ProviderError("transport failure: " + httplib::to_string(res.error()), true);
  }
  if (res->status == 429 || res->status >= 500) {
    throw ProviderError("provider returned HTTP " + std::to_string(res->status), true,
                        res->status);
  }
  if (res->status != 200) {
    throw ProviderError("provider returned HTTP " + std::to_string(res->status) + ": " +
                            res->body.substr(0, 512),
                        false, res->status);
  }
  return parse_chat_response(res->body);
}

}  // namespace dataengine
