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

#include "dataengine/llm_gateway.hpp"

#include <cmath>
#include <fstream>
#include <thread>

namespace dataengine {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view text) {
  if (text == "system") return Role::kSystem;
  if (text == "user") return Role::kUser;
  if (text == "assistant") return Role::kAssistant;
  throw Error("unknown chat role '" + std::string(text) + "'");
}

json canonical_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  return {{"model", request.model},
          {"messages", messages},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

ChatRequest chat_request_from_json(const json& j) {
  ChatRequest r;
  r.model = j.at("model").get<std::string>();
  for (const auto& m : j.at("messages")) {
    r.messages.push_back({parse_role(m.at("role").get<std::string>()),
                          m.at("content").get<std::string>()});
  }
  r.temperature = j.at("temperature").get<double>();
  r.max_tokens = j.at("max_tokens").get<std::uint32_t>();
  return r;
}

std::string request_digest(const ChatRequest& request) {
  return sha256_hex(canonical_json(request).dump());
}

std::shared_ptr<Cassette> Cassette::open(const std::filesystem::path& path) {
  auto cassette = std::make_shared<Cassette>();
  cassette->path_ = path;
  std::ifstream in(path);
  if (!in) return cassette;
  for_each_line(in, [&](const std::string& line, std::size_t number) {
    try {
      json j = json::parse(line);
      CassetteEntry e{j.at("response_text").get<std::string>(),
                      j.value("prompt_tokens", std::uint64_t{0}),
                      j.value("completion_tokens", std::uint64_t{0})};
      cassette->entries_.emplace(j.at("digest").get<std::string>(), std::move(e));
    } catch (const json::exception& e) {
      throw ParseError(std::string("corrupt cassette entry: ") + e.what(), number);
    }
  });
  return cassette;
}

std::optional<CassetteEntry> Cassette::find(const std::string& digest) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(digest);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void Cassette::put(const std::string& digest, const CassetteEntry& entry,
                   const ChatRequest* request) {
  std::lock_guard lock(mu_);
  if (!entries_.emplace(digest, entry).second) return;
  if (!path_) return;
  json line = {{"digest", digest},
               {"response_text", entry.response_text},
               {"prompt_tokens", entry.prompt_tokens},
               {"completion_tokens", entry.completion_tokens}};
  if (request != nullptr) line["request"] = canonical_json(*request);
  append_line(*path_, line.dump());
}

void Cassette::put(const ChatRequest& request, std::string response_text,
                   std::uint64_t prompt_tokens, std::uint64_t completion_tokens) {
  put(request_digest(request), CassetteEntry{std::move(response_text), prompt_tokens,
                                             completion_tokens},
      &request);
}

std::size_t Cassette::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

GatewayMode parse_gateway_mode(std::string_view text) {
  if (text == "live") return GatewayMode::kLive;
  if (text == "record") return GatewayMode::kRecord;
  if (text == "replay") return GatewayMode::kReplay;
  throw Error("unknown gateway mode '" + std::string(text) + "'");
}

std::string_view to_string(GatewayMode mode) {
  switch (mode) {
    case GatewayMode::kLive: return "live";
    case GatewayMode::kRecord: return "record";
    case GatewayMode::kReplay: return "replay";
  }
  return "replay";
}

Gateway::Gateway(GatewayOptions options, std::shared_ptr<ChatProvider> provider,
                 std::shared_ptr<Cassette> cassette)
    : options_(std::move(options)),
      provider_(std::move(provider)),
      cassette_(std::move(cassette)),
      jitter_rng_(options_.jitter_seed) {
  if (options_.max_in_flight == 0) throw Error("gateway needs at least one request slot");
  if (options_.mode != GatewayMode::kLive && !cassette_) {
    throw Error("record and replay modes need a cassette");
  }
  if (options_.mode != GatewayMode::kReplay && !provider_) {
    throw Error("live and record modes need a provider");
  }
  if (!options_.sleep) {
    options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

void Gateway::log(RequestLogEntry entry) {
  std::lock_guard lock(mu_);
  log_.push_back(std::move(entry));
}

std::chrono::milliseconds Gateway::backoff_for(std::uint32_t attempt) {
  double u;
  {
    std::lock_guard lock(mu_);
    u = jitter_rng_.uniform01();
  }
  const double base = static_cast<double>(options_.backoff_base.count()) * std::ldexp(1.0, static_cast<int>(attempt));
  const double factor = 1.0 + options_.jitter * (2.0 * u - 1.0);
  return std::chrono::milliseconds(static_cast<long long>(std::llround(base * factor)));
}

Completion Gateway::complete(const ChatRequest& request) {
  if (request.messages.empty()) throw Error("chat request needs at least one message");
  if (!(request.temperature >= 0.0)) throw Error("temperature must be non-negative");

  const std::string digest = request_digest(request);
  if (options_.mode != GatewayMode::kLive) {
    if (auto hit = cassette_->find(digest)) {
      log({digest, 0, "cassette-hit", {}});
      Completion c;
      c.text = hit->response_text;
      c.usage = {hit->prompt_tokens, hit->completion_tokens};
      c.digest = digest;
      c.from_cassette = true;
      std::lock_guard lock(mu_);
      usages_.push_back({request.model, c.usage});
      return c;
    }
    if (options_.mode == GatewayMode::kReplay) {
      log({digest, 0, "replay-miss", {}});
      throw ReplayMissError(digest);
    }
  }
  Completion c = call_provider(request, digest);
  if (options_.mode == GatewayMode::kRecord) {
    cassette_->put(digest, {c.text, c.usage.prompt_tokens, c.usage.completion_tokens}, &request);
  }
  return c;
}

Completion Gateway::call_provider(const ChatRequest& request, const std::string& digest) {
  {
    std::unique_lock lock(mu_);
    slot_free_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
    ++in_flight_;
    peak_in_flight_ = std::max(peak_in_flight_, in_flight_);
  }
  struct SlotRelease {
    Gateway* self;
    ~SlotRelease() {
      {
        std::lock_guard lock(self->mu_);
        --self->in_flight_;
      }
      self->slot_free_.notify_one();
    }
  } release{this};

  const auto start = std::chrono::steady_clock::now();
  for (std::uint32_t attempt = 0;; ++attempt) {
    try {
      ProviderReply reply = provider_->send(request);
      log({digest, attempt, "ok", {}});
      Completion c;
      c.text = std::move(reply.text);
      c.usage = reply.usage;
      c.digest = digest;
      c.attempts = attempt + 1;
      c.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::steady_clock::now() - start);
      std::lock_guard lock(mu_);
      usages_.push_back({request.model, c.usage});
      return c;
    } catch (const ProviderError& e) {
      if (!e.transient()) {
        log({digest, attempt, "error", {}});
        throw;
      }
      if (attempt >= options_.max_retries) {
        log({digest, attempt, "transient-exhausted", {}});
        throw TransientExhaustedError("giving up after " + std::to_string(attempt + 1) +
                                      " attempts: " + e.what());
      }
      const auto delay = backoff_for(attempt);
      log({digest, attempt, "transient", delay});
      options_.sleep(delay);
    }
  }
}

std::vector<RequestLogEntry> Gateway::request_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::vector<UsageRecord> Gateway::usage_records() const {
  std::lock_guard lock(mu_);
  return usages_;
}

std::size_t Gateway::peak_in_flight() const {
  std::lock_guard lock(mu_);
  return peak_in_flight_;
}

double cost_report(std::span<const UsageRecord> usages, const PriceTable& prices) {
  if (prices.empty()) throw Error("price table is empty");
  double total = 0.0;
  for (const auto& u : usages) {
    auto it = prices.find(u.model);
    if (it == prices.end()) it = prices.find("*");
    if (it == prices.end()) throw Error("no price for model '" + u.model + "'");
    total += static_cast<double>(u.usage.prompt_tokens) / 1000.0 * it->second.prompt_per_1k +
             static_cast<double>(u.usage.completion_tokens) / 1000.0 * it->second.completion_per_1k;
  }
  return total;
}

}  // namespace dataengine
