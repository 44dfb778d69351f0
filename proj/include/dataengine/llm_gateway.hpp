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

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dataengine/common.hpp"
#include "dataengine/rng.hpp"
#include "json.hpp"

namespace dataengine {

enum class Role { kSystem, kUser, kAssistant };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  std::uint32_t max_tokens = 1024;
  bool operator==(const ChatRequest&) const = default;
};

inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kClassificationTemperature = 0.0;

// Canonical form used for hashing. Object keys are sorted, so the digest
// does not depend on the order fields were set or serialized in.
nlohmann::json canonical_json(const ChatRequest& request);
ChatRequest chat_request_from_json(const nlohmann::json& j);

// SHA-256 of the canonical serialization. Message order is significant.
std::string request_digest(const ChatRequest& request);

struct Usage {
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
};

class GatewayError : public Error {
 public:
  using Error::Error;
};

// Raised by providers. Transient errors (rate limits, 5xx, dropped
// connections) are retried by the gateway; others are surfaced at once.
class ProviderError : public GatewayError {
 public:
  ProviderError(const std::string& what, bool transient, int status = 0)
      : GatewayError(what), transient_(transient), status_(status) {}
  bool transient() const { return transient_; }
  int status() const { return status_; }

 private:
  bool transient_;
  int status_;
};

class TransientExhaustedError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class ReplayMissError : public GatewayError {
 public:
  explicit ReplayMissError(const std::string& digest)
      : GatewayError("replay cassette has no entry for request " + digest), digest_(digest) {}
  const std::string& digest() const { return digest_; }

 private:
  std::string digest_;
};

struct ProviderReply {
  std::string text;
  Usage usage;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ProviderReply send(const ChatRequest& request) = 0;
};

struct CassetteEntry {
  std::string response_text;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  bool operator==(const CassetteEntry&) const = default;
};

// Digest-keyed response store. When bound to a file, `put` appends one
// line per new entry; existing lines are never rewritten.
class Cassette {
 public:
  Cassette() = default;

  // Missing file yields an empty cassette bound to `path`.
  static std::shared_ptr<Cassette> open(const std::filesystem::path& path);

  std::optional<CassetteEntry> find(const std::string& digest) const;
  void put(const std::string& digest, const CassetteEntry& entry,
           const ChatRequest* request = nullptr);
  // Convenience for building fixtures.
  void put(const ChatRequest& request, std::string response_text,
           std::uint64_t prompt_tokens = 0, std::uint64_t completion_tokens = 0);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, CassetteEntry> entries_;
  std::optional<std::filesystem::path> path_;
};

enum class GatewayMode { kLive, kRecord, kReplay };

GatewayMode parse_gateway_mode(std::string_view text);
std::string_view to_string(GatewayMode mode);

struct GatewayOptions {
  GatewayMode mode = GatewayMode::kReplay;
  std::size_t max_in_flight = 4;
  std::uint32_t max_retries = 3;
  std::chrono::milliseconds backoff_base{1000};
  double jitter = 0.2;
  std::uint64_t jitter_seed = 0;
  // Injected so tests can observe the schedule without waiting.
  std::function<void(std::chrono::milliseconds)> sleep;
};

struct Completion {
  std::string text;
  Usage usage;
  std::chrono::milliseconds latency{0};
  std::string digest;
  std::uint32_t attempts = 0;
  bool from_cassette = false;
};

struct RequestLogEntry {
  std::string digest;
  std::uint32_t attempt = 0;
  std::string outcome;
  std::chrono::milliseconds backoff{0};
};

struct UsageRecord {
  std::string model;
  Usage usage;
};

// Provider-agnostic completion client. Safe to share between threads.
class Gateway {
 public:
  Gateway(GatewayOptions options, std::shared_ptr<ChatProvider> provider,
          std::shared_ptr<Cassette> cassette);

  // replay: cassette only, never touches the provider.
  // record: cassette hit is returned as-is; a miss goes to the provider and
  //         is persisted.
  // live:   always goes to the provider.
  Completion complete(const ChatRequest& request);

  GatewayMode mode() const { return options_.mode; }
  std::vector<RequestLogEntry> request_log() const;
  std::vector<UsageRecord> usage_records() const;
  std::size_t peak_in_flight() const;

 private:
  Completion call_provider(const ChatRequest& request, const std::string& digest);
  std::chrono::milliseconds backoff_for(std::uint32_t attempt);
  void log(RequestLogEntry entry);

  GatewayOptions options_;
  std::shared_ptr<ChatProvider> provider_;
  std::shared_ptr<Cassette> cassette_;

  mutable std::mutex mu_;
  std::condition_variable slot_free_;
  std::size_t in_flight_ = 0;
  std::size_t peak_in_flight_ = 0;
  Rng jitter_rng_;
  std::vector<RequestLogEntry> log_;
  std::vector<UsageRecord> usages_;
};

struct Price {
  double prompt_per_1k = 0.0;
  double completion_per_1k = 0.0;
};

// Keyed by model name; "*" applies to models without their own entry.
using PriceTable = std::map<std::string, Price>;

// Throws Error on an empty table or a model with no applicable price.
double cost_report(std::span<const UsageRecord> usages, const PriceTable& prices);

}  // namespace dataengine
