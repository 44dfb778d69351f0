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
#include <string>

#include "dataengine/llm_gateway.hpp"

namespace dataengine {

struct HttpProviderOptions {
  // Full URL of a chat-completions endpoint, e.g.
  // https://api.openai.com/v1/chat/completions
  std::string endpoint;
  std::string token;
  std::chrono::seconds timeout{120};
};

// Reads DATAENGINE_LLM_ENDPOINT and DATAENGINE_LLM_TOKEN.
HttpProviderOptions http_provider_options_from_env();

// Chat-completion provider speaking the common JSON wire format
// (`messages` in, `choices[0].message.content` + `usage` out).
class HttpChatProvider : public ChatProvider {
 public:
  explicit HttpChatProvider(HttpProviderOptions options);
  ProviderReply send(const ChatRequest& request) override;

 private:
  HttpProviderOptions options_;
  std::string origin_;
  std::string path_;
};

// Parses a provider response body. Exposed for tests.
ProviderReply parse_chat_response(const std::string& body);

}  // namespace dataengine
