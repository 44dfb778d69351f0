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

// Desk-scale stand-ins: a generated image world (catalog, embeddings and
// an evaluation file) and a deterministic chat provider that answers the
// engine's prompts without a real model. Used for demos, cassette
// recording and the closed-loop tests.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dataengine/coco_catalog.hpp"
#include "dataengine/embedding_index.hpp"
#include "dataengine/eval_ingest.hpp"
#include "dataengine/llm_gateway.hpp"

namespace dataengine {

struct SyntheticWorldOptions {
  std::size_t images = 400;
  // One score per question type, in enum order. Empty means an even
  // spread from 0.2 to 0.9.
  std::vector<double> initial_scores;
  std::size_t eval_items_per_dimension = 40;
  std::size_t embedding_dim = 32;
  std::uint64_t seed = 7;
};

struct SyntheticWorld {
  std::string captions_json;
  std::string instances_json;
  std::string embeddings_tsv;
  std::vector<EvalRecord> eval;
};

SyntheticWorld make_synthetic_world(const SyntheticWorldOptions& options);

// Writes captions.json, instances.json, embeddings.tsv and eval.jsonl
// (generic format) into `dir`.
void write_synthetic_world(const SyntheticWorld& world, const std::filesystem::path& dir);

struct SyntheticProviderOptions {
  // Share of generated questions carrying one deliberate defect.
  double defect_rate = 0.0;
  std::uint64_t seed = 11;
};

// Replies are a pure function of (request digest, options), so recording
// through this provider and replaying the cassette gives identical runs.
class SyntheticChatProvider : public ChatProvider {
 public:
  explicit SyntheticChatProvider(SyntheticProviderOptions options = {}) : options_(options) {}
  ProviderReply send(const ChatRequest& request) override;

 private:
  std::string generate(const std::string& prompt, Rng& rng) const;
  SyntheticProviderOptions options_;
};

// The rule line the synthetic provider adds when asked to correct a prompt.
inline constexpr std::string_view kSyntheticCorrectionRule =
    "7. Before writing a bounding box, check that it is copied exactly from the object list.";

// Added when the failures include questions of the wrong type.
inline constexpr std::string_view kSyntheticTypeRule =
    "Every question must test this question type:\n{question_type_definition}";
// The line the synthetic provider adds to resolve a conflict.
inline constexpr std::string_view kSyntheticConflictFix =
    "Every question must be answerable from the image description alone.";

}  // namespace dataengine
