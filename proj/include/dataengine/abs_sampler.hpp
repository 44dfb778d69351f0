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

// Adaptive bad-case sampling: picks the question type for each generation
// query with probability inversely related to the model's score on it,
// draws two in-context bad cases of that type, and picks the query image
// either uniformly or by embedding similarity to the first in-context image.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dataengine/badcase_pool.hpp"
#include "dataengine/coco_catalog.hpp"
#include "dataengine/embedding_index.hpp"
#include "dataengine/eval_ingest.hpp"
#include "dataengine/question_type.hpp"
#include "dataengine/rng.hpp"

namespace dataengine {

enum class WeightRule {
  kInverse,     // 1 / max(s, floor)
  kComplement,  // max(1 - s, floor)
  kUniform,     // baseline for comparisons
};

WeightRule parse_weight_rule(std::string_view text);
std::string_view to_string(WeightRule rule);

inline constexpr double kDefaultScoreFloor = 0.05;

struct TypeDistribution {
  std::map<QuestionType, double> weights;  // sums to 1, every entry > 0
  double floor = kDefaultScoreFloor;
};

// Pooled score per question type: dimensions mapping to the same type have
// their correct/total counts summed. Unmapped dimensions are skipped.
std::map<QuestionType, ScoreEntry> type_scores(const AbilityScoreboard& scoreboard,
                                               const LabelMap& type_map);

// Types in `universe` with no score get the largest raw weight of the
// scored types before normalization.
TypeDistribution type_weights(const AbilityScoreboard& scoreboard, const LabelMap& type_map,
                              double floor = kDefaultScoreFloor,
                              WeightRule rule = WeightRule::kInverse,
                              std::span<const QuestionType> universe = kAllQuestionTypes);

QuestionType draw_type(const TypeDistribution& dist, Rng& rng);

enum class ImageMode { kRandom, kSimilar };

std::string_view to_string(ImageMode mode);

struct SeedTrace {
  std::uint64_t stream_seed = 0;
  std::uint64_t draws_before = 0;
  std::uint64_t draws_after = 0;
  std::uint32_t type_redraws = 0;
  bool type_fallback = false;
};

struct QuerySeed {
  std::size_t index = 0;
  QuestionType qtype = QuestionType::kFunctionReasoning;
  InContextPair in_context;
  std::string image_id;
  ImageMode image_mode = ImageMode::kRandom;
  // Similar mode was scheduled but the anchor had no usable neighbour.
  bool anchor_fallback = false;
  SeedTrace trace;
};

nlohmann::json to_json(const QuerySeed& seed);
QuerySeed query_seed_from_json(const nlohmann::json& j);

struct SamplerOptions {
  double floor = kDefaultScoreFloor;
  WeightRule rule = WeightRule::kInverse;
  std::uint32_t max_redraws = 5;
};

class CatalogExhaustedError : public Error {
 public:
  using Error::Error;
};

// Seeds alternate random/similar starting with random, so ceil(n/2) are
// random and floor(n/2) similar. No image repeats within a batch.
std::vector<QuerySeed> build_query_seeds(const AbilityScoreboard& scoreboard,
                                         const BadCasePool& pool, const Catalog& catalog,
                                         const EmbeddingIndex& index, const LabelMap& type_map,
                                         std::size_t n, const SamplerOptions& options, Rng& rng);

}  // namespace dataengine
