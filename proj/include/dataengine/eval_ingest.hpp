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

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dataengine/common.hpp"
#include "json.hpp"

namespace dataengine {

// One benchmark item together with the model's answer.
struct EvalRecord {
  std::string record_id;
  std::string image_id;
  std::string question;
  std::vector<std::string> choices;
  std::size_t ground_truth = 0;
  // nullopt when the model's answer could not be matched to any choice.
  std::optional<std::size_t> prediction;
  std::string dimension;
  std::string benchmark;
  std::uint32_t round = 0;

  bool correct() const { return prediction && *prediction == ground_truth; }
  bool operator==(const EvalRecord&) const = default;
};

enum class EvalFormat { kMmbenchLike, kAokvqaLike, kGeneric };

// Accepts "mmbench-like", "aokvqa-like", "generic". Throws on anything else.
EvalFormat parse_eval_format(std::string_view tag);
std::string_view to_string(EvalFormat format);

// Maps a free-text answer to a choice index. Accepts a bare letter ("B",
// "(B)", "B.", "B)") or text equal to one of the choices after trimming and
// case folding.
std::optional<std::size_t> match_prediction(std::string_view answer,
                                            std::span<const std::string> choices);

// Parses a line-delimited record file. Row order is preserved; rows whose
// prediction cannot be matched are kept with `prediction == nullopt`.
// Throws ParseError naming the row on schema violations.
std::vector<EvalRecord> ingest_results(std::istream& source, EvalFormat format,
                                       std::uint32_t round = 0);

// Validates the record invariants; throws Error describing the first breach.
void validate(const EvalRecord& record);

nlohmann::json to_json(const EvalRecord& record);
EvalRecord eval_record_from_json(const nlohmann::json& j);

// Exact per-dimension tally. The score is only materialized on output.
struct ScoreEntry {
  std::uint64_t correct = 0;
  std::uint64_t total = 0;

  double score() const { return static_cast<double>(correct) / static_cast<double>(total); }
  bool operator==(const ScoreEntry&) const = default;
};

struct AbilityScoreboard {
  std::uint32_t round = 0;
  std::map<std::string, ScoreEntry> entries;

  bool operator==(const AbilityScoreboard&) const = default;
};

// Throws Error on empty input.
AbilityScoreboard compute_scoreboard(std::span<const EvalRecord> records);

// Records answered wrongly (unparseable included), in input order.
std::vector<EvalRecord> extract_bad_cases(std::span<const EvalRecord> records);

nlohmann::json to_json(const AbilityScoreboard& board);
AbilityScoreboard scoreboard_from_json(const nlohmann::json& j);

}  // namespace dataengine
