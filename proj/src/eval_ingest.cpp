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

#include "dataengine/eval_ingest.hpp"

#include <set>

#include "dataengine/common.hpp"

namespace dataengine {

using nlohmann::json;

namespace {

constexpr std::string_view kLetters = "ABCDEF";

std::string required_string(const json& row, const char* key) {
  auto it = row.find(key);
  if (it == row.end()) throw Error(std::string("missing key '") + key + "'");
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw Error(std::string("key '") + key + "' must be a string");
}

std::string optional_string(const json& row, const char* key, std::string fallback) {
  auto it = row.find(key);
  if (it == row.end() || it->is_null()) return fallback;
  return required_string(row, key);
}

std::size_t required_index(const json& row, const char* key) {
  auto it = row.find(key);
  if (it == row.end()) throw Error(std::string("missing key '") + key + "'");
  if (!it->is_number_integer() || it->get<long long>() < 0) {
    throw Error(std::string("key '") + key + "' must be a non-negative integer");
  }
  return it->get<std::size_t>();
}

std::vector<std::string> required_choices(const json& row, const char* key) {
  auto it = row.find(key);
  if (it == row.end() || !it->is_array()) {
    throw Error(std::string("key '") + key + "' must be an array of strings");
  }
  std::vector<std::string> out;
  for (const auto& c : *it) {
    if (!c.is_string()) throw Error(std::string("key '") + key + "' must hold strings");
    out.push_back(c.get<std::string>());
  }
  return out;
}

std::optional<std::size_t> prediction_field(const json& row,
                                            std::span<const std::string> choices) {
  auto it = row.find("prediction");
  if (it == row.end()) throw Error("missing key 'prediction'");
  if (it->is_null()) return std::nullopt;
  if (it->is_number_integer()) {
    long long v = it->get<long long>();
    if (v < 0 || static_cast<std::size_t>(v) >= choices.size()) return std::nullopt;
    return static_cast<std::size_t>(v);
  }
  if (it->is_string()) return match_prediction(it->get<std::string>(), choices);
  throw Error("key 'prediction' must be a string, integer or null");
}

EvalRecord parse_generic(const json& row) {
  EvalRecord r;
  r.record_id = required_string(row, "id");
  r.image_id = required_string(row, "image_id");
  r.question = required_string(row, "question");
  r.choices = required_choices(row, "choices");
  r.ground_truth = required_index(row, "answer_index");
  r.prediction = prediction_field(row, r.choices);
  r.dimension = required_string(row, "dimension");
  r.benchmark = required_string(row, "benchmark");
  return r;
}

// MMBench exports carry one column per option letter and a letter answer.
EvalRecord parse_mmbench(const json& row) {
  EvalRecord r;
  r.record_id = required_string(row, "index");
  r.image_id = optional_string(row, "image_id", r.record_id);
  r.question = required_string(row, "question");
  for (char letter : kLetters) {
    const std::string key(1, letter);
    auto it = row.find(key);
    if (it == row.end() || it->is_null()) break;
    if (!it->is_string()) throw Error("option '" + key + "' must be a string");
    r.choices.push_back(it->get<std::string>());
  }
  const std::string answer = trim(required_string(row, "answer"));
  const auto pos = answer.size() == 1 ? kLetters.find(answer[0]) : std::string_view::npos;
  if (pos == std::string_view::npos) throw Error("answer must be a single option letter");
  r.ground_truth = pos;
  r.prediction = prediction_field(row, r.choices);
  r.dimension = required_string(row, "category");
  r.benchmark = optional_string(row, "benchmark", "mmbench");
  return r;
}

EvalRecord parse_aokvqa(const json& row) {
  EvalRecord r;
  r.record_id = required_string(row, "question_id");
  r.image_id = required_string(row, "image_id");
  r.question = required_string(row, "question");
  r.choices = required_choices(row, "choices");
  r.ground_truth = required_index(row, "correct_choice_idx");
  r.prediction = prediction_field(row, r.choices);
  r.dimension = optional_string(row, "dimension", "aokvqa");
  r.benchmark = optional_string(row, "benchmark", "aokvqa");
  return r;
}

}  // namespace

EvalFormat parse_eval_format(std::string_view tag) {
  if (tag == "mmbench-like") return EvalFormat::kMmbenchLike;
  if (tag == "aokvqa-like") return EvalFormat::kAokvqaLike;
  if (tag == "generic") return EvalFormat::kGeneric;
  throw Error("unknown evaluation format '" + std::string(tag) + "'");
}

std::string_view to_string(EvalFormat format) {
  switch (format) {
    case EvalFormat::kMmbenchLike: return "mmbench-like";
    case EvalFormat::kAokvqaLike: return "aokvqa-like";
    case EvalFormat::kGeneric: return "generic";
  }
  return "generic";
}

std::optional<std::size_t> match_prediction(std::string_view answer,
                                            std::span<const std::string> choices) {
  std::string a = trim(answer);
  if (a.empty()) return std::nullopt;

  std::string letter = a;
  if (letter.size() == 3 && letter.front() == '(' && letter.back() == ')') {
    letter = letter.substr(1, 1);
  } else if (letter.size() == 2 && (letter[1] == '.' || letter[1] == ')' || letter[1] == ':')) {
    letter = letter.substr(0, 1);
  }
  if (letter.size() == 1) {
    const auto pos = kLetters.find(letter[0]);
    if (pos != std::string_view::npos && pos < choices.size()) return pos;
  }

  const std::string folded = to_lower(a);
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (to_lower(trim(choices[i])) == folded) return i;
  }
  return std::nullopt;
}

void validate(const EvalRecord& r) {
  if (r.choices.size() < 2 || r.choices.size() > 6) {
    throw Error("expected 2-6 choices, got " + std::to_string(r.choices.size()));
  }
  std::set<std::string> seen;
  for (const auto& c : r.choices) {
    if (c.empty()) throw Error("empty choice text");
    if (!seen.insert(c).second) throw Error("duplicate choice '" + c + "'");
  }
  if (r.ground_truth >= r.choices.size()) throw Error("ground truth index out of range");
  if (r.prediction && *r.prediction >= r.choices.size()) {
    throw Error("prediction index out of range");
  }
  if (r.dimension.empty()) throw Error("empty dimension label");
}

std::vector<EvalRecord> ingest_results(std::istream& source, EvalFormat format,
                                       std::uint32_t round) {
  std::vector<EvalRecord> out;
  for_each_line(source, [&](const std::string& line, std::size_t number) {
    try {
      json row = json::parse(line);
      if (!row.is_object()) throw Error("row is not an object");
      EvalRecord r;
      switch (format) {
        case EvalFormat::kGeneric: r = parse_generic(row); break;
        case EvalFormat::kMmbenchLike: r = parse_mmbench(row); break;
        case EvalFormat::kAokvqaLike: r = parse_aokvqa(row); break;
      }
      r.round = row.contains("round") && row["round"].is_number_unsigned()
                    ? row["round"].get<std::uint32_t>()
                    : round;
      validate(r);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), number);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), number);
    }
  });
  return out;
}

json to_json(const EvalRecord& r) {
  json j = {{"id", r.record_id},         {"image_id", r.image_id},
            {"question", r.question},    {"choices", r.choices},
            {"answer_index", r.ground_truth},
            {"dimension", r.dimension},  {"benchmark", r.benchmark},
            {"round", r.round}};
  j["prediction"] = r.prediction ? json(*r.prediction) : json(nullptr);
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  EvalRecord r = parse_generic(j);
  r.round = j.value("round", 0u);
  validate(r);
  return r;
}

AbilityScoreboard compute_scoreboard(std::span<const EvalRecord> records) {
  if (records.empty()) throw Error("cannot compute a scoreboard from zero records");
  AbilityScoreboard board;
  board.round = records.front().round;
  for (const auto& r : records) {
    auto& e = board.entries[r.dimension];
    ++e.total;
    if (r.correct()) ++e.correct;
  }
  return board;
}

std::vector<EvalRecord> extract_bad_cases(std::span<const EvalRecord> records) {
  std::vector<EvalRecord> out;
  for (const auto& r : records) {
    if (!r.correct()) out.push_back(r);
  }
  return out;
}

json to_json(const AbilityScoreboard& board) {
  json entries = json::object();
  for (const auto& [dim, e] : board.entries) {
    entries[dim] = {{"correct", e.correct}, {"total", e.total}, {"score", e.score()}};
  }
  return {{"round", board.round}, {"entries", entries}};
}

AbilityScoreboard scoreboard_from_json(const json& j) {
  AbilityScoreboard board;
  board.round = j.at("round").get<std::uint32_t>();
  for (const auto& [dim, e] : j.at("entries").items()) {
    ScoreEntry entry{e.at("correct").get<std::uint64_t>(), e.at("total").get<std::uint64_t>()};
    if (entry.total == 0 || entry.correct > entry.total) {
      throw ParseError("invalid scoreboard entry for '" + dim + "'");
    }
    board.entries.emplace(dim, entry);
  }
  return board;
}

}  // namespace dataengine
