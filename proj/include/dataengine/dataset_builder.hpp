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
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dataengine/qa_validator.hpp"
#include "json.hpp"

namespace dataengine {

struct Provenance {
  std::uint32_t round = 0;
  std::string template_id;
  std::uint32_t prompt_version = 0;
  QuestionType qtype = QuestionType::kFunctionReasoning;
  std::string request_digest;
  std::size_t ordinal = 0;
  bool operator==(const Provenance&) const = default;
};

struct DatasetItem {
  std::string image_id;
  std::string question;
  std::vector<std::string> choices;
  char answer = 'A';
  std::optional<std::string> rationale;  // present iff QMAE
  Provenance provenance;
  bool operator==(const DatasetItem&) const = default;
};

nlohmann::json to_json(const DatasetItem& item);
DatasetItem dataset_item_from_json(const nlohmann::json& j);

struct DatasetManifest {
  QaFormat format = QaFormat::kQmae;
  std::size_t count = 0;
  std::map<QuestionType, std::size_t> per_type;
  std::set<std::pair<std::string, std::uint32_t>> prompt_versions;
  bool operator==(const DatasetManifest&) const = default;
};

nlohmann::json to_json(const DatasetManifest& m);

struct Dataset {
  QaFormat format = QaFormat::kQmae;
  std::vector<DatasetItem> items;
};

struct AcceptedQA {
  GeneratedQA qa;
  ValidationReport report;
};

// Throws when an input was not accepted. Boxes are stripped from every
// text field; items are ordered by (request digest, ordinal).
Dataset build(std::span<const AcceptedQA> accepted, QaFormat format);
DatasetManifest manifest_of(const Dataset& dataset);

// Line-delimited items; a trailing newline after every item.
std::string write_dataset(const Dataset& dataset);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
// Format follows the items; an empty input parses as `fallback`. Throws
// ParseError on mixed formats or a broken line.
Dataset parse_dataset(std::istream& in, QaFormat fallback = QaFormat::kQmae);
Dataset load_dataset(const std::filesystem::path& path, QaFormat fallback = QaFormat::kQmae);

// Concatenation followed by dedup on (image_id, question); the first
// occurrence wins. All inputs must share one format.
Dataset merge_datasets(std::span<const Dataset> datasets);
Dataset merge_rounds(std::span<const std::filesystem::path> paths);

// Nouns recognized when counting distinct answer nouns.
class NounLexicon {
 public:
  NounLexicon() = default;
  // One lowercase noun per line; '#' starts a comment line.
  static NounLexicon parse(std::istream& in);
  static NounLexicon load(const std::filesystem::path& path);
  static NounLexicon shipped();
  bool contains(const std::string& word) const;
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

struct DiversityReport {
  std::size_t instance_num = 0;
  std::size_t unique_q = 0;
  std::size_t unique_a = 0;
  double avg_len_q = 0.0;
  double avg_len_a = 0.0;
  std::size_t unique_nouns_a = 0;
  double mean_q_distance = 0.0;
  bool sampled_pairs = false;
  double unique_q_pct() const;
  double unique_a_pct() const;
};

inline constexpr std::size_t kExhaustivePairLimit = 1000;
inline constexpr std::size_t kSampledPairs = 200000;

// Lowercase word tokens: runs of letters, digits and apostrophes.
std::vector<std::string> word_tokens(std::string_view text);

// 1 - |A n B| / |A u B|; 0 when both sets are empty.
double jaccard_distance(const std::set<std::string>& a, const std::set<std::string>& b);

// An item's answer text: the correct choice followed by the rationale.
std::string answer_text(const DatasetItem& item);

DiversityReport diversity(std::span<const DatasetItem> items, const NounLexicon& lexicon,
                          std::uint64_t seed = 0);

nlohmann::json to_json(const DiversityReport& r);

// One table row: "N / U (p%) / U (p%) / q/a / nouns / dist".
std::string format_report_row(const DiversityReport& r);
DiversityReport parse_report_row(std::string_view row);

}  // namespace dataengine
