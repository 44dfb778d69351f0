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

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataengine/eval_ingest.hpp"
#include "dataengine/llm_gateway.hpp"
#include "dataengine/question_type.hpp"
#include "dataengine/rng.hpp"

namespace dataengine {

enum class ClassificationSource { kLlm, kLabelMap, kManual };

std::string_view to_string(ClassificationSource source);
ClassificationSource parse_classification_source(std::string_view text);

struct ClassifiedBadCase {
  EvalRecord base;
  QuestionType qtype = QuestionType::kFunctionReasoning;
  ClassificationSource source = ClassificationSource::kLabelMap;
  std::optional<std::string> classifier_note;

  bool operator==(const ClassifiedBadCase&) const = default;
};

nlohmann::json to_json(const ClassifiedBadCase& c);
ClassifiedBadCase classified_case_from_json(const nlohmann::json& j);

class UnmappedLabelError : public Error {
 public:
  explicit UnmappedLabelError(const std::string& label)
      : Error("dimension label '" + label + "' has no mapping; classify it with the LLM path"),
        label_(label) {}
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

class ClassificationError : public Error {
 public:
  using Error::Error;
};

// Benchmark dimension label -> question type.
//
// Text format, one mapping per line: `<label> <question_type>`, where the
// type is the last whitespace-separated token and the label is everything
// before it. Blank lines and lines starting with '#' are ignored.
class LabelMap {
 public:
  LabelMap() = default;

  static LabelMap parse(std::istream& in);
  static LabelMap load(const std::filesystem::path& path);
  // Every canonical and display name maps to itself.
  static LabelMap identity();
  // identity() plus the shipped defaults for benchmark-specific labels.
  static LabelMap defaults();

  void set(const std::string& label, QuestionType type);
  // Exact match first, then case-folded match.
  std::optional<QuestionType> find(const std::string& label) const;
  const std::map<std::string, QuestionType>& entries() const { return entries_; }

  // question type -> dimension labels that map onto it
  std::map<QuestionType, std::vector<std::string>> inverted() const;

 private:
  std::map<std::string, QuestionType> entries_;
};

ClassifiedBadCase classify_label_map(const EvalRecord& bad_case, const LabelMap& mapping);

// Classifies free text through the gateway. The system prompt is the fully
// rendered classification template; the item goes in the user message.
class LlmClassifier {
 public:
  LlmClassifier(Gateway& gateway, std::string system_prompt, std::string model);

  // Retries once with a corrective follow-up when the reply names no single
  // known type; throws ClassificationError if the retry fails too.
  QuestionType classify(const EvalRecord& item, std::string* raw_reply = nullptr) const;

  ChatRequest first_request(const EvalRecord& item) const;
  ChatRequest retry_request(const EvalRecord& item, const std::string& bad_reply) const;

 private:
  Gateway& gateway_;
  std::string system_prompt_;
  std::string model_;
};

// Parses a classifier reply: exact type name first, then a reply containing
// exactly one type name.
std::optional<QuestionType> parse_classification_reply(std::string_view reply);

ClassifiedBadCase classify_llm(const EvalRecord& bad_case, const LlmClassifier& classifier);

// Label map first, LLM fallback when the label is unmapped and a classifier
// is available.
ClassifiedBadCase classify(const EvalRecord& bad_case, const LabelMap& mapping,
                           const LlmClassifier* classifier);

using PoolStats = std::map<QuestionType, std::size_t>;

// Append-only reservoir of classified bad cases.
class BadCasePool {
 public:
  BadCasePool() = default;
  explicit BadCasePool(std::vector<ClassifiedBadCase> cases) : cases_(std::move(cases)) {}

  void add(ClassifiedBadCase c) { cases_.push_back(std::move(c)); }
  const std::vector<ClassifiedBadCase>& cases() const { return cases_; }
  std::size_t size() const { return cases_.size(); }
  bool empty() const { return cases_.empty(); }
  std::size_t count(QuestionType type) const;

  bool operator==(const BadCasePool&) const = default;

 private:
  std::vector<ClassifiedBadCase> cases_;
};

// One case per line. Load reports the first corrupt line via ParseError.
BadCasePool pool_load(const std::filesystem::path& path);
BadCasePool pool_parse(std::istream& in);
void pool_save(const BadCasePool& pool, const std::filesystem::path& path);
void pool_append(std::span<const ClassifiedBadCase> cases, const std::filesystem::path& path);

PoolStats pool_stats(const BadCasePool& pool);

class EmptyTypeError : public Error {
 public:
  explicit EmptyTypeError(QuestionType type)
      : Error("bad-case pool has no cases of type " + std::string(canonical_name(type))),
        type_(type) {}
  QuestionType type() const { return type_; }

 private:
  QuestionType type_;
};

struct InContextPair {
  ClassifiedBadCase first;
  ClassifiedBadCase second;
  // True when only one case of the type existed and it fills both slots.
  bool duplicated = false;
};

InContextPair sample_pairs(const BadCasePool& pool, QuestionType type, Rng& rng);

}  // namespace dataengine
