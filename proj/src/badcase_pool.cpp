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

#include "dataengine/badcase_pool.hpp"

#include <fstream>
#include <sstream>

#include "dataengine/shipped_assets.hpp"

namespace dataengine {

using nlohmann::json;

std::string_view to_string(ClassificationSource source) {
  switch (source) {
    case ClassificationSource::kLlm: return "llm";
    case ClassificationSource::kLabelMap: return "label-map";
    case ClassificationSource::kManual: return "manual";
  }
  return "manual";
}

ClassificationSource parse_classification_source(std::string_view text) {
  if (text == "llm") return ClassificationSource::kLlm;
  if (text == "label-map") return ClassificationSource::kLabelMap;
  if (text == "manual") return ClassificationSource::kManual;
  throw Error("unknown classification source '" + std::string(text) + "'");
}

json to_json(const ClassifiedBadCase& c) {
  json j = {{"record", to_json(c.base)},
            {"qtype", canonical_name(c.qtype)},
            {"source", to_string(c.source)}};
  if (c.classifier_note) j["note"] = *c.classifier_note;
  return j;
}

ClassifiedBadCase classified_case_from_json(const json& j) {
  ClassifiedBadCase c;
  c.base = eval_record_from_json(j.at("record"));
  const auto name = j.at("qtype").get<std::string>();
  auto type = question_type_from_string(name);
  if (!type) throw Error("unknown question type '" + name + "'");
  c.qtype = *type;
  c.source = parse_classification_source(j.at("source").get<std::string>());
  if (j.contains("note")) c.classifier_note = j["note"].get<std::string>();
  return c;
}

LabelMap LabelMap::parse(std::istream& in) {
  LabelMap map;
  for_each_line(in, [&](const std::string& raw, std::size_t number) {
    const std::string line = trim(raw);
    if (line.front() == '#') return;
    const auto split = line.find_last_of(" \t");
    if (split == std::string::npos) throw ParseError("expected '<label> <type>'", number);
    const std::string label = trim(line.substr(0, split));
    const std::string type_name = line.substr(split + 1);
    auto type = question_type_from_string(type_name);
    if (!type) throw ParseError("unknown question type '" + type_name + "'", number);
    map.set(label, *type);
  });
  return map;
}

LabelMap LabelMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label map " + path.string());
  return parse(in);
}

LabelMap LabelMap::identity() {
  LabelMap map;
  for (QuestionType t : kAllQuestionTypes) {
    map.set(std::string(canonical_name(t)), t);
    map.set(std::string(display_name(t)), t);
  }
  return map;
}

LabelMap LabelMap::defaults() {
  LabelMap map = identity();
  std::istringstream in{std::string(assets::kDefaultLabelMap)};
  const LabelMap shipped = parse(in);
  for (const auto& [label, type] : shipped.entries()) map.set(label, type);
  return map;
}

void LabelMap::set(const std::string& label, QuestionType type) { entries_[label] = type; }

std::optional<QuestionType> LabelMap::find(const std::string& label) const {
  if (auto it = entries_.find(label); it != entries_.end()) return it->second;
  const std::string folded = to_lower(trim(label));
  for (const auto& [k, v] : entries_) {
    if (to_lower(k) == folded) return v;
  }
  return std::nullopt;
}

std::map<QuestionType, std::vector<std::string>> LabelMap::inverted() const {
  std::map<QuestionType, std::vector<std::string>> out;
  for (const auto& [label, type] : entries_) out[type].push_back(label);
  return out;
}

ClassifiedBadCase classify_label_map(const EvalRecord& bad_case, const LabelMap& mapping) {
  auto type = mapping.find(bad_case.dimension);
  if (!type) throw UnmappedLabelError(bad_case.dimension);
  return {bad_case, *type, ClassificationSource::kLabelMap, std::nullopt};
}

namespace {

std::string describe_item(const EvalRecord& item) {
  std::ostringstream out;
  out << "Question: " << item.question << "\n";
  if (!item.choices.empty()) {
    out << "Choices:\n";
    for (std::size_t i = 0; i < item.choices.size(); ++i) {
      out << static_cast<char>('A' + i) << ". " << item.choices[i] << "\n";
    }
  }
  out << "Question type:";
  return out.str();
}

constexpr std::string_view kRetryInstruction =
    "That reply does not name one of the listed question types. Reply with exactly one "
    "question type name from the list and nothing else.";

}  // namespace

std::optional<QuestionType> parse_classification_reply(std::string_view reply) {
  if (auto exact = question_type_from_string(reply)) return exact;
  return find_unique_question_type(reply);
}

LlmClassifier::LlmClassifier(Gateway& gateway, std::string system_prompt, std::string model)
    : gateway_(gateway), system_prompt_(std::move(system_prompt)), model_(std::move(model)) {}

ChatRequest LlmClassifier::first_request(const EvalRecord& item) const {
  ChatRequest req;
  req.model = model_;
  req.temperature = kClassificationTemperature;
  req.max_tokens = 32;
  req.messages = {{Role::kSystem, system_prompt_}, {Role::kUser, describe_item(item)}};
  return req;
}

ChatRequest LlmClassifier::retry_request(const EvalRecord& item,
                                         const std::string& bad_reply) const {
  ChatRequest req = first_request(item);
  req.messages.push_back({Role::kAssistant, bad_reply});
  req.messages.push_back({Role::kUser, std::string(kRetryInstruction)});
  return req;
}

QuestionType LlmClassifier::classify(const EvalRecord& item, std::string* raw_reply) const {
  const std::string first = gateway_.complete(first_request(item)).text;
  if (raw_reply) *raw_reply = first;
  if (auto type = parse_classification_reply(first)) return *type;

  const std::string second = gateway_.complete(retry_request(item, first)).text;
  if (raw_reply) *raw_reply = second;
  if (auto type = parse_classification_reply(second)) return *type;
  throw ClassificationError("classifier replies name no known question type: '" +
                            trim(first).substr(0, 80) + "', '" + trim(second).substr(0, 80) +
                            "'");
}

ClassifiedBadCase classify_llm(const EvalRecord& bad_case, const LlmClassifier& classifier) {
  std::string reply;
  QuestionType type = classifier.classify(bad_case, &reply);
  return {bad_case, type, ClassificationSource::kLlm, trim(reply)};
}

ClassifiedBadCase classify(const EvalRecord& bad_case, const LabelMap& mapping,
                           const LlmClassifier* classifier) {
  try {
    return classify_label_map(bad_case, mapping);
  } catch (const UnmappedLabelError&) {
    if (classifier == nullptr) throw;
    return classify_llm(bad_case, *classifier);
  }
}

std::size_t BadCasePool::count(QuestionType type) const {
  std::size_t n = 0;
  for (const auto& c : cases_) n += c.qtype == type ? 1 : 0;
  return n;
}

BadCasePool pool_parse(std::istream& in) {
  std::vector<ClassifiedBadCase> cases;
  for_each_line(in, [&](const std::string& line, std::size_t number) {
    try {
      cases.push_back(classified_case_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(std::string("corrupt pool entry: ") + e.what(), number);
    } catch (const Error& e) {
      throw ParseError(std::string("corrupt pool entry: ") + e.what(), number);
    }
  });
  return BadCasePool(std::move(cases));
}

BadCasePool pool_load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pool " + path.string());
  return pool_parse(in);
}

void pool_save(const BadCasePool& pool, const std::filesystem::path& path) {
  std::string out;
  for (const auto& c : pool.cases()) {
    out += to_json(c).dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

void pool_append(std::span<const ClassifiedBadCase> cases, const std::filesystem::path& path) {
  for (const auto& c : cases) append_line(path, to_json(c).dump());
}

PoolStats pool_stats(const BadCasePool& pool) {
  PoolStats stats;
  for (QuestionType t : kAllQuestionTypes) stats[t] = 0;
  for (const auto& c : pool.cases()) ++stats[c.qtype];
  return stats;
}

InContextPair sample_pairs(const BadCasePool& pool, QuestionType type, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pool.cases().size(); ++i) {
    if (pool.cases()[i].qtype == type) candidates.push_back(i);
  }
  if (candidates.empty()) throw EmptyTypeError(type);
  const auto& cases = pool.cases();
  if (candidates.size() == 1) {
    return {cases[candidates[0]], cases[candidates[0]], true};
  }
  const std::size_t n = candidates.size();
  const std::size_t i = rng.below(n);
  std::size_t j = rng.below(n - 1);
  if (j >= i) ++j;
  return {cases[candidates[i]], cases[candidates[j]], false};
}

}  // namespace dataengine
