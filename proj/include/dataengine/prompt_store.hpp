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
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dataengine/abs_sampler.hpp"
#include "dataengine/line_diff.hpp"
#include "dataengine/question_type.hpp"

namespace dataengine {

enum class PromptStatus { kDraft, kActive, kRetired };

std::string_view to_string(PromptStatus status);
PromptStatus parse_prompt_status(std::string_view text);

// Placeholder names a template body may use, written as {name}.
inline const std::set<std::string> kPromptPlaceholders = {
    "question_type_definition", "few_shot_examples", "bbox_insert_example", "image_annotation",
    "n_questions"};

// Template ids of the shipped assets.
inline constexpr std::string_view kGenerationTemplate = "generation";
inline constexpr std::string_view kClassificationTemplate = "classification";
inline constexpr std::string_view kConflictCheckTemplate = "conflict_check";
inline constexpr std::string_view kFailureCorrectionTemplate = "failure_correction";
inline constexpr std::string_view kBboxExampleTemplate = "bbox_insert_example";

inline constexpr std::size_t kDefaultQuestionsPerImage = 5;

class UnknownPlaceholderError : public Error {
 public:
  using Error::Error;
};

class UnresolvedPlaceholderError : public Error {
 public:
  using Error::Error;
};

// Names of every {identifier} occurrence in `body`. Braces around anything
// that is not an identifier are literal text.
std::set<std::string> extract_placeholders(std::string_view body);

// Throws UnknownPlaceholderError naming the first placeholder outside
// kPromptPlaceholders.
void validate_placeholders(std::string_view body);

// Substitutes every placeholder; throws UnresolvedPlaceholderError when
// one has no value.
std::string substitute_placeholders(std::string_view body,
                                    const std::map<std::string, std::string>& values);

struct PromptTemplate {
  std::string template_id;
  std::uint32_t version = 0;
  std::string body;
  PromptStatus status = PromptStatus::kDraft;
  std::optional<std::uint32_t> parent_version;
  std::string changelog;
  // Approved proposal this version was created from, if any.
  std::optional<std::string> proposal_id;

  bool operator==(const PromptTemplate&) const = default;
};

nlohmann::json to_json(const PromptTemplate& t);
PromptTemplate prompt_template_from_json(const nlohmann::json& j);

using TypeDefinitions = std::map<QuestionType, std::string>;

// The built-in one-line definition of every question type.
TypeDefinitions default_type_definitions();

struct RenderInputs {
  std::string annotation_text;
  TypeDefinitions type_defs;
  std::size_t n_questions = kDefaultQuestionsPerImage;
  std::string bbox_insert_example;
  // Review batches render draft versions.
  bool allow_draft = false;
};

struct RenderedPrompt {
  std::string template_id;
  std::uint32_t version = 0;
  std::size_t seed_index = 0;
  std::string final_text;
  std::string content_hash;
};

// In-context cases as question, lettered choices and the ground-truth
// answer. A duplicated pair is rendered once.
std::string render_few_shot(const InContextPair& pair);

RenderedPrompt render(const PromptTemplate& tmpl, const QuerySeed& seed,
                      const RenderInputs& inputs);

// Classification prompt with every type definition listed.
std::string render_classification_prompt(const PromptTemplate& tmpl,
                                         const TypeDefinitions& defs);

class PromptStoreError : public Error {
 public:
  using Error::Error;
};

// Versioned templates. When bound to a directory, each template id lives
// in `<dir>/<template_id>.jsonl`, one version per line, rewritten
// atomically after every mutation. Mutations are serialized internally.
class PromptStore {
 public:
  PromptStore() = default;
  static PromptStore open(const std::filesystem::path& dir);

  PromptStore(PromptStore&& other) noexcept;
  PromptStore& operator=(PromptStore&& other) noexcept;

  // Version is one past the highest existing version (1 for a new id).
  PromptTemplate register_version(const std::string& template_id, const std::string& body,
                                  std::optional<std::uint32_t> parent,
                                  const std::string& changelog,
                                  std::optional<std::string> proposal_id = std::nullopt);

  // The previously active version, if any, becomes retired.
  void activate(const std::string& template_id, std::uint32_t version);

  PromptTemplate get(const std::string& template_id, std::uint32_t version) const;
  std::optional<PromptTemplate> active(const std::string& template_id) const;
  std::vector<PromptTemplate> versions(const std::string& template_id) const;
  std::vector<std::string> template_ids() const;
  bool contains(const std::string& template_id) const;

  std::vector<DiffHunk> diff(const std::string& template_id, std::uint32_t from,
                             std::uint32_t to) const;

 private:
  void persist(const std::string& template_id) const;

  mutable std::mutex mu_;
  std::optional<std::filesystem::path> dir_;
  std::map<std::string, std::vector<PromptTemplate>> templates_;
};

}  // namespace dataengine
