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

#include "dataengine/prompt_store.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace dataengine {

using nlohmann::json;

std::string_view to_string(PromptStatus status) {
  switch (status) {
    case PromptStatus::kDraft: return "draft";
    case PromptStatus::kActive: return "active";
    case PromptStatus::kRetired: return "retired";
  }
  return "draft";
}

PromptStatus parse_prompt_status(std::string_view text) {
  if (text == "draft") return PromptStatus::kDraft;
  if (text == "active") return PromptStatus::kActive;
  if (text == "retired") return PromptStatus::kRetired;
  throw Error("unknown prompt status '" + std::string(text) + "'");
}

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Calls fn(begin, end, name) for every {identifier}; [begin, end) spans the braces.
template <typename Fn>
void scan_placeholders(std::string_view body, Fn&& fn) {
  std::size_t pos = 0;
  while ((pos = body.find('{', pos)) != std::string_view::npos) {
    std::size_t end = pos + 1;
    if (end < body.size() && ident_start(body[end])) {
      while (end < body.size() && ident_char(body[end])) ++end;
      if (end < body.size() && body[end] == '}') {
        fn(pos, end + 1, std::string(body.substr(pos + 1, end - pos - 1)));
        pos = end + 1;
        continue;
      }
    }
    ++pos;
  }
}

}  // namespace

std::set<std::string> extract_placeholders(std::string_view body) {
  std::set<std::string> out;
  scan_placeholders(body, [&](std::size_t, std::size_t, std::string name) {
    out.insert(std::move(name));
  });
  return out;
}

void validate_placeholders(std::string_view body) {
  for (const auto& name : extract_placeholders(body)) {
    if (!kPromptPlaceholders.count(name)) {
      throw UnknownPlaceholderError("unknown placeholder {" + name + "}");
    }
  }
}

std::string substitute_placeholders(std::string_view body,
                                    const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t copied = 0;
  scan_placeholders(body, [&](std::size_t begin, std::size_t end, const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) {
      throw UnresolvedPlaceholderError("no value for placeholder {" + name + "}");
    }
    out.append(body.substr(copied, begin - copied));
    out.append(it->second);
    copied = end;
  });
  out.append(body.substr(copied));
  return out;
}

json to_json(const PromptTemplate& t) {
  return {{"template_id", t.template_id},
          {"version", t.version},
          {"body", t.body},
          {"status", to_string(t.status)},
          {"parent_version", t.parent_version ? json(*t.parent_version) : json(nullptr)},
          {"changelog", t.changelog},
          {"proposal_id", t.proposal_id ? json(*t.proposal_id) : json(nullptr)}};
}

PromptTemplate prompt_template_from_json(const json& j) {
  PromptTemplate t;
  t.template_id = j.at("template_id").get<std::string>();
  t.version = j.at("version").get<std::uint32_t>();
  t.body = j.at("body").get<std::string>();
  t.status = parse_prompt_status(j.at("status").get<std::string>());
  if (!j.at("parent_version").is_null()) t.parent_version = j["parent_version"].get<std::uint32_t>();
  t.changelog = j.value("changelog", "");
  if (j.contains("proposal_id") && !j["proposal_id"].is_null()) {
    t.proposal_id = j["proposal_id"].get<std::string>();
  }
  return t;
}

TypeDefinitions default_type_definitions() {
  TypeDefinitions defs;
  for (QuestionType t : kAllQuestionTypes) defs[t] = std::string(default_definition(t));
  return defs;
}

namespace {

std::string capitalized(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

std::string type_definition_line(QuestionType type, const TypeDefinitions& defs) {
  auto it = defs.find(type);
  if (it == defs.end()) {
    throw PromptStoreError("no definition for question type " +
                           std::string(canonical_name(type)));
  }
  return capitalized(display_name(type)) + ": " + it->second;
}

void render_case(std::ostringstream& out, const EvalRecord& r) {
  out << "Question: " << r.question << "\nChoices:\n";
  for (std::size_t i = 0; i < r.choices.size(); ++i) {
    out << static_cast<char>('A' + i) << ". " << r.choices[i] << "\n";
  }
  out << "Answer: " << static_cast<char>('A' + r.ground_truth);
}

}  // namespace

std::string render_few_shot(const InContextPair& pair) {
  std::ostringstream out;
  render_case(out, pair.first.base);
  if (!pair.duplicated) {
    out << "\n\n";
    render_case(out, pair.second.base);
  }
  return out.str();
}

RenderedPrompt render(const PromptTemplate& tmpl, const QuerySeed& seed,
                      const RenderInputs& inputs) {
  if (tmpl.status != PromptStatus::kActive &&
      !(inputs.allow_draft && tmpl.status == PromptStatus::kDraft)) {
    throw PromptStoreError("template " + tmpl.template_id + " v" + std::to_string(tmpl.version) +
                           " is " + std::string(to_string(tmpl.status)) + ", not renderable");
  }
  std::map<std::string, std::string> values;
  const auto used = extract_placeholders(tmpl.body);
  if (used.count("question_type_definition")) {
    values["question_type_definition"] = type_definition_line(seed.qtype, inputs.type_defs);
  }
  values["few_shot_examples"] = render_few_shot(seed.in_context);
  values["image_annotation"] = inputs.annotation_text;
  values["n_questions"] = std::to_string(inputs.n_questions);
  if (!inputs.bbox_insert_example.empty()) {
    values["bbox_insert_example"] = inputs.bbox_insert_example;
  }

  RenderedPrompt out;
  out.template_id = tmpl.template_id;
  out.version = tmpl.version;
  out.seed_index = seed.index;
  out.final_text = substitute_placeholders(tmpl.body, values);
  out.content_hash = sha256_hex(out.final_text);
  return out;
}

std::string render_classification_prompt(const PromptTemplate& tmpl,
                                         const TypeDefinitions& defs) {
  std::string listing;
  for (QuestionType t : kAllQuestionTypes) {
    if (!listing.empty()) listing += '\n';
    listing += "- " + type_definition_line(t, defs);
  }
  return substitute_placeholders(tmpl.body, {{"question_type_definition", listing}});
}

PromptStore PromptStore::open(const std::filesystem::path& dir) {
  PromptStore store;
  store.dir_ = dir;
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream in(path);
    for_each_line(in, [&](const std::string& line, std::size_t number) {
      try {
        PromptTemplate t = prompt_template_from_json(json::parse(line));
        store.templates_[t.template_id].push_back(std::move(t));
      } catch (const std::exception& e) {
        throw ParseError(path.string() + ": " + e.what(), number);
      }
    });
  }
  return store;
}

PromptStore::PromptStore(PromptStore&& other) noexcept {
  std::lock_guard lock(other.mu_);
  dir_ = std::move(other.dir_);
  templates_ = std::move(other.templates_);
}

PromptStore& PromptStore::operator=(PromptStore&& other) noexcept {
  if (this != &other) {
    std::scoped_lock lock(mu_, other.mu_);
    dir_ = std::move(other.dir_);
    templates_ = std::move(other.templates_);
  }
  return *this;
}

void PromptStore::persist(const std::string& template_id) const {
  if (!dir_) return;
  std::string out;
  for (const auto& t : templates_.at(template_id)) {
    out += to_json(t).dump();
    out += '\n';
  }
  write_file_atomic(*dir_ / (template_id + ".jsonl"), out);
}

PromptTemplate PromptStore::register_version(const std::string& template_id,
                                             const std::string& body,
                                             std::optional<std::uint32_t> parent,
                                             const std::string& changelog,
                                             std::optional<std::string> proposal_id) {
  if (template_id.empty() ||
      !std::all_of(template_id.begin(), template_id.end(),
                   [](char c) { return ident_char(c) || c == '-'; })) {
    throw PromptStoreError("template id must be a non-empty identifier: '" + template_id + "'");
  }
  validate_placeholders(body);
  std::lock_guard lock(mu_);
  auto& versions = templates_[template_id];
  if (parent) {
    const bool found = std::any_of(versions.begin(), versions.end(),
                                   [&](const PromptTemplate& t) { return t.version == *parent; });
    if (!found) {
      if (versions.empty()) templates_.erase(template_id);
      throw PromptStoreError("template " + template_id + " has no version " +
                             std::to_string(*parent));
    }
  }
  PromptTemplate t;
  t.template_id = template_id;
  t.version = versions.empty() ? 1 : versions.back().version + 1;
  t.body = body;
  t.status = PromptStatus::kDraft;
  t.parent_version = parent;
  t.changelog = changelog;
  t.proposal_id = std::move(proposal_id);
  versions.push_back(t);
  persist(template_id);
  return t;
}

void PromptStore::activate(const std::string& template_id, std::uint32_t version) {
  std::lock_guard lock(mu_);
  auto it = templates_.find(template_id);
  if (it == templates_.end()) throw PromptStoreError("unknown template " + template_id);
  auto target = std::find_if(it->second.begin(), it->second.end(),
                             [&](const PromptTemplate& t) { return t.version == version; });
  if (target == it->second.end()) {
    throw PromptStoreError("template " + template_id + " has no version " +
                           std::to_string(version));
  }
  for (auto& t : it->second) {
    if (t.status == PromptStatus::kActive) t.status = PromptStatus::kRetired;
  }
  target->status = PromptStatus::kActive;
  persist(template_id);
}

PromptTemplate PromptStore::get(const std::string& template_id, std::uint32_t version) const {
  std::lock_guard lock(mu_);
  auto it = templates_.find(template_id);
  if (it != templates_.end()) {
    for (const auto& t : it->second) {
      if (t.version == version) return t;
    }
  }
  throw PromptStoreError("template " + template_id + " has no version " + std::to_string(version));
}

std::optional<PromptTemplate> PromptStore::active(const std::string& template_id) const {
  std::lock_guard lock(mu_);
  auto it = templates_.find(template_id);
  if (it == templates_.end()) return std::nullopt;
  for (const auto& t : it->second) {
    if (t.status == PromptStatus::kActive) return t;
  }
  return std::nullopt;
}

std::vector<PromptTemplate> PromptStore::versions(const std::string& template_id) const {
  std::lock_guard lock(mu_);
  auto it = templates_.find(template_id);
  if (it == templates_.end()) return {};
  return it->second;
}

std::vector<std::string> PromptStore::template_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : templates_) out.push_back(id);
  return out;
}

bool PromptStore::contains(const std::string& template_id) const {
  std::lock_guard lock(mu_);
  return templates_.count(template_id) != 0;
}

std::vector<DiffHunk> PromptStore::diff(const std::string& template_id, std::uint32_t from,
                                        std::uint32_t to) const {
  return line_diff(get(template_id, from).body, get(template_id, to).body);
}

}  // namespace dataengine
