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

// The 50-item validator corpus under fixtures/validator: generated blocks
// with the verdict each should get, plus the classifier replies recorded
// in cassette.jsonl.
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dataengine/coco_catalog.hpp"
#include "dataengine/common.hpp"
#include "dataengine/prompt_store.hpp"
#include "dataengine/qa_validator.hpp"
#include "dataengine/shipped_assets.hpp"
#include "json.hpp"

namespace testing {

struct CorpusItem {
  std::string id;
  std::string image_id;
  dataengine::QuestionType qtype;
  std::string text;
  std::string classifier_reply;  // empty for blocks that do not parse
  std::string expected;          // "accept" or a failure type
  std::string fault;
};

inline std::vector<CorpusItem> load_validator_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw dataengine::IoError("cannot open " + path.string());
  std::vector<CorpusItem> out;
  dataengine::for_each_line(in, [&](const std::string& line, std::size_t) {
    const auto j = nlohmann::json::parse(line);
    CorpusItem c;
    c.id = j.at("id");
    c.image_id = j.at("image_id");
    c.qtype = *dataengine::question_type_from_string(j.at("qtype").get<std::string>());
    c.text = j.at("text");
    if (!j.at("classifier_reply").is_null()) c.classifier_reply = j.at("classifier_reply");
    c.expected = j.at("expected");
    c.fault = j.at("fault");
    out.push_back(std::move(c));
  });
  return out;
}

inline dataengine::Catalog load_validator_catalog(const std::filesystem::path& dir) {
  std::ifstream captions(dir / "captions.json"), instances(dir / "instances.json");
  return dataengine::load_catalog(captions, instances);
}

inline dataengine::QaOrigin corpus_origin(const CorpusItem& item) {
  dataengine::QaOrigin o;
  o.id_prefix = item.id + "-";
  o.image_id = item.image_id;
  o.qtype = item.qtype;
  o.round = 1;
  o.template_id = "generation";
  o.prompt_version = 2;
  return o;
}

inline std::string corpus_classifier_prompt() {
  dataengine::PromptTemplate t;
  t.body = std::string(dataengine::assets::kClassificationPrompt);
  return dataengine::render_classification_prompt(t, dataengine::default_type_definitions());
}

inline constexpr const char* kCorpusModel = "gpt-4";

}  // namespace testing
