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

#include "dataengine/question_type.hpp"

#include <cctype>

namespace dataengine {

namespace {

struct TypeInfo {
  std::string_view canonical;
  std::string_view display;
  std::string_view definition;
};

constexpr std::array<TypeInfo, kQuestionTypeCount> kTypes = {{
    {"function_reasoning", "function reasoning",
     "Infer the purpose or function of an object shown in the image."},
    {"identity_reasoning", "identity reasoning",
     "Infer the identity, role or profession of a person or object from visual cues."},
    {"knowledge_based_reasoning", "knowledge-based reasoning",
     "Answer by combining what is visible with commonsense or world knowledge."},
    {"physical_property_reasoning", "physical property reasoning",
     "Reason about physical properties of objects such as material, weight or state."},
    {"attribute_recognition", "attribute recognition",
     "Recognize attributes of an object such as color, shape, texture or count."},
    {"action_recognition", "action recognition",
     "Recognize the action or activity a person or animal is performing."},
    {"physical_relation", "physical relation",
     "Identify physical interactions between objects such as contact or support."},
    {"nature_relation", "nature relation",
     "Identify relations found in nature such as predation, symbiosis or growth."},
    {"social_relation", "social relation",
     "Infer the social relationship between people in the image."},
    {"spatial_relationship", "spatial relationship",
     "Determine the relative position of objects in the image."},
    {"attribute_comparison", "attribute comparison",
     "Compare attributes such as size, color or quantity between objects."},
    {"object_localization", "object localization",
     "Locate an object or determine where it appears in the image."},
    {"image_topic", "image topic", "Determine the overall subject or topic of the image."},
    {"image_quality", "image quality",
     "Judge objective image quality such as blur, brightness or noise."},
    {"image_emotion", "image emotion", "Determine the mood or emotion conveyed by the image."},
    {"image_style", "image style",
     "Identify the artistic or photographic style of the image."},
    {"image_scene", "image scene", "Identify the scene or environment depicted in the image."},
    {"future_prediction", "future prediction",
     "Predict what is likely to happen next given the current scene."},
}};

// Lowercase, map '_' '-' and whitespace runs to a single space, trim.
std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (c == '_' || c == '-' || std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool contains_word_bounded(const std::string& haystack, const std::string& needle) {
  std::size_t pos = haystack.find(needle);
  while (pos != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
    pos = haystack.find(needle, pos + 1);
  }
  return false;
}

}  // namespace

std::string_view canonical_name(QuestionType type) { return kTypes[index_of(type)].canonical; }

std::string_view display_name(QuestionType type) { return kTypes[index_of(type)].display; }

std::string_view default_definition(QuestionType type) {
  return kTypes[index_of(type)].definition;
}

std::optional<QuestionType> question_type_from_string(std::string_view text) {
  const std::string key = normalize(text);
  for (std::size_t i = 0; i < kQuestionTypeCount; ++i) {
    if (normalize(kTypes[i].display) == key) return static_cast<QuestionType>(i);
  }
  return std::nullopt;
}

std::optional<QuestionType> find_unique_question_type(std::string_view text) {
  const std::string hay = normalize(text);
  std::optional<QuestionType> found;
  for (std::size_t i = 0; i < kQuestionTypeCount; ++i) {
    if (contains_word_bounded(hay, normalize(kTypes[i].display))) {
      if (found) return std::nullopt;
      found = static_cast<QuestionType>(i);
    }
  }
  return found;
}

}  // namespace dataengine
