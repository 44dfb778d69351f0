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

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace dataengine {

// The closed set of question types bad cases are filed under.
enum class QuestionType : std::size_t {
  kFunctionReasoning,
  kIdentityReasoning,
  kKnowledgeBasedReasoning,
  kPhysicalPropertyReasoning,
  kAttributeRecognition,
  kActionRecognition,
  kPhysicalRelation,
  kNatureRelation,
  kSocialRelation,
  kSpatialRelationship,
  kAttributeComparison,
  kObjectLocalization,
  kImageTopic,
  kImageQuality,
  kImageEmotion,
  kImageStyle,
  kImageScene,
  kFuturePrediction,
};

inline constexpr std::size_t kQuestionTypeCount = 18;

inline constexpr std::array<QuestionType, kQuestionTypeCount> kAllQuestionTypes = [] {
  std::array<QuestionType, kQuestionTypeCount> out{};
  for (std::size_t i = 0; i < kQuestionTypeCount; ++i) out[i] = static_cast<QuestionType>(i);
  return out;
}();

// Canonical identifier, e.g. "object_localization". Used in files.
std::string_view canonical_name(QuestionType type);

// Human-readable form, e.g. "object localization". Used in prompts.
std::string_view display_name(QuestionType type);

// Short definition rendered into generation and classification prompts.
std::string_view default_definition(QuestionType type);

// Matches either form after trimming and case folding; '_', '-' and runs of
// whitespace are treated as equivalent separators.
std::optional<QuestionType> question_type_from_string(std::string_view text);

// Returns the single question type named anywhere in `text` (word-bounded,
// same normalization as above). nullopt when none or more than one appear.
std::optional<QuestionType> find_unique_question_type(std::string_view text);

inline std::size_t index_of(QuestionType type) { return static_cast<std::size_t>(type); }

}  // namespace dataengine
