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
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dataengine/badcase_pool.hpp"
#include "dataengine/coco_catalog.hpp"
#include "dataengine/question_type.hpp"
#include "json.hpp"

namespace dataengine {

enum class FailureType {
  kIncorrectBoundingBox,
  kIllusion,
  kIncorrect3dPerception,
  kWrongQuestionType,
  kIllogicalQuestion,
};

inline constexpr std::array<FailureType, 5> kAllFailureTypes = {
    FailureType::kIncorrectBoundingBox, FailureType::kIllusion,
    FailureType::kIncorrect3dPerception, FailureType::kWrongQuestionType,
    FailureType::kIllogicalQuestion};

std::string_view to_string(FailureType type);
FailureType parse_failure_type(std::string_view text);

enum class QaFormat { kQmae, kQma };

std::string_view to_string(QaFormat format);
QaFormat parse_qa_format(std::string_view text);

struct BboxMention {
  std::string surface_span;  // exactly as written, brackets included
  BBox bbox;
  std::string field;  // "question", "choice_A".."choice_D", "rationale"
  bool operator==(const BboxMention&) const = default;
};

// Where a generated item came from. Filled in by the caller of parse_output.
struct QaOrigin {
  std::string id_prefix;
  std::size_t seed_index = 0;
  std::string image_id;
  QuestionType qtype = QuestionType::kFunctionReasoning;
  std::uint32_t round = 0;
  std::string template_id;
  std::uint32_t prompt_version = 0;
  std::string request_digest;
  bool operator==(const QaOrigin&) const = default;
};

struct GeneratedQA {
  std::string qa_id;
  QaOrigin origin;
  std::size_t ordinal = 0;  // position of the block in the reply
  std::string question;
  std::vector<std::string> choices;
  char answer = 'A';
  std::string rationale;  // empty when absent
  std::vector<BboxMention> bbox_mentions;
  bool operator==(const GeneratedQA&) const = default;
};

// A detected block that could not be turned into a GeneratedQA.
struct ParseStub {
  std::string qa_id;
  QaOrigin origin;
  std::size_t ordinal = 0;
  std::string reason;  // "missing question", "choice count", "missing answer", "answer letter"
  std::string raw_block;
  bool operator==(const ParseStub&) const = default;
};

struct ParseOutcome {
  std::vector<GeneratedQA> items;
  std::vector<ParseStub> stubs;
  std::size_t blocks_detected = 0;
};

// Splits `text` into blocks at every "Question:" line and extracts the
// labelled fields. Never throws; unusable blocks become stubs.
ParseOutcome parse_output(std::string_view text, const QaOrigin& origin);

// Every bracketed four-number span in `text`.
std::vector<BboxMention> find_bbox_mentions(std::string_view text, const std::string& field);

bool contains_bbox_span(std::string_view text);

enum class CheckStatus { kPass, kFail, kSkip };

std::string_view to_string(CheckStatus status);
CheckStatus parse_check_status(std::string_view text);

struct CheckResult {
  CheckStatus status = CheckStatus::kSkip;
  std::string detail;
  bool operator==(const CheckResult&) const = default;
};

inline constexpr double kDefaultIouThreshold = 0.5;

// Each mentioned box must lie inside the image and overlap some annotated
// object with IoU >= iou_threshold.
CheckResult check_bbox(const GeneratedQA& qa, const ImageAnnotation& ann,
                       double iou_threshold = kDefaultIouThreshold);

struct RemovabilityResult {
  bool pass = false;
  std::string cleaned;
  std::string detail;
};

// Deletes every bbox span together with one adjacent space and checks that
// the remainder is still a sentence.
RemovabilityResult check_removability(std::string_view text);

// The cleaned text of check_removability, without the verdict.
std::string strip_bbox_spans(std::string_view text);

CheckResult check_removability(const GeneratedQA& qa);

CheckResult check_structure(const GeneratedQA& qa, QaFormat format);

// Skips when `classifier` is null.
CheckResult check_type_adherence(const GeneratedQA& qa, QuestionType expected,
                                 const LlmClassifier* classifier);

enum class RunMode { kIpoReview, kProduction };

enum class VerdictKind { kAccept, kAutoReject, kNeedsHuman };

std::string_view to_string(VerdictKind kind);

struct Verdict {
  VerdictKind kind = VerdictKind::kNeedsHuman;
  std::optional<FailureType> failure_type;  // set iff kAutoReject
  bool operator==(const Verdict&) const = default;
};

// Check names used in reports.
inline constexpr std::string_view kCheckParse = "parse";
inline constexpr std::string_view kCheckStructure = "structure";
inline constexpr std::string_view kCheckBbox = "bbox";
inline constexpr std::string_view kCheckRemovability = "removability";
inline constexpr std::string_view kCheckType = "type";

using CheckMap = std::map<std::string, CheckResult>;

// Failed checks are mapped in the order parse, structure, bbox,
// removability, type; the first failure decides the type.
Verdict triage(const CheckMap& checks, RunMode mode);

struct ValidationReport {
  std::string qa_id;
  CheckMap checks;
  Verdict verdict;
  bool operator==(const ValidationReport&) const = default;
};

struct ValidatorOptions {
  double iou_threshold = kDefaultIouThreshold;
  QaFormat format = QaFormat::kQmae;
  RunMode mode = RunMode::kProduction;
};

// `ann` may be null only when the item mentions no boxes.
ValidationReport validate_qa(const GeneratedQA& qa, const ImageAnnotation* ann,
                             const ValidatorOptions& options,
                             const LlmClassifier* classifier);

ValidationReport validate_stub(const ParseStub& stub);

nlohmann::json to_json(const QaOrigin& origin);
QaOrigin qa_origin_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GeneratedQA& qa);
GeneratedQA generated_qa_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ParseStub& stub);
ParseStub parse_stub_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ValidationReport& report);
ValidationReport validation_report_from_json(const nlohmann::json& j);

// The item as an evaluation-style record, for reclassification.
EvalRecord as_eval_record(const GeneratedQA& qa);

}  // namespace dataengine
