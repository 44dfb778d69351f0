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

#include "dataengine/qa_validator.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <regex>
#include <set>

#include "dataengine/line_diff.hpp"

namespace dataengine {

using nlohmann::json;

std::string_view to_string(FailureType type) {
  switch (type) {
    case FailureType::kIncorrectBoundingBox: return "incorrect_bounding_box";
    case FailureType::kIllusion: return "illusion";
    case FailureType::kIncorrect3dPerception: return "incorrect_3d_perception";
    case FailureType::kWrongQuestionType: return "wrong_question_type";
    case FailureType::kIllogicalQuestion: return "illogical_question";
  }
  return "illogical_question";
}

FailureType parse_failure_type(std::string_view text) {
  for (FailureType t : kAllFailureTypes) {
    if (to_string(t) == text) return t;
  }
  throw Error("unknown failure type '" + std::string(text) + "'");
}

std::string_view to_string(QaFormat format) { return format == QaFormat::kQmae ? "qmae" : "qma"; }

QaFormat parse_qa_format(std::string_view text) {
  const auto lower = to_lower(text);
  if (lower == "qmae") return QaFormat::kQmae;
  if (lower == "qma") return QaFormat::kQma;
  throw Error("unknown dataset format '" + std::string(text) + "'");
}

std::string_view to_string(CheckStatus status) {
  switch (status) {
    case CheckStatus::kPass: return "pass";
    case CheckStatus::kFail: return "fail";
    case CheckStatus::kSkip: return "skip";
  }
  return "skip";
}

CheckStatus parse_check_status(std::string_view text) {
  if (text == "pass") return CheckStatus::kPass;
  if (text == "fail") return CheckStatus::kFail;
  if (text == "skip") return CheckStatus::kSkip;
  throw Error("unknown check status '" + std::string(text) + "'");
}

std::string_view to_string(VerdictKind kind) {
  switch (kind) {
    case VerdictKind::kAccept: return "accept";
    case VerdictKind::kAutoReject: return "auto_reject";
    case VerdictKind::kNeedsHuman: return "needs_human";
  }
  return "needs_human";
}

namespace {

VerdictKind parse_verdict_kind(std::string_view text) {
  if (text == "accept") return VerdictKind::kAccept;
  if (text == "auto_reject") return VerdictKind::kAutoReject;
  if (text == "needs_human") return VerdictKind::kNeedsHuman;
  throw Error("unknown verdict '" + std::string(text) + "'");
}

const std::regex& bbox_pattern() {
  static const std::regex re(
      R"(\[\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\])");
  return re;
}

// Label at the start of a line, markdown emphasis and list numbering
// already removed. Returns the remainder after the colon.
std::optional<std::string> after_label(const std::string& line, std::string_view label) {
  std::size_t i = 0;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  if (line.size() - i < label.size()) return std::nullopt;
  for (std::size_t k = 0; k < label.size(); ++k) {
    if (std::tolower(static_cast<unsigned char>(line[i + k])) != label[k]) return std::nullopt;
  }
  i += label.size();
  while (i < line.size() && (std::isdigit(static_cast<unsigned char>(line[i])) || line[i] == ' ')) {
    ++i;
  }
  if (i >= line.size() || line[i] != ':') return std::nullopt;
  return trim(std::string_view(line).substr(i + 1));
}

std::string normalize_line(std::string line) {
  std::string out;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '*' && i + 1 < line.size() && line[i + 1] == '*') {
      ++i;
      continue;
    }
    out += line[i];
  }
  // "1. Question: ..." or "1) Question: ..."
  std::size_t i = 0;
  while (i < out.size() && out[i] == ' ') ++i;
  std::size_t d = i;
  while (d < out.size() && std::isdigit(static_cast<unsigned char>(out[d]))) ++d;
  if (d > i && d < out.size() && (out[d] == '.' || out[d] == ')')) {
    const auto rest = trim(std::string_view(out).substr(d + 1));
    if (after_label(rest, "question")) return rest;
  }
  return out;
}

// "A. text", "(A) text", "A) text", "A: text"
std::optional<std::pair<char, std::string>> choice_line(const std::string& line) {
  const auto t = trim(line);
  std::size_t i = 0;
  const bool paren = !t.empty() && t[0] == '(';
  if (paren) ++i;
  if (i >= t.size()) return std::nullopt;
  const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(t[i])));
  if (letter < 'A' || letter > 'F') return std::nullopt;
  ++i;
  if (i >= t.size()) return std::nullopt;
  if (paren) {
    if (t[i] != ')') return std::nullopt;
  } else if (t[i] != '.' && t[i] != ')' && t[i] != ':') {
    return std::nullopt;
  }
  ++i;
  if (i < t.size() && t[i] != ' ') return std::nullopt;
  return std::make_pair(letter, trim(std::string_view(t).substr(i)));
}

// Splits "A. x B. y C. z D. w" written on one line.
std::vector<std::string> inline_choices(const std::string& text) {
  static const std::regex marker(R"((?:^|\s)\(?([A-F])[.)]\s)");
  std::vector<std::pair<std::size_t, std::size_t>> marks;  // marker start, text start
  for (auto it = std::sregex_iterator(text.begin(), text.end(), marker);
       it != std::sregex_iterator(); ++it) {
    marks.emplace_back(static_cast<std::size_t>(it->position(0)),
                       static_cast<std::size_t>(it->position(0) + it->length(0)));
  }
  std::vector<std::string> out;
  for (std::size_t k = 0; k < marks.size(); ++k) {
    const std::size_t end = k + 1 < marks.size() ? marks[k + 1].first : text.size();
    out.push_back(trim(std::string_view(text).substr(marks[k].second, end - marks[k].second)));
  }
  return out;
}

std::optional<char> answer_letter(const std::string& text, const std::vector<std::string>& choices,
                                  bool* unrecognized) {
  *unrecognized = false;
  if (text.empty()) return std::nullopt;
  std::size_t i = text[0] == '(' ? 1 : 0;
  if (i < text.size()) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
    const bool bounded = i + 1 >= text.size() || !std::isalnum(static_cast<unsigned char>(text[i + 1]));
    if (c >= 'A' && c <= 'Z' && bounded) {
      if (c <= 'D') return c;
      *unrecognized = true;
      return std::nullopt;
    }
  }
  const auto folded = to_lower(trim(text));
  for (std::size_t k = 0; k < choices.size() && k < 4; ++k) {
    if (to_lower(trim(choices[k])) == folded) return static_cast<char>('A' + k);
  }
  *unrecognized = true;
  return std::nullopt;
}

enum class Field { kQuestion, kChoices, kAnswer, kRationale };

void parse_block(const std::vector<std::string>& lines, std::size_t ordinal,
                 const QaOrigin& origin, ParseOutcome& out) {
  std::string question;
  std::vector<std::string> choices;
  std::optional<std::string> answer_text;
  std::string rationale;
  Field field = Field::kQuestion;
  std::string raw;

  auto append = [](std::string& dst, const std::string& text) {
    if (text.empty()) return;
    if (!dst.empty()) dst += ' ';
    dst += text;
  };

  for (std::size_t k = 0; k < lines.size(); ++k) {
    raw += lines[k];
    raw += '\n';
    const std::string line = normalize_line(lines[k]);
    if (k == 0) {
      question = *after_label(line, "question");
      continue;
    }
    if (auto rest = after_label(line, "choices")) {
      field = Field::kChoices;
      for (auto& c : inline_choices(*rest)) choices.push_back(std::move(c));
      continue;
    }
    if (auto rest = after_label(line, "answer")) {
      field = Field::kAnswer;
      answer_text = *rest;
      continue;
    }
    if (auto rest = after_label(line, "rationale")) {
      field = Field::kRationale;
      append(rationale, *rest);
      continue;
    }
    if (auto rest = after_label(line, "explanation")) {
      field = Field::kRationale;
      append(rationale, *rest);
      continue;
    }
    if (field == Field::kQuestion || field == Field::kChoices) {
      if (auto c = choice_line(line)) {
        field = Field::kChoices;
        choices.push_back(c->second);
        continue;
      }
    }
    const auto t = trim(line);
    switch (field) {
      case Field::kQuestion: append(question, t); break;
      case Field::kRationale: append(rationale, t); break;
      case Field::kAnswer:
        if (answer_text && answer_text->empty()) *answer_text = t;
        break;
      case Field::kChoices: break;
    }
  }

  const std::string qa_id = origin.id_prefix + std::to_string(origin.seed_index) + "-" +
                            std::to_string(ordinal);
  auto stub = [&](std::string reason) {
    out.stubs.push_back({qa_id, origin, ordinal, std::move(reason), raw});
  };
  if (trim(question).empty()) return stub("missing question");
  if (choices.size() != 4) return stub("choice count");
  if (!answer_text) return stub("missing answer");
  bool unrecognized = false;
  const auto letter = answer_letter(*answer_text, choices, &unrecognized);
  if (!letter) return stub(unrecognized ? "answer letter" : "missing answer");

  GeneratedQA qa;
  qa.qa_id = qa_id;
  qa.origin = origin;
  qa.ordinal = ordinal;
  qa.question = trim(question);
  qa.choices = std::move(choices);
  qa.answer = *letter;
  qa.rationale = trim(rationale);
  for (auto& m : find_bbox_mentions(qa.question, "question")) qa.bbox_mentions.push_back(m);
  for (std::size_t c = 0; c < qa.choices.size(); ++c) {
    for (auto& m : find_bbox_mentions(qa.choices[c], std::string("choice_") + char('A' + c))) {
      qa.bbox_mentions.push_back(m);
    }
  }
  for (auto& m : find_bbox_mentions(qa.rationale, "rationale")) qa.bbox_mentions.push_back(m);
  out.items.push_back(std::move(qa));
}

}  // namespace

ParseOutcome parse_output(std::string_view text, const QaOrigin& origin) {
  ParseOutcome out;
  std::vector<std::vector<std::string>> blocks;
  for (const auto& raw_line : split_lines(text)) {
    std::string line = raw_line;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (after_label(normalize_line(line), "question")) {
      blocks.emplace_back();
    }
    if (!blocks.empty()) blocks.back().push_back(std::move(line));
  }
  out.blocks_detected = blocks.size();
  for (std::size_t i = 0; i < blocks.size(); ++i) parse_block(blocks[i], i, origin, out);
  return out;
}

std::vector<BboxMention> find_bbox_mentions(std::string_view text, const std::string& field) {
  std::vector<BboxMention> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), bbox_pattern());
       it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    BboxMention mention;
    mention.surface_span = m.str(0);
    mention.bbox = {std::stod(m.str(1)), std::stod(m.str(2)), std::stod(m.str(3)),
                    std::stod(m.str(4))};
    mention.field = field;
    out.push_back(std::move(mention));
  }
  return out;
}

bool contains_bbox_span(std::string_view text) {
  const std::string s(text);
  return std::regex_search(s, bbox_pattern());
}

namespace {

std::size_t count_doubled_spaces(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i] == ' ' && s[i + 1] == ' ') ++n;
  }
  return n;
}

std::size_t count_empty_parens(const std::string& s) {
  static const std::regex re(R"(\(\s*\))");
  return static_cast<std::size_t>(
      std::distance(std::sregex_iterator(s.begin(), s.end(), re), std::sregex_iterator()));
}

}  // namespace

CheckResult check_bbox(const GeneratedQA& qa, const ImageAnnotation& ann, double iou_threshold) {
  for (const auto& m : qa.bbox_mentions) {
    if (!contained_in(m.bbox, static_cast<double>(ann.width), static_cast<double>(ann.height))) {
      return {CheckStatus::kFail, m.surface_span + " in " + m.field + " lies outside the " +
                                      std::to_string(ann.width) + "x" +
                                      std::to_string(ann.height) + " image"};
    }
    double best = 0.0;
    for (const auto& obj : ann.objects) best = std::max(best, iou(m.bbox, obj.bbox));
    if (best < iou_threshold) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f", best);
      return {CheckStatus::kFail, m.surface_span + " in " + m.field +
                                      " matches no annotated object (best IoU " + buf + ")"};
    }
  }
  return {CheckStatus::kPass, qa.bbox_mentions.empty()
                                  ? "no boxes mentioned"
                                  : std::to_string(qa.bbox_mentions.size()) + " boxes matched"};
}

RemovabilityResult check_removability(std::string_view text) {
  RemovabilityResult r;
  const std::string s(text);
  std::string cleaned;
  std::size_t copied = 0;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), bbox_pattern());
       it != std::sregex_iterator(); ++it) {
    const auto begin = static_cast<std::size_t>(it->position(0));
    cleaned.append(s, copied, begin - copied);
    copied = begin + static_cast<std::size_t>(it->length(0));
    if (!cleaned.empty() && cleaned.back() == ' ') {
      cleaned.pop_back();
    } else if (copied < s.size() && s[copied] == ' ') {
      ++copied;
    }
  }
  cleaned.append(s, copied);
  r.cleaned = cleaned;

  if (std::none_of(cleaned.begin(), cleaned.end(),
                   [](char c) { return std::isalnum(static_cast<unsigned char>(c)); })) {
    r.detail = "nothing left after removing the boxes";
    return r;
  }
  if (count_doubled_spaces(cleaned) > count_doubled_spaces(s)) {
    r.detail = "removing a box leaves a doubled space";
    return r;
  }
  if (count_empty_parens(cleaned) > count_empty_parens(s)) {
    r.detail = "removing a box leaves empty parentheses";
    return r;
  }
  r.pass = true;
  return r;
}

std::string strip_bbox_spans(std::string_view text) { return check_removability(text).cleaned; }

CheckResult check_removability(const GeneratedQA& qa) {
  auto one = [](std::string_view text, const std::string& field) -> std::optional<CheckResult> {
    if (!contains_bbox_span(text)) return std::nullopt;
    auto r = check_removability(text);
    if (r.pass) return std::nullopt;
    return CheckResult{CheckStatus::kFail, field + ": " + r.detail};
  };
  if (auto f = one(qa.question, "question")) return *f;
  for (std::size_t c = 0; c < qa.choices.size(); ++c) {
    if (auto f = one(qa.choices[c], std::string("choice_") + char('A' + c))) return *f;
  }
  if (auto f = one(qa.rationale, "rationale")) return *f;
  return {CheckStatus::kPass, ""};
}

CheckResult check_structure(const GeneratedQA& qa, QaFormat format) {
  if (trim(qa.question).empty()) return {CheckStatus::kFail, "empty question"};
  if (qa.choices.size() != 4) {
    return {CheckStatus::kFail, std::to_string(qa.choices.size()) + " choices, expected 4"};
  }
  std::set<std::string> seen;
  for (std::size_t c = 0; c < qa.choices.size(); ++c) {
    const auto key = to_lower(trim(qa.choices[c]));
    if (key.empty()) return {CheckStatus::kFail, std::string("choice ") + char('A' + c) + " is empty"};
    if (!seen.insert(key).second) {
      return {CheckStatus::kFail, std::string("choice ") + char('A' + c) + " repeats another choice"};
    }
  }
  if (qa.answer < 'A' || qa.answer > 'D') {
    return {CheckStatus::kFail, std::string("answer letter ") + qa.answer + " is not A-D"};
  }
  if (format == QaFormat::kQmae && trim(qa.rationale).empty()) {
    return {CheckStatus::kFail, "rationale missing"};
  }
  return {CheckStatus::kPass, ""};
}

EvalRecord as_eval_record(const GeneratedQA& qa) {
  EvalRecord r;
  r.record_id = qa.qa_id;
  r.image_id = qa.origin.image_id;
  r.question = strip_bbox_spans(qa.question);
  for (const auto& c : qa.choices) r.choices.push_back(strip_bbox_spans(c));
  r.ground_truth = static_cast<std::size_t>(qa.answer - 'A');
  r.dimension = std::string(canonical_name(qa.origin.qtype));
  r.benchmark = "generated";
  r.round = qa.origin.round;
  return r;
}

CheckResult check_type_adherence(const GeneratedQA& qa, QuestionType expected,
                                 const LlmClassifier* classifier) {
  if (!classifier) return {CheckStatus::kSkip, "no classifier configured"};
  QuestionType got;
  try {
    got = classifier->classify(as_eval_record(qa));
  } catch (const ClassificationError& e) {
    return {CheckStatus::kFail, std::string("classifier named no type: ") + e.what()};
  }
  if (got != expected) {
    return {CheckStatus::kFail, "classified as " + std::string(canonical_name(got)) +
                                    ", expected " + std::string(canonical_name(expected))};
  }
  return {CheckStatus::kPass, std::string(canonical_name(got))};
}

Verdict triage(const CheckMap& checks, RunMode mode) {
  static const std::pair<std::string_view, FailureType> kOrder[] = {
      {kCheckParse, FailureType::kIllogicalQuestion},
      {kCheckStructure, FailureType::kIllogicalQuestion},
      {kCheckBbox, FailureType::kIncorrectBoundingBox},
      {kCheckRemovability, FailureType::kIncorrectBoundingBox},
      {kCheckType, FailureType::kWrongQuestionType},
  };
  for (const auto& [name, type] : kOrder) {
    auto it = checks.find(std::string(name));
    if (it != checks.end() && it->second.status == CheckStatus::kFail) {
      return {VerdictKind::kAutoReject, type};
    }
  }
  for (const auto& [name, result] : checks) {
    if (result.status == CheckStatus::kFail) return {VerdictKind::kAutoReject, FailureType::kIllogicalQuestion};
  }
  return {mode == RunMode::kIpoReview ? VerdictKind::kNeedsHuman : VerdictKind::kAccept,
          std::nullopt};
}

ValidationReport validate_qa(const GeneratedQA& qa, const ImageAnnotation* ann,
                             const ValidatorOptions& options,
                             const LlmClassifier* classifier) {
  ValidationReport report;
  report.qa_id = qa.qa_id;
  report.checks[std::string(kCheckStructure)] = check_structure(qa, options.format);
  if (qa.bbox_mentions.empty()) {
    report.checks[std::string(kCheckBbox)] = {CheckStatus::kPass, "no boxes mentioned"};
  } else if (!ann) {
    throw Error("item " + qa.qa_id + " mentions boxes but image " + qa.origin.image_id +
                " has no annotation");
  } else {
    report.checks[std::string(kCheckBbox)] = check_bbox(qa, *ann, options.iou_threshold);
  }
  report.checks[std::string(kCheckRemovability)] = check_removability(qa);
  report.checks[std::string(kCheckType)] = check_type_adherence(qa, qa.origin.qtype, classifier);
  report.verdict = triage(report.checks, options.mode);
  return report;
}

ValidationReport validate_stub(const ParseStub& stub) {
  ValidationReport report;
  report.qa_id = stub.qa_id;
  report.checks[std::string(kCheckParse)] = {CheckStatus::kFail, stub.reason};
  report.verdict = triage(report.checks, RunMode::kProduction);
  return report;
}

json to_json(const QaOrigin& o) {
  return {{"id_prefix", o.id_prefix},
          {"seed_index", o.seed_index},
          {"image_id", o.image_id},
          {"qtype", canonical_name(o.qtype)},
          {"round", o.round},
          {"template_id", o.template_id},
          {"prompt_version", o.prompt_version},
          {"request_digest", o.request_digest}};
}

QaOrigin qa_origin_from_json(const json& j) {
  QaOrigin o;
  o.id_prefix = j.at("id_prefix").get<std::string>();
  o.seed_index = j.at("seed_index").get<std::size_t>();
  o.image_id = j.at("image_id").get<std::string>();
  const auto name = j.at("qtype").get<std::string>();
  auto t = question_type_from_string(name);
  if (!t) throw Error("unknown question type '" + name + "'");
  o.qtype = *t;
  o.round = j.at("round").get<std::uint32_t>();
  o.template_id = j.at("template_id").get<std::string>();
  o.prompt_version = j.at("prompt_version").get<std::uint32_t>();
  o.request_digest = j.at("request_digest").get<std::string>();
  return o;
}

json to_json(const GeneratedQA& qa) {
  json mentions = json::array();
  for (const auto& m : qa.bbox_mentions) {
    mentions.push_back({{"surface_span", m.surface_span},
                        {"bbox", {m.bbox.x, m.bbox.y, m.bbox.w, m.bbox.h}},
                        {"field", m.field}});
  }
  return {{"qa_id", qa.qa_id},
          {"origin", to_json(qa.origin)},
          {"ordinal", qa.ordinal},
          {"question", qa.question},
          {"choices", qa.choices},
          {"answer", std::string(1, qa.answer)},
          {"rationale", qa.rationale},
          {"bbox_mentions", mentions}};
}

GeneratedQA generated_qa_from_json(const json& j) {
  GeneratedQA qa;
  qa.qa_id = j.at("qa_id").get<std::string>();
  qa.origin = qa_origin_from_json(j.at("origin"));
  qa.ordinal = j.at("ordinal").get<std::size_t>();
  qa.question = j.at("question").get<std::string>();
  qa.choices = j.at("choices").get<std::vector<std::string>>();
  const auto answer = j.at("answer").get<std::string>();
  if (answer.size() != 1) throw Error("answer must be a single letter");
  qa.answer = answer[0];
  qa.rationale = j.value("rationale", "");
  for (const auto& m : j.at("bbox_mentions")) {
    const auto& b = m.at("bbox");
    qa.bbox_mentions.push_back({m.at("surface_span").get<std::string>(),
                                {b.at(0).get<double>(), b.at(1).get<double>(),
                                 b.at(2).get<double>(), b.at(3).get<double>()},
                                m.at("field").get<std::string>()});
  }
  return qa;
}

json to_json(const ParseStub& s) {
  return {{"qa_id", s.qa_id},
          {"origin", to_json(s.origin)},
          {"ordinal", s.ordinal},
          {"reason", s.reason},
          {"raw_block", s.raw_block}};
}

ParseStub parse_stub_from_json(const json& j) {
  return {j.at("qa_id").get<std::string>(), qa_origin_from_json(j.at("origin")),
          j.at("ordinal").get<std::size_t>(), j.at("reason").get<std::string>(),
          j.at("raw_block").get<std::string>()};
}

json to_json(const ValidationReport& r) {
  json checks = json::object();
  for (const auto& [name, c] : r.checks) {
    checks[name] = {{"status", to_string(c.status)}, {"detail", c.detail}};
  }
  json verdict = {{"kind", to_string(r.verdict.kind)}};
  if (r.verdict.failure_type) verdict["failure_type"] = to_string(*r.verdict.failure_type);
  return {{"qa_id", r.qa_id}, {"checks", checks}, {"verdict", verdict}};
}

ValidationReport validation_report_from_json(const json& j) {
  ValidationReport r;
  r.qa_id = j.at("qa_id").get<std::string>();
  for (const auto& [name, c] : j.at("checks").items()) {
    r.checks[name] = {parse_check_status(c.at("status").get<std::string>()),
                      c.at("detail").get<std::string>()};
  }
  const auto& v = j.at("verdict");
  r.verdict.kind = parse_verdict_kind(v.at("kind").get<std::string>());
  if (v.contains("failure_type")) {
    r.verdict.failure_type = parse_failure_type(v["failure_type"].get<std::string>());
  }
  return r;
}

}  // namespace dataengine
