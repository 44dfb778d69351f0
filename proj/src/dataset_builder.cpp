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

#include "dataengine/dataset_builder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "dataengine/rng.hpp"
#include "dataengine/shipped_assets.hpp"

namespace dataengine {

using nlohmann::json;

json to_json(const DatasetItem& item) {
  json j = {{"image_id", item.image_id},
            {"question", item.question},
            {"choices", item.choices},
            {"answer", std::string(1, item.answer)}};
  if (item.rationale) j["rationale"] = *item.rationale;
  j["provenance"] = {{"round", item.provenance.round},
                     {"template_id", item.provenance.template_id},
                     {"prompt_version", item.provenance.prompt_version},
                     {"qtype", canonical_name(item.provenance.qtype)},
                     {"request_digest", item.provenance.request_digest},
                     {"ordinal", item.provenance.ordinal}};
  return j;
}

DatasetItem dataset_item_from_json(const json& j) {
  DatasetItem item;
  item.image_id = j.at("image_id").get<std::string>();
  item.question = j.at("question").get<std::string>();
  item.choices = j.at("choices").get<std::vector<std::string>>();
  const auto answer = j.at("answer").get<std::string>();
  if (answer.size() != 1 || answer[0] < 'A' || answer[0] > 'D') {
    throw Error("answer must be one letter A-D");
  }
  item.answer = answer[0];
  if (j.contains("rationale")) item.rationale = j["rationale"].get<std::string>();
  const auto& p = j.at("provenance");
  item.provenance.round = p.at("round").get<std::uint32_t>();
  item.provenance.template_id = p.at("template_id").get<std::string>();
  item.provenance.prompt_version = p.at("prompt_version").get<std::uint32_t>();
  const auto qtype = p.at("qtype").get<std::string>();
  auto t = question_type_from_string(qtype);
  if (!t) throw Error("unknown question type '" + qtype + "'");
  item.provenance.qtype = *t;
  item.provenance.request_digest = p.at("request_digest").get<std::string>();
  item.provenance.ordinal = p.at("ordinal").get<std::size_t>();
  return item;
}

json to_json(const DatasetManifest& m) {
  json per_type = json::object();
  for (const auto& [t, n] : m.per_type) per_type[std::string(canonical_name(t))] = n;
  json versions = json::array();
  for (const auto& [id, v] : m.prompt_versions) {
    versions.push_back({{"template_id", id}, {"version", v}});
  }
  return {{"format", to_string(m.format)},
          {"count", m.count},
          {"per_type", per_type},
          {"prompt_versions", versions}};
}

namespace {

void check_item(const DatasetItem& item, QaFormat format) {
  if (item.choices.size() != 4) throw Error("item must have exactly 4 choices");
  if (format == QaFormat::kQmae && (!item.rationale || trim(*item.rationale).empty())) {
    throw Error("QMAE item needs a rationale");
  }
  if (format == QaFormat::kQma && item.rationale) throw Error("QMA item carries a rationale");
  bool boxed = contains_bbox_span(item.question) ||
               (item.rationale && contains_bbox_span(*item.rationale));
  for (const auto& c : item.choices) boxed = boxed || contains_bbox_span(c);
  if (boxed) throw Error("item text still contains a bounding box");
}

}  // namespace

Dataset build(std::span<const AcceptedQA> accepted, QaFormat format) {
  Dataset out;
  out.format = format;
  for (const auto& a : accepted) {
    if (a.report.verdict.kind != VerdictKind::kAccept) {
      throw Error("item " + a.qa.qa_id + " was not accepted (" +
                  std::string(to_string(a.report.verdict.kind)) + ")");
    }
    DatasetItem item;
    item.image_id = a.qa.origin.image_id;
    item.question = strip_bbox_spans(a.qa.question);
    for (const auto& c : a.qa.choices) item.choices.push_back(strip_bbox_spans(c));
    item.answer = a.qa.answer;
    if (format == QaFormat::kQmae) item.rationale = strip_bbox_spans(a.qa.rationale);
    item.provenance = {a.qa.origin.round, a.qa.origin.template_id, a.qa.origin.prompt_version,
                       a.qa.origin.qtype, a.qa.origin.request_digest, a.qa.ordinal};
    check_item(item, format);
    out.items.push_back(std::move(item));
  }
  std::stable_sort(out.items.begin(), out.items.end(), [](const DatasetItem& x, const DatasetItem& y) {
    return std::tie(x.provenance.request_digest, x.provenance.ordinal, x.image_id) <
           std::tie(y.provenance.request_digest, y.provenance.ordinal, y.image_id);
  });
  return out;
}

DatasetManifest manifest_of(const Dataset& dataset) {
  DatasetManifest m;
  m.format = dataset.format;
  m.count = dataset.items.size();
  for (QuestionType t : kAllQuestionTypes) m.per_type[t] = 0;
  for (const auto& item : dataset.items) {
    ++m.per_type[item.provenance.qtype];
    m.prompt_versions.emplace(item.provenance.template_id, item.provenance.prompt_version);
  }
  return m;
}

std::string write_dataset(const Dataset& dataset) {
  std::string out;
  for (const auto& item : dataset.items) {
    out += to_json(item).dump();
    out += '\n';
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, write_dataset(dataset));
}

Dataset parse_dataset(std::istream& in, QaFormat fallback) {
  Dataset out;
  out.format = fallback;
  std::optional<QaFormat> seen;
  for_each_line(in, [&](const std::string& line, std::size_t number) {
    DatasetItem item;
    try {
      item = dataset_item_from_json(json::parse(line));
      const QaFormat f = item.rationale ? QaFormat::kQmae : QaFormat::kQma;
      if (seen && *seen != f) throw Error("items mix QMAE and QMA");
      seen = f;
      check_item(item, f);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(std::string("dataset: ") + e.what(), number);
    }
    out.items.push_back(std::move(item));
  });
  if (seen) out.format = *seen;
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, QaFormat fallback) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return parse_dataset(in, fallback);
}

Dataset merge_datasets(std::span<const Dataset> datasets) {
  Dataset out;
  if (datasets.empty()) return out;
  std::optional<QaFormat> format;
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& d : datasets) {
    if (d.items.empty()) continue;
    if (format && *format != d.format) throw Error("cannot merge QMAE and QMA datasets");
    format = d.format;
    for (const auto& item : d.items) {
      if (keys.emplace(item.image_id, item.question).second) out.items.push_back(item);
    }
  }
  out.format = format.value_or(datasets.front().format);
  return out;
}

Dataset merge_rounds(std::span<const std::filesystem::path> paths) {
  std::vector<Dataset> datasets;
  for (const auto& p : paths) datasets.push_back(load_dataset(p));
  return merge_datasets(datasets);
}

NounLexicon NounLexicon::parse(std::istream& in) {
  NounLexicon lex;
  for_each_line(in, [&](const std::string& line, std::size_t) {
    const auto word = to_lower(trim(line));
    if (word.empty() || word[0] == '#') return;
    lex.words_.insert(word);
  });
  return lex;
}

NounLexicon NounLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open noun lexicon " + path.string());
  return parse(in);
}

NounLexicon NounLexicon::shipped() {
  std::istringstream in{std::string(assets::kNounLexicon)};
  return parse(in);
}

bool NounLexicon::contains(const std::string& word) const { return words_.count(word) != 0; }

double DiversityReport::unique_q_pct() const {
  return instance_num ? 100.0 * static_cast<double>(unique_q) / static_cast<double>(instance_num) : 0.0;
}

double DiversityReport::unique_a_pct() const {
  return instance_num ? 100.0 * static_cast<double>(unique_a) / static_cast<double>(instance_num) : 0.0;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double jaccard_distance(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : a) inter += b.count(t);
  const std::size_t uni = a.size() + b.size() - inter;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

std::string answer_text(const DatasetItem& item) {
  std::string out = item.choices.at(static_cast<std::size_t>(item.answer - 'A'));
  if (item.rationale && !item.rationale->empty()) out += " " + *item.rationale;
  return out;
}

DiversityReport diversity(std::span<const DatasetItem> items, const NounLexicon& lexicon,
                          std::uint64_t seed) {
  if (items.empty()) throw Error("diversity needs a non-empty dataset");
  DiversityReport r;
  r.instance_num = items.size();
  std::set<std::string> qs, as, nouns;
  std::size_t q_tokens = 0, a_tokens = 0;
  std::vector<std::set<std::string>> q_sets;
  q_sets.reserve(items.size());
  for (const auto& item : items) {
    const std::string a = answer_text(item);
    qs.insert(to_lower(trim(item.question)));
    as.insert(to_lower(trim(a)));
    q_tokens += split_whitespace(item.question).size();
    a_tokens += split_whitespace(a).size();
    for (const auto& w : word_tokens(a)) {
      if (lexicon.contains(w)) {
        nouns.insert(w);
      } else if (w.size() > 3 && w.back() == 's' && lexicon.contains(w.substr(0, w.size() - 1))) {
        nouns.insert(w.substr(0, w.size() - 1));
      }
    }
    const auto toks = word_tokens(item.question);
    q_sets.emplace_back(toks.begin(), toks.end());
  }
  r.unique_q = qs.size();
  r.unique_a = as.size();
  r.unique_nouns_a = nouns.size();
  const double n = static_cast<double>(items.size());
  r.avg_len_q = static_cast<double>(q_tokens) / n;
  r.avg_len_a = static_cast<double>(a_tokens) / n;

  const std::size_t m = items.size();
  if (m < 2) {
    r.mean_q_distance = 0.0;
  } else if (m <= kExhaustivePairLimit) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) {
        sum += jaccard_distance(q_sets[i], q_sets[j]);
        ++pairs;
      }
    }
    r.mean_q_distance = sum / static_cast<double>(pairs);
  } else {
    r.sampled_pairs = true;
    Rng rng(derive_seed(seed, "diversity-pairs"));
    double sum = 0.0;
    for (std::size_t k = 0; k < kSampledPairs; ++k) {
      const auto i = rng.below(m);
      auto j = rng.below(m - 1);
      if (j >= i) ++j;
      sum += jaccard_distance(q_sets[i], q_sets[j]);
    }
    r.mean_q_distance = sum / static_cast<double>(kSampledPairs);
  }
  return r;
}

json to_json(const DiversityReport& r) {
  return {{"instance_num", r.instance_num},
          {"unique_q", r.unique_q},
          {"unique_q_pct", r.unique_q_pct()},
          {"unique_a", r.unique_a},
          {"unique_a_pct", r.unique_a_pct()},
          {"avg_len_q", r.avg_len_q},
          {"avg_len_a", r.avg_len_a},
          {"unique_nouns_a", r.unique_nouns_a},
          {"mean_q_distance", r.mean_q_distance},
          {"sampled_pairs", r.sampled_pairs}};
}

namespace {

std::string pct(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", p);
  std::string s = buf;
  if (s == "100.0") s = "100";
  return s + "%";
}

}  // namespace

std::string format_report_row(const DiversityReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu / %zu (%s) / %zu (%s) / %.2f/%.2f / %zu / %.3f",
                r.instance_num, r.unique_q, pct(r.unique_q_pct()).c_str(), r.unique_a,
                pct(r.unique_a_pct()).c_str(), r.avg_len_q, r.avg_len_a, r.unique_nouns_a,
                r.mean_q_distance);
  return buf;
}

DiversityReport parse_report_row(std::string_view row) {
  DiversityReport r;
  char qp[32], ap[32];
  const std::string s(row);
  const int got = std::sscanf(s.c_str(), "%zu / %zu (%31[^)]) / %zu (%31[^)]) / %lf/%lf / %zu / %lf",
                              &r.instance_num, &r.unique_q, qp, &r.unique_a, ap, &r.avg_len_q,
                              &r.avg_len_a, &r.unique_nouns_a, &r.mean_q_distance);
  if (got != 9) throw ParseError("malformed diversity row: " + s);
  if (r.unique_q > r.instance_num || r.unique_a > r.instance_num) {
    throw ParseError("unique count exceeds instance count: " + s);
  }
  return r;
}

}  // namespace dataengine
