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

#include "dataengine/abs_sampler.hpp"

#include <algorithm>
#include <set>

namespace dataengine {

using nlohmann::json;

WeightRule parse_weight_rule(std::string_view text) {
  if (text == "inverse") return WeightRule::kInverse;
  if (text == "complement") return WeightRule::kComplement;
  if (text == "uniform") return WeightRule::kUniform;
  throw Error("unknown weight rule '" + std::string(text) + "'");
}

std::string_view to_string(WeightRule rule) {
  switch (rule) {
    case WeightRule::kInverse: return "inverse";
    case WeightRule::kComplement: return "complement";
    case WeightRule::kUniform: return "uniform";
  }
  return "inverse";
}

std::string_view to_string(ImageMode mode) {
  return mode == ImageMode::kRandom ? "random" : "similar";
}

std::map<QuestionType, ScoreEntry> type_scores(const AbilityScoreboard& scoreboard,
                                               const LabelMap& type_map) {
  std::map<QuestionType, ScoreEntry> out;
  for (const auto& [dim, entry] : scoreboard.entries) {
    auto type = type_map.find(dim);
    if (!type) continue;
    auto& e = out[*type];
    e.correct += entry.correct;
    e.total += entry.total;
  }
  return out;
}

TypeDistribution type_weights(const AbilityScoreboard& scoreboard, const LabelMap& type_map,
                              double floor, WeightRule rule,
                              std::span<const QuestionType> universe) {
  if (!(floor > 0.0 && floor <= 1.0)) throw Error("score floor must lie in (0, 1]");
  if (scoreboard.entries.empty()) throw Error("scoreboard is empty");
  if (universe.empty()) throw Error("question type universe is empty");

  const auto scores = type_scores(scoreboard, type_map);
  std::map<QuestionType, double> raw;
  double max_raw = 0.0;
  for (QuestionType t : universe) {
    auto it = scores.find(t);
    if (it == scores.end()) continue;
    const double s = it->second.score();
    double w = 1.0;
    switch (rule) {
      case WeightRule::kInverse: w = 1.0 / std::max(s, floor); break;
      case WeightRule::kComplement: w = std::max(1.0 - s, floor); break;
      case WeightRule::kUniform: w = 1.0; break;
    }
    raw[t] = w;
    max_raw = std::max(max_raw, w);
  }
  if (raw.empty()) throw Error("scoreboard covers none of the requested question types");
  for (QuestionType t : universe) raw.emplace(t, max_raw);

  double sum = 0.0;
  for (const auto& [t, w] : raw) sum += w;
  TypeDistribution dist;
  dist.floor = floor;
  for (const auto& [t, w] : raw) dist.weights[t] = w / sum;
  return dist;
}

QuestionType draw_type(const TypeDistribution& dist, Rng& rng) {
  if (dist.weights.empty()) throw Error("cannot draw from an empty distribution");
  const double u = rng.uniform01();
  double cumulative = 0.0;
  for (const auto& [t, w] : dist.weights) {
    cumulative += w;
    if (u < cumulative) return t;
  }
  // Rounding left u above the final cumulative sum.
  return std::prev(dist.weights.end())->first;
}

json to_json(const QuerySeed& s) {
  return {{"index", s.index},
          {"qtype", canonical_name(s.qtype)},
          {"in_context",
           {to_json(s.in_context.first), to_json(s.in_context.second)}},
          {"in_context_duplicated", s.in_context.duplicated},
          {"image_id", s.image_id},
          {"image_mode", to_string(s.image_mode)},
          {"anchor_fallback", s.anchor_fallback},
          {"trace",
           {{"stream_seed", s.trace.stream_seed},
            {"draws_before", s.trace.draws_before},
            {"draws_after", s.trace.draws_after},
            {"type_redraws", s.trace.type_redraws},
            {"type_fallback", s.trace.type_fallback}}}};
}

QuerySeed query_seed_from_json(const json& j) {
  QuerySeed s;
  s.index = j.at("index").get<std::size_t>();
  const auto name = j.at("qtype").get<std::string>();
  auto t = question_type_from_string(name);
  if (!t) throw Error("unknown question type '" + name + "'");
  s.qtype = *t;
  s.in_context.first = classified_case_from_json(j.at("in_context").at(0));
  s.in_context.second = classified_case_from_json(j.at("in_context").at(1));
  s.in_context.duplicated = j.at("in_context_duplicated").get<bool>();
  s.image_id = j.at("image_id").get<std::string>();
  s.image_mode = j.at("image_mode").get<std::string>() == "similar" ? ImageMode::kSimilar
                                                                     : ImageMode::kRandom;
  s.anchor_fallback = j.at("anchor_fallback").get<bool>();
  const auto& tr = j.at("trace");
  s.trace.stream_seed = tr.at("stream_seed").get<std::uint64_t>();
  s.trace.draws_before = tr.at("draws_before").get<std::uint64_t>();
  s.trace.draws_after = tr.at("draws_after").get<std::uint64_t>();
  s.trace.type_redraws = tr.at("type_redraws").get<std::uint32_t>();
  s.trace.type_fallback = tr.at("type_fallback").get<bool>();
  return s;
}

std::vector<QuerySeed> build_query_seeds(const AbilityScoreboard& scoreboard,
                                         const BadCasePool& pool, const Catalog& catalog,
                                         const EmbeddingIndex& index, const LabelMap& type_map,
                                         std::size_t n, const SamplerOptions& options, Rng& rng) {
  if (n == 0) throw Error("seed count must be at least 1");
  if (catalog.empty()) throw Error("image catalog is empty");
  if (pool.empty()) throw Error("bad-case pool is empty for every question type");
  if (n > catalog.size()) {
    throw CatalogExhaustedError("batch of " + std::to_string(n) + " seeds needs more than the " +
                                std::to_string(catalog.size()) + " catalog images");
  }

  const TypeDistribution dist = type_weights(scoreboard, type_map, options.floor, options.rule);
  const PoolStats stats = pool_stats(pool);
  QuestionType most_populated = kAllQuestionTypes.front();
  for (const auto& [t, count] : stats) {
    if (count > stats.at(most_populated)) most_populated = t;
  }

  std::vector<std::string> unused = catalog.ids();
  std::set<std::string> used;
  auto take_random = [&]() {
    const std::size_t pick = rng.below(unused.size());
    std::string id = unused[pick];
    unused.erase(unused.begin() + static_cast<std::ptrdiff_t>(pick));
    used.insert(id);
    return id;
  };
  auto take = [&](const std::string& id) {
    unused.erase(std::find(unused.begin(), unused.end(), id));
    used.insert(id);
  };

  std::vector<QuerySeed> seeds;
  seeds.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    QuerySeed seed;
    seed.index = i;
    seed.trace.stream_seed = rng.seed();
    seed.trace.draws_before = rng.draws();

    QuestionType type = draw_type(dist, rng);
    while (stats.at(type) == 0 && seed.trace.type_redraws < options.max_redraws) {
      ++seed.trace.type_redraws;
      type = draw_type(dist, rng);
    }
    if (stats.at(type) == 0) {
      type = most_populated;
      seed.trace.type_fallback = true;
    }
    seed.qtype = type;
    seed.in_context = sample_pairs(pool, type, rng);

    seed.image_mode = i % 2 == 0 ? ImageMode::kRandom : ImageMode::kSimilar;
    if (seed.image_mode == ImageMode::kSimilar) {
      const std::string& anchor = seed.in_context.first.base.image_id;
      if (index.contains(anchor) && index.size() > 1) {
        for (const auto& nb : index.nearest(anchor, index.size() - 1, used)) {
          if (catalog.contains(nb.image_id)) {
            seed.image_id = nb.image_id;
            take(nb.image_id);
            break;
          }
        }
      }
      if (seed.image_id.empty()) {
        seed.image_mode = ImageMode::kRandom;
        seed.anchor_fallback = true;
      }
    }
    if (seed.image_id.empty()) seed.image_id = take_random();

    seed.trace.draws_after = rng.draws();
    seeds.push_back(std::move(seed));
  }
  return seeds;
}

}  // namespace dataengine
