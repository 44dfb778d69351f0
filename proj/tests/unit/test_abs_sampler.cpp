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

#include <map>
#include <set>

#include "dataengine/abs_sampler.hpp"
#include "doctest.h"

using namespace dataengine;

namespace {

AbilityScoreboard board(std::initializer_list<std::pair<QuestionType, std::uint64_t>> correct_of_100) {
  AbilityScoreboard b;
  for (const auto& [t, c] : correct_of_100) b.entries[std::string(canonical_name(t))] = {c, 100};
  return b;
}

constexpr QuestionType kA = QuestionType::kImageScene;
constexpr QuestionType kB = QuestionType::kImageStyle;
constexpr QuestionType kC = QuestionType::kImageTopic;
constexpr std::array<QuestionType, 3> kThree = {kA, kB, kC};

ClassifiedBadCase bad(const std::string& image, QuestionType t) {
  EvalRecord r;
  r.record_id = "r" + image;
  r.image_id = image;
  r.question = "q";
  r.choices = {"x", "y"};
  r.prediction = 1;
  r.dimension = std::string(canonical_name(t));
  r.benchmark = "b";
  return {r, t, ClassificationSource::kLabelMap, std::nullopt};
}

// Twelve images on a circle so neighbourhoods are easy to reason about.
struct SmallWorld {
  Catalog catalog;
  EmbeddingIndex index{2};
  SmallWorld() {
    std::map<std::string, ImageAnnotation> images;
    for (int i = 0; i < 12; ++i) {
      const std::string id = "i" + std::to_string(10 + i);
      ImageAnnotation a;
      a.image_id = id;
      a.width = a.height = 100;
      a.captions = {"caption " + id};
      images[id] = a;
      const double angle = i * 3.14159265358979 / 6;
      index.add(id, std::vector<double>{std::cos(angle), std::sin(angle)});
    }
    catalog = Catalog(std::move(images));
  }
};

}  // namespace

TEST_SUITE("abs_sampler") {
  TEST_CASE("inverse rule on 0.2 / 0.5 / 0.8") {
    // 1/0.2 : 1/0.5 : 1/0.8 = 5 : 2 : 1.25 over 8.25.
    const auto d = type_weights(board({{kA, 20}, {kB, 50}, {kC, 80}}), LabelMap::defaults(),
                                0.05, WeightRule::kInverse, kThree);
    REQUIRE(d.weights.size() == 3);
    CHECK(d.weights.at(kA) == doctest::Approx(5.0 / 8.25).epsilon(1e-9));
    CHECK(d.weights.at(kB) == doctest::Approx(2.0 / 8.25).epsilon(1e-9));
    CHECK(d.weights.at(kC) == doctest::Approx(1.25 / 8.25).epsilon(1e-9));
    CHECK(d.weights.at(kA) == doctest::Approx(0.60606).epsilon(1e-4));
  }

  TEST_CASE("floor, complement and uniform rules") {
    const auto floored = type_weights(board({{kA, 0}, {kB, 50}}), LabelMap::defaults(), 0.05,
                                      WeightRule::kInverse, std::array<QuestionType, 2>{kA, kB});
    CHECK(floored.weights.at(kA) == doctest::Approx(20.0 / 22.0));

    const auto comp = type_weights(board({{kA, 20}, {kB, 99}}), LabelMap::defaults(), 0.05,
                                   WeightRule::kComplement, std::array<QuestionType, 2>{kA, kB});
    CHECK(comp.weights.at(kA) == doctest::Approx(0.8 / 0.85));
    CHECK(comp.weights.at(kB) == doctest::Approx(0.05 / 0.85));

    const auto uni = type_weights(board({{kA, 20}, {kB, 99}}), LabelMap::defaults(), 0.05,
                                  WeightRule::kUniform);
    CHECK(uni.weights.size() == kQuestionTypeCount);
    for (const auto& [t, w] : uni.weights) CHECK(w == doctest::Approx(1.0 / 18));
  }

  TEST_CASE("types absent from the scoreboard get the largest weight") {
    const auto d = type_weights(board({{kA, 20}, {kB, 50}}), LabelMap::defaults());
    CHECK(d.weights.size() == kQuestionTypeCount);
    // 5 for kA, 2 for kB, 5 for each of the 16 unscored types.
    CHECK(d.weights.at(kA) == doctest::Approx(5.0 / 87.0));
    CHECK(d.weights.at(kB) == doctest::Approx(2.0 / 87.0));
    CHECK(d.weights.at(QuestionType::kFuturePrediction) == doctest::Approx(5.0 / 87.0));
  }

  TEST_CASE("bad arguments") {
    CHECK_THROWS_AS(type_weights({}, LabelMap::defaults()), Error);
    CHECK_THROWS_AS(type_weights(board({{kA, 1}}), LabelMap::defaults(), 0.0), Error);
    AbilityScoreboard unknown;
    unknown.entries["no such label"] = {1, 2};
    CHECK_THROWS_AS(type_weights(unknown, LabelMap::defaults()), Error);
    CHECK(parse_weight_rule("complement") == WeightRule::kComplement);
    CHECK_THROWS_AS(parse_weight_rule("x"), Error);
  }

  TEST_CASE("empirical draw frequencies") {
    const auto d = type_weights(board({{kA, 20}, {kB, 50}, {kC, 80}}), LabelMap::defaults(),
                                0.05, WeightRule::kInverse, kThree);
    Rng rng(123);
    std::map<QuestionType, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[draw_type(d, rng)];
    for (QuestionType t : kThree) {
      CHECK(std::abs(counts[t] / double(n) - d.weights.at(t)) < 0.01);
    }
  }

  TEST_CASE("seeds: distinct images, alternating modes, nearest unused neighbour") {
    SmallWorld w;
    BadCasePool pool;
    pool.add(bad("i10", kA));
    pool.add(bad("i16", kA));
    pool.add(bad("i13", kB));
    const auto b = board({{kA, 20}, {kB, 50}});
    Rng rng(9);
    const auto seeds = build_query_seeds(b, pool, w.catalog, w.index, LabelMap::defaults(), 10,
                                         {}, rng);
    REQUIRE(seeds.size() == 10);
    std::set<std::string> used;
    for (const auto& s : seeds) {
      CHECK(used.insert(s.image_id).second);
      CHECK((s.qtype == kA || s.qtype == kB));
      CHECK(s.in_context.first.qtype == s.qtype);
      if (s.index % 2 == 0) {
        CHECK(s.image_mode == ImageMode::kRandom);
      } else if (s.image_mode == ImageMode::kSimilar) {
        // On the circle the nearest image is at the smallest step that is still free.
        const int anchor = std::stoi(s.in_context.first.base.image_id.substr(1)) - 10;
        const int picked = std::stoi(s.image_id.substr(1)) - 10;
        const int step = std::min((picked - anchor + 12) % 12, (anchor - picked + 12) % 12);
        std::set<std::string> before(used);
        before.erase(s.image_id);
        for (int closer = 1; closer < step; ++closer) {
          CHECK(before.count("i" + std::to_string(10 + (anchor + closer) % 12)) == 1);
          CHECK(before.count("i" + std::to_string(10 + (anchor - closer + 12) % 12)) == 1);
        }
      }
      CHECK(s.trace.draws_after > s.trace.draws_before);
    }
  }

  TEST_CASE("seeds: same stream, same seeds; JSON round trip") {
    SmallWorld w;
    BadCasePool pool;
    pool.add(bad("i11", kC));
    const auto b = board({{kA, 20}, {kC, 50}});
    Rng r1(4), r2(4);
    const auto s1 = build_query_seeds(b, pool, w.catalog, w.index, LabelMap::defaults(), 6, {}, r1);
    const auto s2 = build_query_seeds(b, pool, w.catalog, w.index, LabelMap::defaults(), 6, {}, r2);
    for (std::size_t i = 0; i < s1.size(); ++i) {
      CHECK(to_json(s1[i]) == to_json(s2[i]));
      CHECK(to_json(query_seed_from_json(to_json(s1[i]))) == to_json(s1[i]));
      // Only kC has bad cases, so every seed lands there, by redraw or fallback.
      CHECK(s1[i].qtype == kC);
      CHECK(s1[i].in_context.duplicated);
    }
  }

  TEST_CASE("seeds: exhausted catalog and empty pool") {
    SmallWorld w;
    BadCasePool pool;
    pool.add(bad("i11", kC));
    Rng rng(1);
    const auto b = board({{kC, 50}});
    CHECK_THROWS_AS(build_query_seeds(b, pool, w.catalog, w.index, LabelMap::defaults(), 13, {}, rng),
                    CatalogExhaustedError);
    CHECK_THROWS_AS(build_query_seeds(b, BadCasePool{}, w.catalog, w.index, LabelMap::defaults(), 1,
                                      {}, rng),
                    Error);
  }
}
