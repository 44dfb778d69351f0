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
#include <sstream>

#include "dataengine/badcase_pool.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace dataengine;

namespace {

EvalRecord bad_record(const std::string& id, const std::string& dimension) {
  EvalRecord r;
  r.record_id = id;
  r.image_id = "img" + id;
  r.question = "What is shown in picture " + id + "?";
  r.choices = {"a cat", "a dog"};
  r.ground_truth = 0;
  r.prediction = 1;
  r.dimension = dimension;
  r.benchmark = "b";
  return r;
}

ClassifiedBadCase case_of(const std::string& id, QuestionType t) {
  return {bad_record(id, std::string(canonical_name(t))), t, ClassificationSource::kLabelMap,
          std::nullopt};
}

GatewayOptions live() {
  GatewayOptions o;
  o.mode = GatewayMode::kLive;
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

}  // namespace

TEST_SUITE("badcase_pool") {
  TEST_CASE("label map files: comments, last-column types, line numbers on error") {
    std::istringstream in("# comment\nCeleb Recognition   identity_reasoning\nocr attribute_recognition\n");
    const LabelMap m = LabelMap::parse(in);
    CHECK(m.find("Celeb Recognition") == QuestionType::kIdentityReasoning);
    CHECK(m.find("celeb recognition") == QuestionType::kIdentityReasoning);
    CHECK(m.find("OCR") == QuestionType::kAttributeRecognition);
    CHECK_FALSE(m.find("unknown").has_value());

    std::istringstream bad("ocr attribute_recognition\nfoo not_a_type\n");
    try {
      LabelMap::parse(bad);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("identity and shipped defaults") {
    const LabelMap d = LabelMap::defaults();
    for (QuestionType t : kAllQuestionTypes) {
      CHECK(d.find(std::string(canonical_name(t))) == t);
      CHECK(d.find(std::string(display_name(t))) == t);
    }
    CHECK(d.find("celebrity_recognition") == QuestionType::kIdentityReasoning);
    const auto inv = d.inverted();
    const auto& identity = inv.at(QuestionType::kIdentityReasoning);
    CHECK(std::find(identity.begin(), identity.end(), "celebrity_recognition") != identity.end());
  }

  TEST_CASE("label map path and unmapped labels") {
    const LabelMap m = LabelMap::defaults();
    const auto c = classify_label_map(bad_record("1", "image_scene"), m);
    CHECK(c.qtype == QuestionType::kImageScene);
    CHECK(c.source == ClassificationSource::kLabelMap);
    CHECK_THROWS_AS(classify_label_map(bad_record("2", "mystery"), m), UnmappedLabelError);
    CHECK_THROWS_AS(classify(bad_record("2", "mystery"), m, nullptr), UnmappedLabelError);
  }

  TEST_CASE("LLM path with one corrective retry") {
    auto provider = std::make_shared<testing::ScriptedProvider>();
    Gateway gateway(live(), provider, nullptr);
    LlmClassifier clf(gateway, "classify", "m");
    const EvalRecord item = bad_record("9", "mystery");

    const ChatRequest first = clf.first_request(item);
    CHECK(first.temperature == 0.0);
    REQUIRE(first.messages.size() == 2);
    CHECK(first.messages[1].content ==
          "Question: What is shown in picture 9?\nChoices:\nA. a cat\nB. a dog\nQuestion type:");
    provider->add(first, "I am not sure");
    provider->add(clf.retry_request(item, "I am not sure"), "Image Topic");
    const auto c = classify(item, LabelMap::defaults(), &clf);
    CHECK(c.qtype == QuestionType::kImageTopic);
    CHECK(c.source == ClassificationSource::kLlm);
    CHECK(c.classifier_note == std::string("Image Topic"));
    CHECK(provider->calls == 2);
  }

  TEST_CASE("two unusable replies raise a classification error") {
    auto provider = std::make_shared<testing::ScriptedProvider>();
    Gateway gateway(live(), provider, nullptr);
    LlmClassifier clf(gateway, "classify", "m");
    const EvalRecord item = bad_record("3", "mystery");
    provider->add(clf.first_request(item), "image scene or image style");
    provider->add(clf.retry_request(item, "image scene or image style"), "no idea");
    CHECK_THROWS_AS(clf.classify(item), ClassificationError);
  }

  TEST_CASE("reply parsing") {
    CHECK(parse_classification_reply("future_prediction") == QuestionType::kFuturePrediction);
    CHECK(parse_classification_reply("The answer: Social Relation.") ==
          QuestionType::kSocialRelation);
    CHECK_FALSE(parse_classification_reply("social relation vs physical relation").has_value());
  }

  TEST_CASE("pool files round-trip and stats cover every type") {
    testing::TempDir dir;
    BadCasePool pool;
    pool.add(case_of("1", QuestionType::kImageScene));
    pool.add(case_of("2", QuestionType::kImageScene));
    ClassifiedBadCase noted = case_of("3", QuestionType::kImageStyle);
    noted.source = ClassificationSource::kLlm;
    noted.classifier_note = "Image Style";
    pool.add(noted);
    pool_save(pool, dir / "pool.jsonl");
    CHECK(pool_load(dir / "pool.jsonl") == pool);

    const auto more = std::vector<ClassifiedBadCase>{case_of("4", QuestionType::kImageTopic)};
    pool_append(more, dir / "pool.jsonl");
    const BadCasePool grown = pool_load(dir / "pool.jsonl");
    CHECK(grown.size() == 4);

    const PoolStats stats = pool_stats(grown);
    CHECK(stats.size() == kQuestionTypeCount);
    CHECK(stats.at(QuestionType::kImageScene) == 2);
    CHECK(stats.at(QuestionType::kImageStyle) == 1);
    CHECK(stats.at(QuestionType::kFuturePrediction) == 0);
    CHECK_THROWS_AS(pool_load(dir / "absent.jsonl"), IoError);
  }

  TEST_CASE("pair sampling: distinct when possible, duplicated for a single case") {
    BadCasePool pool;
    pool.add(case_of("only", QuestionType::kImageTopic));
    for (int i = 0; i < 3; ++i) pool.add(case_of("s" + std::to_string(i), QuestionType::kImageScene));
    Rng rng(5);

    const InContextPair single = sample_pairs(pool, QuestionType::kImageTopic, rng);
    CHECK(single.duplicated);
    CHECK(single.first == single.second);
    CHECK_THROWS_AS(sample_pairs(pool, QuestionType::kImageStyle, rng), EmptyTypeError);

    // Three cases give six ordered pairs; each should come up about 1/6 of the time.
    std::map<std::pair<std::string, std::string>, int> seen;
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
      const auto p = sample_pairs(pool, QuestionType::kImageScene, rng);
      REQUIRE_FALSE(p.duplicated);
      REQUIRE(p.first.base.record_id != p.second.base.record_id);
      ++seen[{p.first.base.record_id, p.second.base.record_id}];
    }
    CHECK(seen.size() == 6);
    for (const auto& [pair, count] : seen) CHECK(std::abs(count - n / 6) < 300);
  }
}
