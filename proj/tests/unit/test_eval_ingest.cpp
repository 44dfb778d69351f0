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

#include <set>
#include <sstream>

#include "dataengine/eval_ingest.hpp"
#include "dataengine/question_type.hpp"
#include "doctest.h"

using namespace dataengine;

TEST_SUITE("question_type") {
  TEST_CASE("eighteen types with distinct names") {
    std::set<std::string> canon, display;
    for (QuestionType t : kAllQuestionTypes) {
      canon.insert(std::string(canonical_name(t)));
      display.insert(std::string(display_name(t)));
      CHECK_FALSE(default_definition(t).empty());
    }
    CHECK(canon.size() == 18);
    CHECK(display.size() == 18);
  }

  TEST_CASE("lookup tolerates case, underscores and hyphens") {
    CHECK(question_type_from_string("Knowledge_Based Reasoning") ==
          QuestionType::kKnowledgeBasedReasoning);
    CHECK(question_type_from_string("spatial_relationship") == QuestionType::kSpatialRelationship);
    CHECK_FALSE(question_type_from_string("spatial").has_value());
  }

  TEST_CASE("unique type search needs exactly one whole-word hit") {
    CHECK(find_unique_question_type("The type is Image Scene.") == QuestionType::kImageScene);
    CHECK_FALSE(find_unique_question_type("image scene or image style").has_value());
    CHECK_FALSE(find_unique_question_type("image scenery").has_value());
    CHECK_FALSE(find_unique_question_type("nothing here").has_value());
  }
}

TEST_SUITE("eval_ingest") {
  TEST_CASE("generic rows with index and text predictions") {
    std::istringstream in(
        R"j({"id":"1","image_id":"i1","question":"q","choices":["a","b"],"answer_index":0,"prediction":0,"dimension":"d1","benchmark":"b"})j"
        "\n"
        R"j({"id":"2","image_id":"i2","question":"q","choices":["cat","dog"],"answer_index":0,"prediction":"Dog","dimension":"d1","benchmark":"b"})j"
        "\n"
        R"j({"id":"3","image_id":"i3","question":"q","choices":["a","b"],"answer_index":1,"prediction":null,"dimension":"d2","benchmark":"b","round":4})j"
        "\n");
    const auto records = ingest_results(in, EvalFormat::kGeneric, 2);
    REQUIRE(records.size() == 3);
    CHECK(records[0].correct());
    CHECK(records[1].prediction == 1u);
    CHECK_FALSE(records[1].correct());
    CHECK_FALSE(records[2].prediction.has_value());
    CHECK(records[0].round == 2);
    CHECK(records[2].round == 4);

    const auto board = compute_scoreboard(records);
    CHECK(board.entries.at("d1").correct == 1);
    CHECK(board.entries.at("d1").total == 2);
    CHECK(board.entries.at("d2").correct == 0);
    CHECK(extract_bad_cases(records).size() == 2);
  }

  TEST_CASE("mmbench-like rows use option columns and letter answers") {
    std::istringstream in(
        R"j({"index":"7","question":"q","A":"x","B":"y","C":"z","answer":"C","prediction":"(C)","category":"image_scene"})j"
        "\n");
    const auto r = ingest_results(in, EvalFormat::kMmbenchLike).at(0);
    CHECK(r.choices.size() == 3);
    CHECK(r.ground_truth == 2);
    CHECK(r.correct());
    CHECK(r.image_id == "7");
    CHECK(r.benchmark == "mmbench");
  }

  TEST_CASE("aokvqa-like rows") {
    std::istringstream in(
        R"j({"question_id":"q1","image_id":"42","question":"q","choices":["a","b","c","d"],"correct_choice_idx":3,"prediction":"D."})j"
        "\n");
    const auto r = ingest_results(in, EvalFormat::kAokvqaLike).at(0);
    CHECK(r.correct());
    CHECK(r.dimension == "aokvqa");
  }

  TEST_CASE("prediction matching") {
    const std::vector<std::string> choices{"red", "Green", "blue"};
    CHECK(match_prediction("B", choices) == 1u);
    CHECK(match_prediction(" green ", choices) == 1u);
    CHECK(match_prediction("D", choices) == std::nullopt);
    CHECK(match_prediction("", choices) == std::nullopt);
  }

  TEST_CASE("schema violations report the line") {
    std::istringstream in(
        R"j({"id":"1","image_id":"i","question":"q","choices":["a","b"],"answer_index":0,"prediction":0,"dimension":"d","benchmark":"b"})j"
        "\n"
        R"j({"id":"2","image_id":"i","question":"q","choices":["a","a"],"answer_index":0,"prediction":0,"dimension":"d","benchmark":"b"})j"
        "\n");
    try {
      ingest_results(in, EvalFormat::kGeneric);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    std::istringstream broken("{not json\n");
    CHECK_THROWS_AS(ingest_results(broken, EvalFormat::kGeneric), ParseError);
  }

  TEST_CASE("scoreboard and records round-trip through JSON") {
    AbilityScoreboard b;
    b.round = 3;
    b.entries["x"] = {3, 4};
    CHECK(scoreboard_from_json(to_json(b)) == b);
    CHECK(to_json(b)["entries"]["x"]["score"].get<double>() == doctest::Approx(0.75));

    EvalRecord r;
    r.record_id = "1";
    r.image_id = "i";
    r.question = "q";
    r.choices = {"a", "b"};
    r.ground_truth = 1;
    r.prediction = 0;
    r.dimension = "d";
    r.benchmark = "b";
    r.round = 2;
    CHECK(eval_record_from_json(to_json(r)) == r);
    CHECK_THROWS(compute_scoreboard({}));
  }
}
