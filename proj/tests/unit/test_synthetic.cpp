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
#include "dataengine/synthetic.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace dataengine;

TEST_SUITE("synthetic") {
  TEST_CASE("worlds are reproducible and spread scores as asked") {
    SyntheticWorldOptions o;
    o.images = 30;
    o.eval_items_per_dimension = 20;
    const SyntheticWorld a = make_synthetic_world(o), b = make_synthetic_world(o);
    CHECK(a.captions_json == b.captions_json);
    CHECK(a.embeddings_tsv == b.embeddings_tsv);
    CHECK(a.eval == b.eval);
    CHECK(a.eval.size() == 18 * 20);
    const AbilityScoreboard board = compute_scoreboard(a.eval);
    CHECK(board.entries.size() == 18);
    double lo = 1, hi = 0;
    for (const auto& [dim, e] : board.entries) {
      lo = std::min(lo, e.score());
      hi = std::max(hi, e.score());
    }
    CHECK(lo == doctest::Approx(0.2).epsilon(0.05));
    CHECK(hi == doctest::Approx(0.9).epsilon(0.05));
    o.seed = 8;
    CHECK(make_synthetic_world(o).embeddings_tsv != a.embeddings_tsv);
  }

  TEST_CASE("provider replies are a function of the request") {
    SyntheticChatProvider p({0.0, 3});
    ChatRequest r;
    r.model = "m";
    r.messages = {{Role::kUser, "Please write 2 multiple-choice questions.\nImage description:\n"
                                "A dog.\ndog: [1,2,30,40]\ncat: [50,50,10,10]"}};
    const auto x = p.send(r), y = p.send(r);
    CHECK(x.text == y.text);
    QaOrigin origin;
    const ParseOutcome parsed = parse_output(x.text, origin);
    CHECK(parsed.items.size() == 2);
    CHECK(parsed.stubs.empty());
    for (const auto& qa : parsed.items) {
      REQUIRE(qa.bbox_mentions.size() >= 1);
      const auto& box = qa.bbox_mentions[0].bbox;
      CHECK(((box == BBox{1, 2, 30, 40}) || (box == BBox{50, 50, 10, 10})));
    }
  }

  TEST_CASE("the correction rule removes box defects") {
    ChatRequest r;
    r.model = "m";
    const std::string body = "Please write 5 multiple-choice questions.\nImage description:\n"
                             "A dog.\ndog: [1,2,30,40]";
    SyntheticChatProvider p({1.0, 3});
    std::size_t before = 0, after = 0;
    for (int i = 0; i < 20; ++i) {
      r.messages = {{Role::kUser, "seed " + std::to_string(i) + "\n" + body}};
      before += find_bbox_mentions(p.send(r).text, "x").size() -
                std::count(p.send(r).text.begin(), p.send(r).text.end(), '\n') * 0;
      r.messages = {{Role::kUser, "seed " + std::to_string(i) + "\n" +
                                      std::string(kSyntheticCorrectionRule) + "\n" + body}};
      const auto text = p.send(r).text;
      for (const auto& m : find_bbox_mentions(text, "x")) after += !(m.bbox == BBox{1, 2, 30, 40});
      after += text.find("([") != std::string::npos;
    }
    CHECK(before > 0);
    CHECK(after == 0);
  }
}
