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

#include <fstream>

#include "dataengine/loop_orchestrator.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace dataengine;
namespace fs = std::filesystem;

namespace {

AbilityScoreboard board_of(std::initializer_list<std::pair<std::string, ScoreEntry>> entries) {
  AbilityScoreboard b;
  b.round = 1;
  for (const auto& [k, v] : entries) b.entries[k] = v;
  return b;
}

std::string file(const fs::path& p) { return read_file(p); }

// Engine config for the committed replay fixture, run in `run_dir`.
EngineConfig replay_fixture_config(const fs::path& run_dir) {
  EngineConfig c = load_engine_config(testing::fixture("replay/config.json"));
  c.paths.run_dir = run_dir;
  return c;
}

EngineConfig small_world(const testing::TempDir& dir, std::uint32_t rounds = 1,
                         std::size_t target = 40) {
  SyntheticWorldOptions w;
  w.images = 60;
  w.eval_items_per_dimension = 6;
  testing::write_world(dir / "world", w);
  EngineConfig c = testing::world_config(dir / "world", dir / "run", rounds, target);
  c.gateway.synthetic_defect_rate = 0.2;
  return c;
}

}  // namespace

TEST_SUITE("loop_orchestrator") {
  TEST_CASE("simulated trainer on a hand-computed dimension") {
    // 0.5 + 0.4 * (1 - 0.5) * 100 / (100 + 100) = 0.6
    const auto before = board_of({{"image_scene", {50, 100}}, {"image_style", {30, 100}}});
    Rng rng(1);
    const auto after = simulate_trainer(before, {{"image_scene", 100}}, {0.4, 100.0, 0.0}, rng);
    CHECK(after.round == 2);
    CHECK(after.entries.at("image_scene").total == 1000000);
    CHECK(after.entries.at("image_scene").score() == doctest::Approx(0.6).epsilon(1e-9));
    // Nothing added, no noise: the original counts stay.
    CHECK(after.entries.at("image_style") == ScoreEntry{30, 100});
  }

  TEST_CASE("simulated trainer noise is seeded and clamped") {
    const auto before = board_of({{"a", {99, 100}}, {"b", {1, 100}}});
    Rng r1(5), r2(5);
    const SimulatedTrainerParams noisy{0.3, 200.0, 0.5};
    const auto x = simulate_trainer(before, {{"a", 10}}, noisy, r1);
    const auto y = simulate_trainer(before, {{"a", 10}}, noisy, r2);
    CHECK(x == y);
    for (const auto& [dim, e] : x.entries) {
      CHECK(e.score() >= 0.0);
      CHECK(e.score() <= 1.0);
    }
  }

  TEST_CASE("items added per dimension follow the label map") {
    const auto board = board_of({{"image_scene", {1, 2}}, {"celebrity_recognition", {1, 2}},
                                 {"unmapped thing", {1, 2}}});
    const auto added =
        added_per_dimension(board,
                            {{QuestionType::kImageScene, 7}, {QuestionType::kIdentityReasoning, 3}},
                            LabelMap::defaults());
    CHECK(added.at("image_scene") == 7);
    CHECK(added.at("celebrity_recognition") == 3);
    CHECK(added.at("unmapped thing") == 0);
  }

  TEST_CASE("config files: strict keys, relative paths, validation") {
    testing::TempDir dir;
    const nlohmann::json j = nlohmann::json::parse(R"j({
      "rounds": 3, "per_round_targets": [10, 20],
      "paths": {"eval": "e.jsonl", "embeddings": "/abs/emb.tsv",
                "catalog": {"captions": "c.json", "instances": "i.json"}, "run_dir": "run"},
      "trainer": {"kind": "simulated", "alpha": 0.2},
      "gateway": {"mode": "live", "provider": "synthetic"}
    })j");
    const EngineConfig c = engine_config_from_json(j, dir.path());
    CHECK(c.rounds == 3);
    CHECK(c.paths.eval == dir / "e.jsonl");
    CHECK(c.paths.embeddings == fs::path("/abs/emb.tsv"));
    CHECK(c.trainer.simulated.alpha == 0.2);
    CHECK(c.gateway.mode == GatewayMode::kLive);
    CHECK(c.target_for_round(1) == 10);
    CHECK(c.target_for_round(2) == 20);
    CHECK(c.target_for_round(3) == 20);

    const EngineConfig back = engine_config_from_json(to_json(c), dir.path());
    CHECK(to_json(back) == to_json(c));

    auto with = [&](const char* path, nlohmann::json value) {
      nlohmann::json k = j;
      k[nlohmann::json::json_pointer(path)] = value;
      return k;
    };
    CHECK_THROWS_AS(engine_config_from_json(with("/colour", 1), dir.path()), ConfigError);
    CHECK_THROWS_AS(engine_config_from_json(with("/trainer/beta", 1), dir.path()), ConfigError);
    CHECK_THROWS_AS(engine_config_from_json(with("/rounds", 0), dir.path()), ConfigError);
    CHECK_THROWS_AS(engine_config_from_json(with("/trainer/alpha", 1.5), dir.path()), ConfigError);
    CHECK_THROWS_AS(engine_config_from_json(with("/theta", 0), dir.path()), ConfigError);
    CHECK_THROWS_AS(engine_config_from_json(with("/gateway/provider", "x"), dir.path()), ConfigError);
    CHECK_THROWS_AS(engine_config_from_json(with("/trainer/kind", "external"), dir.path()),
                    ConfigError);
    CHECK_THROWS_AS(engine_config_from_json(with("/per_round_targets", "ten"), dir.path()),
                    ConfigError);
    CHECK_THROWS_AS(load_engine_config(dir / "missing.json"), Error);
  }

  TEST_CASE("shell quoting") {
    CHECK(shell_quote("plain") == "'plain'");
    CHECK(shell_quote("it's") == "'it'\\''s'");
  }

  TEST_CASE("external trainer: output, exit status, missing output, timeout") {
    testing::TempDir dir;
    write_file_atomic(dir / "data set.jsonl", "x\n");
    const auto out = run_external_trainer("cp {dataset} {eval_out}", dir / "data set.jsonl",
                                          dir / "eval.out", std::chrono::seconds(10));
    CHECK(file(out) == "x\n");

    try {
      run_external_trainer("exit 3", dir / "data set.jsonl", dir / "e2", std::chrono::seconds(10));
      FAIL("expected a nonzero exit");
    } catch (const TrainerExitError& e) {
      CHECK(e.status() == 3);
    }
    CHECK_THROWS_AS(run_external_trainer("true", dir / "data set.jsonl", dir / "e3",
                                         std::chrono::seconds(10)),
                    TrainerOutputMissingError);
    // A stale output file from an earlier attempt does not count.
    write_file_atomic(dir / "e4", "old");
    CHECK_THROWS_AS(run_external_trainer("true", dir / "data set.jsonl", dir / "e4",
                                         std::chrono::seconds(10)),
                    TrainerOutputMissingError);

    const auto start = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(run_external_trainer("sleep 30; touch {eval_out}", dir / "data set.jsonl",
                                         dir / "e5", std::chrono::seconds(1)),
                    TrainerTimeoutError);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(10));
    CHECK_FALSE(fs::exists(dir / "e5"));
  }

  TEST_CASE("replay fixture: ten seeds with no provider give the recorded manifest") {
    testing::TempDir dir;
    const EngineConfig c = replay_fixture_config(dir / "run");
    Engine engine(c);
    const RoundManifest m = engine.run_round(1);
    CHECK(m.seeds_built == 10);
    CHECK(to_json(m) == nlohmann::json::parse(file(testing::fixture("replay/expected_manifest.json"))));
    CHECK(file(dir / "run/round_1/dataset.qmae") ==
          file(testing::fixture("replay/expected_dataset.qmae")));
    CHECK(file(dir / "run/round_1/status") == "complete\n");
    // A second call returns the stored manifest without running anything.
    CHECK(engine.run_round(1) == m);
    CHECK(load_manifests(dir / "run") == std::vector<RoundManifest>{m});
  }

  TEST_CASE("replay misses fail the generate stage") {
    testing::TempDir dir;
    // Drop the last recorded reply.
    std::string cassette = file(testing::fixture("replay/cassette.jsonl"));
    cassette.pop_back();
    cassette.erase(cassette.rfind('\n') + 1);
    write_file_atomic(dir / "cassette.jsonl", cassette);
    EngineConfig c = replay_fixture_config(dir / "run");
    c.gateway.cassette = dir / "cassette.jsonl";
    Engine engine(c);
    try {
      engine.run_round(1);
      FAIL("expected the round to fail");
    } catch (const StageError& e) {
      CHECK((e.stage() == Stage::kGenerate || e.stage() == Stage::kValidate));
      CHECK(std::string(e.what()).find("round 1 failed at") == 0);
    }
    CHECK(file(dir / "run/round_1/status").rfind("failed at ", 0) == 0);
  }

  TEST_CASE("resume after a failure gives the same manifest as an uninterrupted run") {
    testing::TempDir a, b;
    const EngineConfig ca = small_world(a, 2, 40);
    EngineConfig cb = ca;
    cb.paths.run_dir = b / "run";
    const auto reference = run_engine(ca);
    REQUIRE(reference.size() == 2);

    EngineHooks fail_once;
    bool failed = false;
    fail_once.before_stage = [&](std::uint32_t round, Stage stage) {
      if (round == 2 && stage == Stage::kValidate && !failed) {
        failed = true;
        throw Error("injected");
      }
    };
    CHECK_THROWS_AS(run_engine(cb, nullptr, fail_once), StageError);
    CHECK(file(b / "run/round_2/status") == "failed at validate: injected\n");
    CHECK(fs::exists(b / "run/round_2/.stages/generate"));
    CHECK_FALSE(fs::exists(b / "run/round_2/manifest"));

    // Resume must not call the provider again for the finished stages.
    auto counting = std::make_shared<testing::CountingProvider>(
        std::make_shared<SyntheticChatProvider>(SyntheticProviderOptions{0.2, 0}));
    const auto resumed = resume_round(b / "run", counting);
    REQUIRE(resumed.has_value());
    CHECK(resumed->round == 2);
    CHECK(*resumed == reference[1]);
    CHECK(load_manifests(b / "run") == reference);
    CHECK(file(b / "run/round_2/dataset.merged.qmae") == file(a / "run/round_2/dataset.merged.qmae"));
    CHECK_FALSE(resume_round(b / "run").has_value());
  }

  TEST_CASE("stages run one at a time and in order") {
    testing::TempDir dir;
    Engine engine(small_world(dir));
    CHECK_THROWS_AS(engine.run_stage(1, Stage::kSample), Error);
    CHECK_THROWS_AS(engine.run_stage(2, Stage::kIngest), Error);
    engine.run_stage(1, Stage::kIngest);
    CHECK(engine.stage_done(1, Stage::kIngest));
    engine.run_stage(1, Stage::kSample);
    const auto seeds_file = dir / "run/round_1/seeds";
    CHECK(fs::exists(seeds_file));
    CHECK(parse_stage("validate") == Stage::kValidate);
    CHECK_THROWS_AS(parse_stage("dance"), Error);
    CHECK(dataset_extension(QaFormat::kQma) == "qma");
    CHECK(round_dir("/x", 3) == fs::path("/x/round_3"));
  }

  TEST_CASE("external trainer closes the loop through an evaluation file") {
    testing::TempDir dir;
    EngineConfig c = small_world(dir, 2, 20);
    // The stub "trainer" answers every question correctly.
    std::string all_right;
    {
      std::ifstream in(c.paths.eval);
      for (auto rec : ingest_results(in, EvalFormat::kGeneric)) {
        rec.prediction = rec.ground_truth;
        all_right += to_json(rec).dump() + "\n";
      }
    }
    write_file_atomic(dir / "perfect.jsonl", all_right);
    c.trainer.kind = TrainerKind::kExternal;
    c.trainer.command = "test -s {dataset} && cp " + shell_quote((dir / "perfect.jsonl").string()) +
                        " {eval_out}";
    c.trainer.timeout = std::chrono::seconds(30);
    const auto ms = run_engine(c);
    REQUIRE(ms.size() == 2);
    for (const auto& [dim, e] : ms[0].scoreboard_after.entries) CHECK(e.score() == 1.0);
    CHECK(ms[0].scoreboard_after.round == 2);
    CHECK(ms[1].scoreboard_before == ms[0].scoreboard_after);
    CHECK(fs::exists(dir / "run/round_1/eval.out"));
  }
}
