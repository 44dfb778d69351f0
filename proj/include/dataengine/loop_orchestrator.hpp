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

// Round driver: evaluate, pool, sample, generate, validate, build, train,
// and back to evaluation. Every stage reads its inputs from the run
// directory and leaves a marker when done, so an interrupted round picks up
// at the first unfinished stage.
//
// Run directory:
//   config.json                    resolved config, used by resume
//   cassette.jsonl                 default cassette location
//   prompts/, ipo/                 prompt store and IPO workspace
//   round_N/eval.in                evaluation records behind the scoreboard
//   round_N/scoreboard             scoreboard before training
//   round_N/pool.delta             bad cases added this round
//   round_N/seeds
//   round_N/prompts/seed_NNNNN.txt
//   round_N/raw_responses/seed_NNNNN.json
//   round_N/parsed, reports, failures
//   round_N/dataset.<fmt>, dataset.merged.<fmt>
//   round_N/scoreboard.after
//   round_N/eval.out               external trainer output
//   round_N/manifest               written last, never rewritten
//   round_N/timing.json, status, .stages/<stage>
#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dataengine/abs_sampler.hpp"
#include "dataengine/badcase_pool.hpp"
#include "dataengine/coco_catalog.hpp"
#include "dataengine/dataset_builder.hpp"
#include "dataengine/embedding_index.hpp"
#include "dataengine/eval_ingest.hpp"
#include "dataengine/ipo_engine.hpp"
#include "dataengine/llm_gateway.hpp"
#include "dataengine/qa_validator.hpp"
#include "dataengine/rng.hpp"

namespace dataengine {

struct SimulatedTrainerParams {
  double alpha = 0.3;
  double kappa = 200.0;
  double sigma = 0.0;
};

enum class TrainerKind { kSimulated, kExternal };

struct TrainerConfig {
  TrainerKind kind = TrainerKind::kSimulated;
  SimulatedTrainerParams simulated;
  // Shell command; {dataset} and {eval_out} are replaced by quoted paths.
  std::string command;
  std::chrono::seconds timeout{3600};
  EvalFormat eval_format = EvalFormat::kGeneric;
};

struct GatewayConfig {
  GatewayMode mode = GatewayMode::kReplay;
  // "http" reads the endpoint and token from the environment.
  std::string provider = "http";
  std::filesystem::path cassette;  // empty: run_dir/cassette.jsonl
  std::string model = "gpt-4";
  std::size_t max_in_flight = 4;
  std::uint32_t max_retries = 3;
  std::chrono::milliseconds backoff_base{1000};
  double synthetic_defect_rate = 0.0;
  PriceTable prices;
};

struct EnginePaths {
  std::filesystem::path eval;
  EvalFormat eval_format = EvalFormat::kGeneric;
  std::optional<std::filesystem::path> pool;
  std::optional<std::filesystem::path> label_map;
  std::filesystem::path embeddings;
  std::filesystem::path captions;
  std::filesystem::path instances;
  std::optional<std::filesystem::path> images_dir;
  std::filesystem::path run_dir;
};

struct EngineConfig {
  std::uint32_t rounds = 2;
  std::vector<std::size_t> per_round_targets{5000, 18000};
  double score_floor = kDefaultScoreFloor;
  WeightRule weight_rule = WeightRule::kInverse;
  double theta = kDefaultFailureThreshold;
  double iou_threshold = kDefaultIouThreshold;
  std::size_t questions_per_seed = kDefaultQuestionsPerImage;
  QaFormat format = QaFormat::kQmae;
  bool type_check = true;
  std::uint64_t sampling_seed = 1;
  std::uint64_t simulation_seed = 2;
  EnginePaths paths;
  TrainerConfig trainer;
  GatewayConfig gateway;

  // The last target repeats past the end of the list.
  std::size_t target_for_round(std::uint32_t round) const;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Throws ConfigError on any value outside its documented range.
void validate(const EngineConfig& config);

// Relative paths resolve against `base_dir`.
EngineConfig engine_config_from_json(const nlohmann::json& j,
                                     const std::filesystem::path& base_dir);
EngineConfig load_engine_config(const std::filesystem::path& path);
// Paths are written as given; load from the same directory to round-trip.
nlohmann::json to_json(const EngineConfig& config);

struct RoundManifest {
  std::uint32_t round = 0;
  AbilityScoreboard scoreboard_before;
  AbilityScoreboard scoreboard_after;
  std::map<QuestionType, double> sampling_weights;
  std::size_t seeds_built = 0;
  std::size_t generated = 0;  // parsed items
  std::size_t parse_failures = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::map<FailureType, std::size_t> rejected_by_type;
  std::map<QuestionType, std::size_t> accepted_by_type;
  QaFormat format = QaFormat::kQmae;
  std::string dataset;  // relative to the run directory
  std::string merged_dataset;
  std::size_t merged_count = 0;
  std::string template_id;
  std::uint32_t prompt_version = 0;
  Usage usage;  // generation requests only
  std::optional<double> cost;
  bool operator==(const RoundManifest& other) const;
};

nlohmann::json to_json(const RoundManifest& m);
RoundManifest round_manifest_from_json(const nlohmann::json& j);

// s' = clamp(s + alpha (1 - s) n / (n + kappa) + N(0, sigma), 0, 1) per
// dimension, with n = added[dimension]. Entries with nothing to change keep
// their original counts.
AbilityScoreboard simulate_trainer(const AbilityScoreboard& board,
                                   const std::map<std::string, std::size_t>& added,
                                   const SimulatedTrainerParams& params, Rng& rng);

// Items added per scoreboard dimension: each dimension receives the count
// of the question type its label maps to.
std::map<std::string, std::size_t> added_per_dimension(
    const AbilityScoreboard& board, const std::map<QuestionType, std::size_t>& per_type,
    const LabelMap& type_map);

class TrainerError : public Error {
 public:
  using Error::Error;
};
class TrainerExitError : public TrainerError {
 public:
  TrainerExitError(const std::string& what, int status) : TrainerError(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};
class TrainerTimeoutError : public TrainerError {
 public:
  using TrainerError::TrainerError;
};
class TrainerOutputMissingError : public TrainerError {
 public:
  using TrainerError::TrainerError;
};

// Single-quotes `s` for /bin/sh.
std::string shell_quote(std::string_view s);

// Runs the command through /bin/sh with {dataset} and {eval_out}
// substituted; the whole process group is killed on timeout. Returns
// `eval_out` once it exists.
std::filesystem::path run_external_trainer(const std::string& command_template,
                                           const std::filesystem::path& dataset,
                                           const std::filesystem::path& eval_out,
                                           std::chrono::seconds timeout);

enum class Stage { kIngest, kSample, kGenerate, kValidate, kBuild, kTrain };

inline constexpr std::array<Stage, 6> kAllStages = {Stage::kIngest,   Stage::kSample,
                                                    Stage::kGenerate, Stage::kValidate,
                                                    Stage::kBuild,    Stage::kTrain};

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

class StageError : public Error {
 public:
  StageError(std::uint32_t round, Stage stage, const std::string& what)
      : Error("round " + std::to_string(round) + " failed at " + std::string(to_string(stage)) +
              ": " + what),
        round_(round),
        stage_(stage) {}
  std::uint32_t round() const { return round_; }
  Stage stage() const { return stage_; }

 private:
  std::uint32_t round_;
  Stage stage_;
};

struct EngineHooks {
  // Called before each stage that still has to run; throwing fails the round.
  std::function<void(std::uint32_t round, Stage stage)> before_stage;
};

std::filesystem::path round_dir(const std::filesystem::path& run_dir, std::uint32_t round);
std::string dataset_extension(QaFormat format);

class Engine {
 public:
  // Loads catalog, embeddings, label map and the initial pool, and opens
  // the run directory. `provider` overrides the configured one.
  explicit Engine(EngineConfig config, std::shared_ptr<ChatProvider> provider = nullptr);

  const EngineConfig& config() const { return config_; }
  IpoWorkspace& workspace() { return *workspace_; }
  Gateway& gateway() { return *gateway_; }
  const Catalog& catalog() const { return catalog_; }
  const EmbeddingIndex& index() const { return index_; }
  const LabelMap& type_map() const { return type_map_; }

  // Returns the stored manifest when the round already finished.
  RoundManifest run_round(std::uint32_t round, const EngineHooks& hooks = {});
  // Runs one stage; earlier stages must be complete.
  void run_stage(std::uint32_t round, Stage stage);
  bool stage_done(std::uint32_t round, Stage stage) const;
  std::vector<RoundManifest> run(const EngineHooks& hooks = {});

  // Initial pool plus every pool.delta up to and including `round`.
  BadCasePool pool_for_round(std::uint32_t round) const;
  AbilityScoreboard scoreboard_before(std::uint32_t round) const;
  // Classifier prompt rendered from the active classification template.
  LlmClassifier classifier();

  // Newest scoreboard on disk: the last round's scoreboard.after, else its
  // scoreboard, else one computed from the initial evaluation file.
  AbilityScoreboard latest_scoreboard() const;
  // Pool through the newest ingested round; before any round, the initial
  // pool plus the classified bad cases of the initial evaluation.
  BadCasePool latest_pool();
  // Context for IPO review batches. Points into this engine; call again to
  // pick up newer rounds. Not safe to share across concurrent batches.
  BatchContext batch_context(std::size_t questions_per_seed = 1);

 private:
  void ingest(std::uint32_t round);
  void sample(std::uint32_t round);
  void generate(std::uint32_t round);
  void validate_round(std::uint32_t round);
  void build_round(std::uint32_t round);
  void train(std::uint32_t round);
  RoundManifest assemble_manifest(std::uint32_t round) const;
  std::filesystem::path rdir(std::uint32_t round) const;
  void require(std::uint32_t round, Stage stage) const;

  EngineConfig config_;
  Catalog catalog_;
  EmbeddingIndex index_;
  LabelMap type_map_;
  BadCasePool initial_pool_;
  std::unique_ptr<IpoWorkspace> workspace_;
  std::shared_ptr<Cassette> cassette_;
  std::unique_ptr<Gateway> gateway_;
  AbilityScoreboard ctx_scoreboard_;
  BadCasePool ctx_pool_;
  std::optional<LlmClassifier> ctx_classifier_;
};

// Runs every round of `config`, reusing the manifests of finished rounds.
std::vector<RoundManifest> run_engine(const EngineConfig& config,
                                      std::shared_ptr<ChatProvider> provider = nullptr,
                                      const EngineHooks& hooks = {});

// Continues the first unfinished round of a run directory using its saved
// config. Returns nullopt when every configured round is complete.
std::optional<RoundManifest> resume_round(const std::filesystem::path& run_dir,
                                          std::shared_ptr<ChatProvider> provider = nullptr);

// Manifests of all finished rounds, in round order.
std::vector<RoundManifest> load_manifests(const std::filesystem::path& run_dir);

}  // namespace dataengine
