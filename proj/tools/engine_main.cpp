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

// `engine` command-line front end.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dataengine/dataset_builder.hpp"
#include "dataengine/loop_orchestrator.hpp"
#include "dataengine/service.hpp"
#include "dataengine/synthetic.hpp"

namespace fs = std::filesystem;
using namespace dataengine;
using nlohmann::json;

namespace {

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

void print_manifest_line(const RoundManifest& m) {
  std::printf("round %u: seeds %zu, generated %zu, accepted %zu, rejected %zu, dataset %s\n",
              m.round, m.seeds_built, m.generated, m.accepted, m.rejected, m.dataset.c_str());
}

std::pair<std::string, int> split_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw Error("address must look like host:port");
  return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
}

void write_demo(const fs::path& out, std::size_t images, std::uint32_t rounds,
                std::size_t target, std::size_t eval_per_dim, double defect_rate) {
  SyntheticWorldOptions opts;
  opts.images = images;
  opts.eval_items_per_dimension = eval_per_dim;
  write_synthetic_world(make_synthetic_world(opts), out);
  json config = {
      {"rounds", rounds},
      {"per_round_targets", {target}},
      {"questions_per_seed", 5},
      {"seeds", {{"sampling", 1}, {"simulation", 2}}},
      {"paths",
       {{"eval", "eval.jsonl"},
        {"eval_format", "generic"},
        {"embeddings", "embeddings.tsv"},
        {"catalog", {{"captions", "captions.json"}, {"instances", "instances.json"}}},
        {"run_dir", "run"}}},
      {"trainer", {{"kind", "simulated"}}},
      {"gateway",
       {{"mode", "record"},
        {"provider", "synthetic"},
        {"cassette", "cassette.jsonl"},
        {"defect_rate", defect_rate}}},
  };
  write_file_atomic(out / "config.json", config.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop instruction data engine"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint32_t round = 1;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "engine config file")->required()->check(
        CLI::ExistingFile);
  };
  auto add_round = [&](CLI::App* sub) {
    sub->add_option("--round", round, "round number")->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "run every configured round");
  add_config(run);

  std::string resume_dir;
  auto* round_cmd = app.add_subcommand("round", "continue the first unfinished round");
  round_cmd->add_option("--resume", resume_dir, "run directory")->required()->check(
      CLI::ExistingDirectory);

  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (Stage s : {Stage::kIngest, Stage::kSample, Stage::kGenerate, Stage::kValidate}) {
    auto* sub = app.add_subcommand(std::string(to_string(s)), "run one stage of a round");
    add_config(sub);
    add_round(sub);
    stage_cmds.emplace_back(sub, s);
  }

  auto* dataset = app.add_subcommand("dataset", "build, merge and measure datasets");
  dataset->require_subcommand(1);
  auto* ds_build = dataset->add_subcommand("build", "run the build stage of a round");
  add_config(ds_build);
  add_round(ds_build);
  std::vector<std::string> merge_inputs;
  std::string merge_out;
  auto* ds_merge = dataset->add_subcommand("merge", "merge dataset files, first wins");
  ds_merge->add_option("inputs", merge_inputs, "dataset files")->required()->check(
      CLI::ExistingFile);
  ds_merge->add_option("--out", merge_out, "output file")->required();
  std::string metrics_in, lexicon_path;
  std::uint64_t metrics_seed = 0;
  bool metrics_json = false;
  auto* ds_metrics = dataset->add_subcommand("metrics", "diversity statistics");
  ds_metrics->add_option("dataset", metrics_in, "dataset file")->required()->check(
      CLI::ExistingFile);
  ds_metrics->add_option("--lexicon", lexicon_path, "noun list, one per line")->check(
      CLI::ExistingFile);
  ds_metrics->add_option("--seed", metrics_seed, "seed for pair sampling");
  ds_metrics->add_flag("--json", metrics_json, "print JSON instead of a table row");

  auto* ipo = app.add_subcommand("ipo", "interactive prompt optimization");
  ipo->require_subcommand(1);
  std::string session_id, template_id = std::string(kGenerationTemplate);
  std::uint32_t version = 0;
  std::size_t batch_size = kDefaultReviewBatchSize, k = 5, per_seed = 1;
  double theta = 0.0;
  auto* ipo_start = ipo->add_subcommand("start", "open a session");
  add_config(ipo_start);
  ipo_start->add_option("--template", template_id, "template id");
  ipo_start->add_option("--version", version, "version (default: latest)");
  ipo_start->add_option("--batch-size", batch_size, "seeds per review batch");
  ipo_start->add_option("--theta", theta, "failure-rate threshold (default: config)");
  auto* ipo_check = ipo->add_subcommand("check", "run the conflict check");
  auto* ipo_batch = ipo->add_subcommand("batch", "generate or show the review batch");
  ipo_batch->add_option("--questions-per-seed", per_seed, "questions per seed");
  auto* ipo_rate = ipo->add_subcommand("rate", "failure rate of the current batch");
  auto* ipo_step = ipo->add_subcommand("step", "converge or move to correction");
  auto* ipo_correct = ipo->add_subcommand("correct", "ask for a corrected prompt");
  ipo_correct->add_option("-k", k, "failure examples to include");
  std::string proposal_id, decider;
  bool reject = false;
  auto* ipo_decide = ipo->add_subcommand("decide", "approve or reject a proposal");
  ipo_decide->add_option("--proposal", proposal_id)->required();
  ipo_decide->add_option("--decider", decider)->required();
  ipo_decide->add_flag("--reject", reject, "reject instead of approve");
  std::string qa_id, failure_type, explanation, tagger;
  auto* ipo_tag = ipo->add_subcommand("tag", "record a failure");
  ipo_tag->add_option("--qa", qa_id)->required();
  ipo_tag->add_option("--type", failure_type)->required();
  ipo_tag->add_option("--explanation", explanation)->required();
  ipo_tag->add_option("--tagger", tagger)->required();
  auto* ipo_clear = ipo->add_subcommand("clear", "mark an item as fine");
  ipo_clear->add_option("--qa", qa_id)->required();
  ipo_clear->add_option("--tagger", tagger)->required();
  for (auto* sub : {ipo_check, ipo_batch, ipo_rate, ipo_step, ipo_correct, ipo_tag, ipo_clear}) {
    add_config(sub);
    sub->add_option("--session", session_id, "session id")->required();
  }
  add_config(ipo_decide);

  std::string addr = "127.0.0.1:8080", static_dir;
  auto* serve = app.add_subcommand("serve", "serve the console API");
  add_config(serve);
  serve->add_option("--addr", addr, "host:port");
  serve->add_option("--static", static_dir, "console bundle to serve at /")->check(
      CLI::ExistingDirectory);

  std::string demo_out;
  std::size_t demo_images = 400, demo_target = 900, demo_eval = 40;
  double demo_defects = 0.0;
  std::uint32_t demo_rounds = 2;
  auto* demo = app.add_subcommand("demo-world", "write a synthetic world and config");
  demo->add_option("--out", demo_out, "output directory")->required();
  demo->add_option("--images", demo_images, "catalog size");
  demo->add_option("--rounds", demo_rounds, "rounds in the config");
  demo->add_option("--target", demo_target, "items per round");
  demo->add_option("--eval-per-dim", demo_eval, "evaluation records per dimension");
  demo->add_option("--defect-rate", demo_defects, "share of defective synthetic questions")
      ->check(CLI::Range(0.0, 1.0));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*demo) {
      write_demo(demo_out, demo_images, demo_rounds, demo_target, demo_eval, demo_defects);
      std::printf("wrote %s\n", (fs::path(demo_out) / "config.json").c_str());
      return 0;
    }
    if (*round_cmd) {
      const auto m = resume_round(resume_dir);
      if (!m) {
        std::printf("every round is complete\n");
      } else {
        print_manifest_line(*m);
      }
      return 0;
    }
    if (*ds_merge) {
      std::vector<fs::path> paths(merge_inputs.begin(), merge_inputs.end());
      const Dataset merged = merge_rounds(paths);
      write_dataset(merged, merge_out);
      std::printf("%zu items\n", merged.items.size());
      return 0;
    }
    if (*ds_metrics) {
      const Dataset ds = load_dataset(metrics_in);
      const NounLexicon lex =
          lexicon_path.empty() ? NounLexicon::shipped() : NounLexicon::load(lexicon_path);
      const DiversityReport r = diversity(ds.items, lex, metrics_seed);
      if (metrics_json) {
        std::printf("%s\n", to_json(r).dump(2).c_str());
      } else {
        std::printf("%s\n", format_report_row(r).c_str());
      }
      return 0;
    }

    Engine engine(load_engine_config(config_path));
    if (*run) {
      for (const auto& m : engine.run()) print_manifest_line(m);
      return 0;
    }
    for (const auto& [sub, stage] : stage_cmds) {
      if (*sub) {
        engine.run_stage(round, stage);
        std::printf("round %u %s done\n", round, std::string(to_string(stage)).c_str());
        return 0;
      }
    }
    if (*ds_build) {
      engine.run_stage(round, Stage::kBuild);
      std::printf("round %u build done\n", round);
      return 0;
    }
    IpoWorkspace& ws = engine.workspace();
    const std::string& model = engine.config().gateway.model;
    if (*ipo_start) {
      if (version == 0) version = ws.store().versions(template_id).back().version;
      const double t = theta > 0.0 ? theta : engine.config().theta;
      std::printf("%s\n", to_json(ws.start_session(template_id, version, batch_size, t))
                              .dump(2)
                              .c_str());
    } else if (*ipo_check) {
      std::printf("%s\n", to_json(ws.run_conflict_check(session_id, engine.gateway(), model))
                              .dump(2)
                              .c_str());
    } else if (*ipo_batch) {
      const BatchContext ctx = engine.batch_context(per_seed);
      const ReviewBatch b = ws.generate_review_batch(session_id, ctx);
      for (const auto& item : b.items) {
        std::printf("%-28s %-11s %s\n", item.qa_id.c_str(),
                    std::string(to_string(item.status)).c_str(),
                    item.qa ? item.qa->question.c_str() : "(unparseable)");
      }
    } else if (*ipo_rate) {
      std::printf("%.4f\n", ws.failure_rate(session_id));
    } else if (*ipo_step) {
      std::printf("%s\n", std::string(to_string(ws.step(session_id))).c_str());
    } else if (*ipo_correct) {
      std::printf("%s\n",
                  to_json(ws.propose_correction(session_id, engine.gateway(), model, k))
                      .dump(2)
                      .c_str());
    } else if (*ipo_decide) {
      std::printf("%s\n", to_json(ws.decide_proposal(proposal_id, !reject, decider)).dump(2)
                              .c_str());
    } else if (*ipo_tag) {
      std::printf("%s\n", to_json(ws.record_failure(session_id, qa_id,
                                                    parse_failure_type(failure_type),
                                                    explanation, tagger))
                              .dump(2)
                              .c_str());
    } else if (*ipo_clear) {
      ws.clear_case(session_id, qa_id, tagger);
    } else if (*serve) {
      ServiceOptions opts;
      if (!static_dir.empty()) opts.static_dir = fs::path(static_dir);
      Service service(engine, api_token_from_env(), opts);
      const auto [host, port] = split_addr(addr);
      const int bound = service.bind(host, port);
      std::printf("listening on %s:%d\n", host.c_str(), bound);
      std::fflush(stdout);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      service.serve();
      g_service = nullptr;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
