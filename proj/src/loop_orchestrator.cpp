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

#include "dataengine/loop_orchestrator.hpp"

#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "dataengine/http_provider.hpp"
#include "dataengine/synthetic.hpp"

namespace dataengine {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kSimulatedTotal = 1e6;

void check_keys(const json& j, std::string_view where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path.lexically_normal();
  return (base / path).lexically_normal();
}

std::optional<fs::path> optional_path(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return resolve(base, j.at(key).get<std::string>());
}

json optional_path_json(const std::optional<fs::path>& p) {
  return p ? json(p->string()) : json(nullptr);
}

std::string trainer_kind_name(TrainerKind kind) {
  return kind == TrainerKind::kSimulated ? "simulated" : "external";
}

std::string seed_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seed_%05zu", index);
  return buf;
}

std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> rows;
  for_each_line(in, [&](const std::string& line, std::size_t n) {
    if (trim(line).empty()) return;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    }
  });
  return rows;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<EvalRecord> ingest_file(const fs::path& path, EvalFormat format, std::uint32_t round) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open evaluation file " + path.string());
  // The engine decides which round a file belongs to, whatever the rows say.
  auto records = ingest_results(in, format, round);
  for (auto& r : records) r.round = round;
  return records;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
// exception stops the remaining work and is rethrown.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    while (!stop) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        stop = true;
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(body);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
}

struct PinnedTemplate {
  std::string template_id;
  std::uint32_t version = 0;
};

PinnedTemplate load_pin(const fs::path& path) {
  const json j = read_json(path);
  return {j.at("template_id").get<std::string>(), j.at("version").get<std::uint32_t>()};
}

}  // namespace

std::size_t EngineConfig::target_for_round(std::uint32_t round) const {
  if (per_round_targets.empty()) throw ConfigError("per_round_targets is empty");
  if (round == 0) throw ConfigError("rounds are numbered from 1");
  const std::size_t i = std::min<std::size_t>(round - 1, per_round_targets.size() - 1);
  return per_round_targets[i];
}

void validate(const EngineConfig& c) {
  if (c.rounds < 1) throw ConfigError("rounds must be at least 1");
  if (c.per_round_targets.empty()) throw ConfigError("per_round_targets is empty");
  for (auto t : c.per_round_targets) {
    if (t == 0) throw ConfigError("per-round targets must be positive");
  }
  if (!(c.score_floor > 0.0 && c.score_floor < 1.0)) {
    throw ConfigError("score_floor must be in (0, 1)");
  }
  if (!(c.theta > 0.0 && c.theta <= 1.0)) throw ConfigError("theta must be in (0, 1]");
  if (!(c.iou_threshold > 0.0 && c.iou_threshold <= 1.0)) {
    throw ConfigError("iou_threshold must be in (0, 1]");
  }
  if (c.questions_per_seed < 1) throw ConfigError("questions_per_seed must be at least 1");
  const auto& s = c.trainer.simulated;
  if (c.trainer.kind == TrainerKind::kSimulated) {
    if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw ConfigError("trainer alpha must be in (0, 1)");
    if (!(s.kappa > 0.0)) throw ConfigError("trainer kappa must be positive");
    if (!(s.sigma >= 0.0)) throw ConfigError("trainer sigma must be non-negative");
  } else {
    if (c.trainer.command.empty()) throw ConfigError("external trainer needs a command");
    if (c.trainer.timeout.count() <= 0) throw ConfigError("trainer timeout must be positive");
  }
  if (c.gateway.max_in_flight < 1) throw ConfigError("max_in_flight must be at least 1");
  if (c.gateway.provider != "http" && c.gateway.provider != "synthetic") {
    throw ConfigError("gateway provider must be http or synthetic");
  }
  if (!(c.gateway.synthetic_defect_rate >= 0.0 && c.gateway.synthetic_defect_rate <= 1.0)) {
    throw ConfigError("defect_rate must be in [0, 1]");
  }
  if (c.paths.run_dir.empty()) throw ConfigError("paths.run_dir is required");
}

EngineConfig engine_config_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, "config",
             {"rounds", "per_round_targets", "score_floor", "weight_rule", "theta",
              "iou_threshold", "questions_per_seed", "format", "type_check", "seeds", "paths",
              "trainer", "gateway"});
  EngineConfig c;
  try {
    c.rounds = j.value("rounds", c.rounds);
    if (j.contains("per_round_targets")) {
      c.per_round_targets = j.at("per_round_targets").get<std::vector<std::size_t>>();
    }
    c.score_floor = j.value("score_floor", c.score_floor);
    if (j.contains("weight_rule")) {
      c.weight_rule = parse_weight_rule(j.at("weight_rule").get<std::string>());
    }
    c.theta = j.value("theta", c.theta);
    c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
    c.questions_per_seed = j.value("questions_per_seed", c.questions_per_seed);
    if (j.contains("format")) c.format = parse_qa_format(j.at("format").get<std::string>());
    c.type_check = j.value("type_check", c.type_check);

    if (j.contains("seeds")) {
      const json& s = j.at("seeds");
      check_keys(s, "seeds", {"sampling", "simulation"});
      c.sampling_seed = s.value("sampling", c.sampling_seed);
      c.simulation_seed = s.value("simulation", c.simulation_seed);
    }

    if (!j.contains("paths")) throw ConfigError("config needs a paths object");
    const json& p = j.at("paths");
    check_keys(p, "paths",
               {"eval", "eval_format", "pool", "label_map", "embeddings", "catalog",
                "images_dir", "run_dir"});
    c.paths.eval = resolve(base_dir, p.value("eval", std::string()));
    if (p.contains("eval_format")) {
      c.paths.eval_format = parse_eval_format(p.at("eval_format").get<std::string>());
    }
    c.paths.pool = optional_path(p, "pool", base_dir);
    c.paths.label_map = optional_path(p, "label_map", base_dir);
    c.paths.embeddings = resolve(base_dir, p.at("embeddings").get<std::string>());
    const json& cat = p.at("catalog");
    check_keys(cat, "paths.catalog", {"captions", "instances"});
    c.paths.captions = resolve(base_dir, cat.at("captions").get<std::string>());
    c.paths.instances = resolve(base_dir, cat.at("instances").get<std::string>());
    c.paths.images_dir = optional_path(p, "images_dir", base_dir);
    c.paths.run_dir = resolve(base_dir, p.at("run_dir").get<std::string>());

    if (j.contains("trainer")) {
      const json& t = j.at("trainer");
      check_keys(t, "trainer",
                 {"kind", "alpha", "kappa", "sigma", "command", "timeout_s", "eval_format"});
      const std::string kind = t.value("kind", std::string("simulated"));
      if (kind == "simulated") {
        c.trainer.kind = TrainerKind::kSimulated;
      } else if (kind == "external") {
        c.trainer.kind = TrainerKind::kExternal;
      } else {
        throw ConfigError("trainer kind must be simulated or external, got '" + kind + "'");
      }
      c.trainer.simulated.alpha = t.value("alpha", c.trainer.simulated.alpha);
      c.trainer.simulated.kappa = t.value("kappa", c.trainer.simulated.kappa);
      c.trainer.simulated.sigma = t.value("sigma", c.trainer.simulated.sigma);
      c.trainer.command = t.value("command", std::string());
      c.trainer.timeout = std::chrono::seconds(t.value("timeout_s", c.trainer.timeout.count()));
      if (t.contains("eval_format")) {
        c.trainer.eval_format = parse_eval_format(t.at("eval_format").get<std::string>());
      }
    }

    if (j.contains("gateway")) {
      const json& g = j.at("gateway");
      check_keys(g, "gateway",
                 {"mode", "provider", "cassette", "model", "max_in_flight", "max_retries",
                  "backoff_ms", "defect_rate", "prices"});
      if (g.contains("mode")) c.gateway.mode = parse_gateway_mode(g.at("mode").get<std::string>());
      c.gateway.provider = g.value("provider", c.gateway.provider);
      if (auto cas = optional_path(g, "cassette", base_dir)) c.gateway.cassette = *cas;
      c.gateway.model = g.value("model", c.gateway.model);
      c.gateway.max_in_flight = g.value("max_in_flight", c.gateway.max_in_flight);
      c.gateway.max_retries = g.value("max_retries", c.gateway.max_retries);
      c.gateway.backoff_base =
          std::chrono::milliseconds(g.value("backoff_ms", c.gateway.backoff_base.count()));
      c.gateway.synthetic_defect_rate = g.value("defect_rate", c.gateway.synthetic_defect_rate);
      if (g.contains("prices")) {
        for (const auto& [model, price] : g.at("prices").items()) {
          check_keys(price, "gateway.prices." + model, {"prompt_per_1k", "completion_per_1k"});
          c.gateway.prices[model] = Price{price.value("prompt_per_1k", 0.0),
                                          price.value("completion_per_1k", 0.0)};
        }
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

EngineConfig load_engine_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return engine_config_from_json(j, path.parent_path());
}

json to_json(const EngineConfig& c) {
  json prices = json::object();
  for (const auto& [model, price] : c.gateway.prices) {
    prices[model] = {{"prompt_per_1k", price.prompt_per_1k},
                     {"completion_per_1k", price.completion_per_1k}};
  }
  json trainer = {{"kind", trainer_kind_name(c.trainer.kind)}};
  if (c.trainer.kind == TrainerKind::kSimulated) {
    trainer["alpha"] = c.trainer.simulated.alpha;
    trainer["kappa"] = c.trainer.simulated.kappa;
    trainer["sigma"] = c.trainer.simulated.sigma;
  } else {
    trainer["command"] = c.trainer.command;
    trainer["timeout_s"] = c.trainer.timeout.count();
    trainer["eval_format"] = std::string(to_string(c.trainer.eval_format));
  }
  json gateway = {{"mode", std::string(to_string(c.gateway.mode))},
                  {"provider", c.gateway.provider},
                  {"model", c.gateway.model},
                  {"max_in_flight", c.gateway.max_in_flight},
                  {"max_retries", c.gateway.max_retries},
                  {"backoff_ms", c.gateway.backoff_base.count()},
                  {"defect_rate", c.gateway.synthetic_defect_rate},
                  {"prices", prices}};
  if (!c.gateway.cassette.empty()) gateway["cassette"] = c.gateway.cassette.string();
  return {
      {"rounds", c.rounds},
      {"per_round_targets", c.per_round_targets},
      {"score_floor", c.score_floor},
      {"weight_rule", std::string(to_string(c.weight_rule))},
      {"theta", c.theta},
      {"iou_threshold", c.iou_threshold},
      {"questions_per_seed", c.questions_per_seed},
      {"format", std::string(to_string(c.format))},
      {"type_check", c.type_check},
      {"seeds", {{"sampling", c.sampling_seed}, {"simulation", c.simulation_seed}}},
      {"paths",
       {{"eval", c.paths.eval.string()},
        {"eval_format", std::string(to_string(c.paths.eval_format))},
        {"pool", optional_path_json(c.paths.pool)},
        {"label_map", optional_path_json(c.paths.label_map)},
        {"embeddings", c.paths.embeddings.string()},
        {"catalog",
         {{"captions", c.paths.captions.string()}, {"instances", c.paths.instances.string()}}},
        {"images_dir", optional_path_json(c.paths.images_dir)},
        {"run_dir", c.paths.run_dir.string()}}},
      {"trainer", trainer},
      {"gateway", gateway},
  };
}

bool RoundManifest::operator==(const RoundManifest& other) const {
  return to_json(*this) == to_json(other);
}

json to_json(const RoundManifest& m) {
  json weights = json::object();
  for (const auto& [t, w] : m.sampling_weights) weights[std::string(canonical_name(t))] = w;
  json rejected = json::object();
  for (FailureType f : kAllFailureTypes) {
    auto it = m.rejected_by_type.find(f);
    rejected[std::string(to_string(f))] = it == m.rejected_by_type.end() ? 0 : it->second;
  }
  json accepted = json::object();
  for (QuestionType t : kAllQuestionTypes) {
    auto it = m.accepted_by_type.find(t);
    accepted[std::string(canonical_name(t))] = it == m.accepted_by_type.end() ? 0 : it->second;
  }
  return {
      {"round", m.round},
      {"scoreboard_before", to_json(m.scoreboard_before)},
      {"scoreboard_after", to_json(m.scoreboard_after)},
      {"sampling_weights", weights},
      {"seeds_built", m.seeds_built},
      {"generated", m.generated},
      {"parse_failures", m.parse_failures},
      {"accepted", m.accepted},
      {"rejected", m.rejected},
      {"rejected_by_type", rejected},
      {"accepted_by_type", accepted},
      {"format", std::string(to_string(m.format))},
      {"dataset", m.dataset},
      {"merged_dataset", m.merged_dataset},
      {"merged_count", m.merged_count},
      {"prompt", {{"template_id", m.template_id}, {"version", m.prompt_version}}},
      {"usage",
       {{"prompt_tokens", m.usage.prompt_tokens},
        {"completion_tokens", m.usage.completion_tokens}}},
      {"cost", m.cost ? json(*m.cost) : json(nullptr)},
  };
}

RoundManifest round_manifest_from_json(const json& j) {
  try {
    RoundManifest m;
    m.round = j.at("round").get<std::uint32_t>();
    m.scoreboard_before = scoreboard_from_json(j.at("scoreboard_before"));
    m.scoreboard_after = scoreboard_from_json(j.at("scoreboard_after"));
    for (const auto& [name, w] : j.at("sampling_weights").items()) {
      auto t = question_type_from_string(name);
      if (!t) throw ParseError("manifest names unknown question type '" + name + "'");
      m.sampling_weights[*t] = w.get<double>();
    }
    m.seeds_built = j.at("seeds_built").get<std::size_t>();
    m.generated = j.at("generated").get<std::size_t>();
    m.parse_failures = j.at("parse_failures").get<std::size_t>();
    m.accepted = j.at("accepted").get<std::size_t>();
    m.rejected = j.at("rejected").get<std::size_t>();
    for (const auto& [name, n] : j.at("rejected_by_type").items()) {
      const auto count = n.get<std::size_t>();
      if (count) m.rejected_by_type[parse_failure_type(name)] = count;
    }
    for (const auto& [name, n] : j.at("accepted_by_type").items()) {
      auto t = question_type_from_string(name);
      if (!t) throw ParseError("manifest names unknown question type '" + name + "'");
      const auto count = n.get<std::size_t>();
      if (count) m.accepted_by_type[*t] = count;
    }
    m.format = parse_qa_format(j.at("format").get<std::string>());
    m.dataset = j.at("dataset").get<std::string>();
    m.merged_dataset = j.at("merged_dataset").get<std::string>();
    m.merged_count = j.at("merged_count").get<std::size_t>();
    m.template_id = j.at("prompt").at("template_id").get<std::string>();
    m.prompt_version = j.at("prompt").at("version").get<std::uint32_t>();
    m.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<std::uint64_t>();
    m.usage.completion_tokens = j.at("usage").at("completion_tokens").get<std::uint64_t>();
    if (!j.at("cost").is_null()) m.cost = j.at("cost").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

AbilityScoreboard simulate_trainer(const AbilityScoreboard& board,
                                   const std::map<std::string, std::size_t>& added,
                                   const SimulatedTrainerParams& params, Rng& rng) {
  if (!(params.alpha > 0.0 && params.alpha < 1.0)) throw Error("alpha must be in (0, 1)");
  if (!(params.kappa > 0.0)) throw Error("kappa must be positive");
  if (!(params.sigma >= 0.0)) throw Error("sigma must be non-negative");

  AbilityScoreboard out;
  out.round = board.round + 1;
  for (const auto& [dim, entry] : board.entries) {
    if (entry.total == 0) throw Error("dimension '" + dim + "' has no evaluated items");
    auto it = added.find(dim);
    const double n = it == added.end() ? 0.0 : static_cast<double>(it->second);
    const double s = entry.score();
    const double delta = params.alpha * (1.0 - s) * n / (n + params.kappa);
    const double noise = params.sigma > 0.0 ? params.sigma * rng.normal() : 0.0;
    if (delta == 0.0 && noise == 0.0) {
      out.entries[dim] = entry;
      continue;
    }
    const double next = std::clamp(s + delta + noise, 0.0, 1.0);
    ScoreEntry e;
    e.total = static_cast<std::uint64_t>(kSimulatedTotal);
    e.correct = static_cast<std::uint64_t>(std::llround(next * kSimulatedTotal));
    // Re-expressing the score over a larger total must not lower it.
    if (params.sigma == 0.0 && e.score() < s) e = entry;
    out.entries[dim] = e;
  }
  return out;
}

std::map<std::string, std::size_t> added_per_dimension(
    const AbilityScoreboard& board, const std::map<QuestionType, std::size_t>& per_type,
    const LabelMap& type_map) {
  std::map<std::string, std::size_t> out;
  for (const auto& [dim, entry] : board.entries) {
    std::size_t n = 0;
    if (auto t = type_map.find(dim)) {
      auto it = per_type.find(*t);
      if (it != per_type.end()) n = it->second;
    }
    out[dim] = n;
  }
  return out;
}

std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += '\'';
  return out;
}

namespace {

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (std::size_t at = s.find(from); at != std::string::npos; at = s.find(from, at + to.size())) {
    s.replace(at, from.size(), to);
  }
}

}  // namespace

fs::path run_external_trainer(const std::string& command_template, const fs::path& dataset,
                              const fs::path& eval_out, std::chrono::seconds timeout) {
  std::string command = command_template;
  replace_all(command, "{dataset}", shell_quote(dataset.string()));
  replace_all(command, "{eval_out}", shell_quote(eval_out.string()));
  std::error_code ec;
  fs::remove(eval_out, ec);

  const pid_t pid = fork();
  if (pid < 0) throw TrainerError("cannot fork trainer process");
  if (pid == 0) {
    setpgid(0, 0);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  setpgid(pid, pid);

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  for (;;) {
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw TrainerError("lost track of trainer process");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw TrainerTimeoutError("trainer exceeded " + std::to_string(timeout.count()) + " s");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    throw TrainerExitError("trainer exited with status " + std::to_string(code), code);
  }
  if (!fs::exists(eval_out)) {
    throw TrainerOutputMissingError("trainer finished but wrote no " + eval_out.string());
  }
  return eval_out;
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kIngest: return "ingest";
    case Stage::kSample: return "sample";
    case Stage::kGenerate: return "generate";
    case Stage::kValidate: return "validate";
    case Stage::kBuild: return "build";
    case Stage::kTrain: return "train";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  for (Stage s : kAllStages) {
    if (to_string(s) == text) return s;
  }
  throw Error("unknown stage '" + std::string(text) + "'");
}

fs::path round_dir(const fs::path& run_dir, std::uint32_t round) {
  return run_dir / ("round_" + std::to_string(round));
}

std::string dataset_extension(QaFormat format) { return std::string(to_string(format)); }

Engine::Engine(EngineConfig config, std::shared_ptr<ChatProvider> provider)
    : config_(std::move(config)) {
  validate(config_);
  auto& p = config_.paths;
  p.run_dir = fs::absolute(p.run_dir).lexically_normal();
  {
    std::ifstream captions(p.captions);
    if (!captions) throw IoError("cannot open captions " + p.captions.string());
    std::ifstream instances(p.instances);
    if (!instances) throw IoError("cannot open instances " + p.instances.string());
    catalog_ = load_catalog(captions, instances);
  }
  {
    std::ifstream emb(p.embeddings);
    if (!emb) throw IoError("cannot open embeddings " + p.embeddings.string());
    index_ = load_embeddings(emb);
  }
  type_map_ = LabelMap::defaults();
  if (p.label_map) {
    const LabelMap extra = LabelMap::load(*p.label_map);
    for (const auto& [label, t] : extra.entries()) type_map_.set(label, t);
  }
  if (p.pool) initial_pool_ = pool_load(*p.pool);

  fs::create_directories(p.run_dir);
  workspace_ = IpoWorkspace::open(p.run_dir);

  EngineConfig saved = config_;
  for (fs::path* path : {&saved.paths.eval, &saved.paths.embeddings, &saved.paths.captions,
                         &saved.paths.instances}) {
    if (!path->empty()) *path = fs::absolute(*path).lexically_normal();
  }
  for (auto* opt : {&saved.paths.pool, &saved.paths.label_map, &saved.paths.images_dir}) {
    if (*opt) *opt = fs::absolute(**opt).lexically_normal();
  }
  if (!saved.gateway.cassette.empty()) {
    saved.gateway.cassette = fs::absolute(saved.gateway.cassette).lexically_normal();
  }
  const std::string saved_text = to_json(saved).dump(2) + "\n";
  const fs::path config_path = p.run_dir / "config.json";
  if (!fs::exists(config_path) || read_file(config_path) != saved_text) {
    write_file_atomic(config_path, saved_text);
  }

  const auto mode = config_.gateway.mode;
  if (!provider && mode != GatewayMode::kReplay) {
    if (config_.gateway.provider == "synthetic") {
      SyntheticProviderOptions opts;
      opts.defect_rate = config_.gateway.synthetic_defect_rate;
      opts.seed = derive_seed(config_.simulation_seed, "synthetic-provider");
      provider = std::make_shared<SyntheticChatProvider>(opts);
    } else {
      provider = std::make_shared<HttpChatProvider>(http_provider_options_from_env());
    }
  }
  if (mode != GatewayMode::kLive) {
    const fs::path cassette_path = config_.gateway.cassette.empty()
                                       ? p.run_dir / "cassette.jsonl"
                                       : config_.gateway.cassette;
    cassette_ = Cassette::open(cassette_path);
  }
  GatewayOptions gopts;
  gopts.mode = mode;
  gopts.max_in_flight = config_.gateway.max_in_flight;
  gopts.max_retries = config_.gateway.max_retries;
  gopts.backoff_base = config_.gateway.backoff_base;
  gopts.jitter_seed = derive_seed(config_.sampling_seed, "gateway-jitter");
  gateway_ = std::make_unique<Gateway>(gopts, std::move(provider), cassette_);
}

fs::path Engine::rdir(std::uint32_t round) const { return round_dir(config_.paths.run_dir, round); }

bool Engine::stage_done(std::uint32_t round, Stage stage) const {
  return fs::exists(rdir(round) / ".stages" / std::string(to_string(stage)));
}

void Engine::require(std::uint32_t round, Stage stage) const {
  for (Stage s : kAllStages) {
    if (s == stage) return;
    if (!stage_done(round, s)) {
      throw Error("round " + std::to_string(round) + " stage " + std::string(to_string(stage)) +
                  " needs " + std::string(to_string(s)) + " first");
    }
  }
}

LlmClassifier Engine::classifier() {
  const auto tmpl = workspace_->store().active(std::string(kClassificationTemplate));
  if (!tmpl) throw Error("no active classification template");
  return LlmClassifier(*gateway_, render_classification_prompt(*tmpl, default_type_definitions()),
                       config_.gateway.model);
}

BadCasePool Engine::pool_for_round(std::uint32_t round) const {
  BadCasePool pool = initial_pool_;
  for (std::uint32_t r = 1; r <= round; ++r) {
    const fs::path delta = rdir(r) / "pool.delta";
    if (!fs::exists(delta)) continue;
    const BadCasePool part = pool_load(delta);
    for (const auto& c : part.cases()) pool.add(c);
  }
  return pool;
}

AbilityScoreboard Engine::scoreboard_before(std::uint32_t round) const {
  return scoreboard_from_json(read_json(rdir(round) / "scoreboard"));
}

AbilityScoreboard Engine::latest_scoreboard() const {
  for (std::uint32_t r = config_.rounds + 1; r >= 1; --r) {
    const fs::path dir = rdir(r);
    if (fs::exists(dir / "scoreboard.after")) {
      return scoreboard_from_json(read_json(dir / "scoreboard.after"));
    }
    if (fs::exists(dir / "scoreboard")) return scoreboard_from_json(read_json(dir / "scoreboard"));
  }
  return compute_scoreboard(ingest_file(config_.paths.eval, config_.paths.eval_format, 1));
}

BadCasePool Engine::latest_pool() {
  for (std::uint32_t r = config_.rounds + 1; r >= 1; --r) {
    if (stage_done(r, Stage::kIngest)) return pool_for_round(r);
  }
  BadCasePool pool = initial_pool_;
  const auto records = ingest_file(config_.paths.eval, config_.paths.eval_format, 1);
  std::optional<LlmClassifier> clf;
  for (const auto& b : extract_bad_cases(records)) {
    if (!clf && !type_map_.find(b.dimension)) clf.emplace(classifier());
    pool.add(classify(b, type_map_, clf ? &*clf : nullptr));
  }
  return pool;
}

BatchContext Engine::batch_context(std::size_t questions_per_seed) {
  ctx_scoreboard_ = latest_scoreboard();
  ctx_pool_ = latest_pool();
  BatchContext ctx;
  ctx.scoreboard = &ctx_scoreboard_;
  ctx.pool = &ctx_pool_;
  ctx.catalog = &catalog_;
  ctx.index = &index_;
  ctx.type_map = &type_map_;
  ctx.gateway = gateway_.get();
  if (config_.type_check) {
    ctx_classifier_.reset();
    ctx_classifier_.emplace(classifier());
    ctx.classifier = &*ctx_classifier_;
  }
  ctx.model = config_.gateway.model;
  ctx.seed = derive_seed(config_.sampling_seed, "ipo-review");
  ctx.sampler.floor = config_.score_floor;
  ctx.sampler.rule = config_.weight_rule;
  ctx.iou_threshold = config_.iou_threshold;
  ctx.format = config_.format;
  ctx.questions_per_seed = questions_per_seed;
  return ctx;
}

void Engine::ingest(std::uint32_t round) {
  const fs::path dir = rdir(round);
  std::vector<EvalRecord> records;
  AbilityScoreboard before;
  if (round == 1) {
    records = ingest_file(config_.paths.eval, config_.paths.eval_format, 1);
    before = compute_scoreboard(records);
  } else {
    const fs::path prev = rdir(round - 1);
    before = scoreboard_from_json(read_json(prev / "scoreboard.after"));
    if (config_.trainer.kind == TrainerKind::kExternal) {
      records = ingest_file(prev / "eval.out", config_.trainer.eval_format, round);
    }
  }
  std::vector<json> rows;
  for (const auto& r : records) rows.push_back(to_json(r));
  write_file_atomic(dir / "eval.in", jsonl(rows));
  write_file_atomic(dir / "scoreboard", to_json(before).dump(2) + "\n");

  const auto bad = extract_bad_cases(records);
  std::optional<LlmClassifier> clf;
  std::vector<json> delta;
  for (const auto& b : bad) {
    if (!clf && !type_map_.find(b.dimension)) clf.emplace(classifier());
    delta.push_back(to_json(classify(b, type_map_, clf ? &*clf : nullptr)));
  }
  write_file_atomic(dir / "pool.delta", jsonl(delta));
}

void Engine::sample(std::uint32_t round) {
  const AbilityScoreboard before = scoreboard_before(round);
  const BadCasePool pool = pool_for_round(round);
  const std::size_t k = config_.questions_per_seed;
  const std::size_t n = (config_.target_for_round(round) + k - 1) / k;
  SamplerOptions opts;
  opts.floor = config_.score_floor;
  opts.rule = config_.weight_rule;
  Rng rng(derive_seed(config_.sampling_seed, "round-" + std::to_string(round) + "-sample"));
  const auto seeds = build_query_seeds(before, pool, catalog_, index_, type_map_, n, opts, rng);
  std::vector<json> rows;
  for (const auto& s : seeds) rows.push_back(to_json(s));
  write_file_atomic(rdir(round) / "seeds", jsonl(rows));
}

namespace {

std::vector<QuerySeed> load_seeds(const fs::path& path) {
  std::vector<QuerySeed> seeds;
  for (const auto& row : read_jsonl(path)) seeds.push_back(query_seed_from_json(row));
  return seeds;
}

}  // namespace

void Engine::generate(std::uint32_t round) {
  const fs::path dir = rdir(round);
  const auto seeds = load_seeds(dir / "seeds");
  fs::create_directories(dir / "prompts");
  fs::create_directories(dir / "raw_responses");

  // The template is pinned on the first attempt so a resumed round renders
  // the same version even if IPO has since activated another.
  const fs::path pin_path = dir / "prompts" / "template.json";
  if (!fs::exists(pin_path)) {
    const auto active = workspace_->store().active(std::string(kGenerationTemplate));
    if (!active) throw Error("no active generation template");
    json pin = {{"template_id", active->template_id}, {"version", active->version}};
    write_file_atomic(pin_path, pin.dump(2) + "\n");
  }
  const PinnedTemplate pin = load_pin(pin_path);
  PromptTemplate tmpl = workspace_->store().get(pin.template_id, pin.version);
  tmpl.status = PromptStatus::kActive;

  RenderInputs inputs;
  inputs.type_defs = default_type_definitions();
  inputs.n_questions = config_.questions_per_seed;
  if (auto ex = workspace_->store().active(std::string(kBboxExampleTemplate))) {
    inputs.bbox_insert_example = ex->body;
  }

  std::vector<std::string> texts(seeds.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    inputs.annotation_text = render_annotation_text(catalog_.at(seeds[i].image_id));
    texts[i] = render(tmpl, seeds[i], inputs).final_text;
    const fs::path prompt_path = dir / "prompts" / (seed_name(seeds[i].index) + ".txt");
    if (!fs::exists(prompt_path)) write_file_atomic(prompt_path, texts[i]);
    if (!fs::exists(dir / "raw_responses" / (seed_name(seeds[i].index) + ".json"))) {
      pending.push_back(i);
    }
  }

  parallel_for(pending.size(), config_.gateway.max_in_flight, [&](std::size_t j) {
    const std::size_t i = pending[j];
    const Completion c =
        gateway_->complete(generation_request(config_.gateway.model, texts[i]));
    json raw = {{"digest", c.digest},
                {"text", c.text},
                {"prompt_tokens", c.usage.prompt_tokens},
                {"completion_tokens", c.usage.completion_tokens}};
    write_file_atomic(dir / "raw_responses" / (seed_name(seeds[i].index) + ".json"),
                      raw.dump(2) + "\n");
  });
}

void Engine::validate_round(std::uint32_t round) {
  const fs::path dir = rdir(round);
  const auto seeds = load_seeds(dir / "seeds");
  const PinnedTemplate pin = load_pin(dir / "prompts" / "template.json");
  std::optional<LlmClassifier> clf;
  if (config_.type_check) clf.emplace(classifier());
  ValidatorOptions vopts;
  vopts.iou_threshold = config_.iou_threshold;
  vopts.format = config_.format;
  vopts.mode = RunMode::kProduction;

  struct Row {
    std::size_t ordinal;
    json parsed;
    json report;
    std::optional<json> failure;
  };
  std::vector<std::vector<Row>> per_seed(seeds.size());
  parallel_for(seeds.size(), config_.gateway.max_in_flight, [&](std::size_t i) {
    const QuerySeed& seed = seeds[i];
    const json raw = read_json(dir / "raw_responses" / (seed_name(seed.index) + ".json"));
    QaOrigin origin;
    origin.id_prefix = "r" + std::to_string(round) + "-";
    origin.seed_index = seed.index;
    origin.image_id = seed.image_id;
    origin.qtype = seed.qtype;
    origin.round = round;
    origin.template_id = pin.template_id;
    origin.prompt_version = pin.version;
    origin.request_digest = raw.at("digest").get<std::string>();
    const ParseOutcome parsed = parse_output(raw.at("text").get<std::string>(), origin);
    const ImageAnnotation& ann = catalog_.at(seed.image_id);

    auto failure_of = [](const std::string& qa_id, const ValidationReport& r, bool stub) {
      std::string detail;
      for (const auto& [name, check] : r.checks) {
        if (check.status == CheckStatus::kFail) {
          detail = name + ": " + check.detail;
          break;
        }
      }
      return json{{"qa_id", qa_id},
                  {"failure_type", std::string(to_string(*r.verdict.failure_type))},
                  {"detail", detail},
                  {"stub", stub}};
    };
    auto& rows = per_seed[i];
    for (const auto& qa : parsed.items) {
      const ValidationReport report = validate_qa(qa, &ann, vopts, clf ? &*clf : nullptr);
      Row row{qa.ordinal, json{{"qa", to_json(qa)}}, to_json(report), std::nullopt};
      if (report.verdict.kind == VerdictKind::kAutoReject) {
        row.failure = failure_of(qa.qa_id, report, false);
      }
      rows.push_back(std::move(row));
    }
    for (const auto& stub : parsed.stubs) {
      const ValidationReport report = validate_stub(stub);
      rows.push_back(Row{stub.ordinal, json{{"stub", to_json(stub)}}, to_json(report),
                         failure_of(stub.qa_id, report, true)});
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.ordinal < b.ordinal; });
  });

  std::string parsed_out, reports_out, failures_out;
  for (const auto& rows : per_seed) {
    for (const auto& row : rows) {
      parsed_out += row.parsed.dump() + "\n";
      reports_out += row.report.dump() + "\n";
      if (row.failure) failures_out += row.failure->dump() + "\n";
    }
  }
  write_file_atomic(dir / "parsed", parsed_out);
  write_file_atomic(dir / "reports", reports_out);
  write_file_atomic(dir / "failures", failures_out);
}

void Engine::build_round(std::uint32_t round) {
  const fs::path dir = rdir(round);
  const auto parsed = read_jsonl(dir / "parsed");
  const auto reports = read_jsonl(dir / "reports");
  if (parsed.size() != reports.size()) throw Error("parsed and reports files disagree in length");
  std::vector<AcceptedQA> accepted;
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    if (!parsed[i].contains("qa")) continue;
    ValidationReport report = validation_report_from_json(reports[i]);
    if (report.verdict.kind != VerdictKind::kAccept) continue;
    accepted.push_back(AcceptedQA{generated_qa_from_json(parsed[i].at("qa")), std::move(report)});
  }
  const Dataset ds = build(accepted, config_.format);
  const std::string ext = dataset_extension(config_.format);
  write_dataset(ds, dir / ("dataset." + ext));

  std::vector<Dataset> parts;
  if (round > 1) {
    parts.push_back(load_dataset(rdir(round - 1) / ("dataset.merged." + ext), config_.format));
  }
  parts.push_back(ds);
  write_dataset(merge_datasets(parts), dir / ("dataset.merged." + ext));
}

void Engine::train(std::uint32_t round) {
  const fs::path dir = rdir(round);
  const AbilityScoreboard before = scoreboard_before(round);
  const std::string ext = dataset_extension(config_.format);
  AbilityScoreboard after;
  if (config_.trainer.kind == TrainerKind::kSimulated) {
    const Dataset ds = load_dataset(dir / ("dataset." + ext), config_.format);
    const auto added = added_per_dimension(before, manifest_of(ds).per_type, type_map_);
    Rng rng(derive_seed(config_.simulation_seed, "round-" + std::to_string(round) + "-train"));
    after = simulate_trainer(before, added, config_.trainer.simulated, rng);
  } else {
    const fs::path eval_out =
        run_external_trainer(config_.trainer.command, dir / ("dataset.merged." + ext),
                             dir / "eval.out", config_.trainer.timeout);
    after = compute_scoreboard(ingest_file(eval_out, config_.trainer.eval_format, round + 1));
  }
  write_file_atomic(dir / "scoreboard.after", to_json(after).dump(2) + "\n");
}

RoundManifest Engine::assemble_manifest(std::uint32_t round) const {
  const fs::path dir = rdir(round);
  const std::string ext = dataset_extension(config_.format);
  RoundManifest m;
  m.round = round;
  m.scoreboard_before = scoreboard_before(round);
  m.scoreboard_after = scoreboard_from_json(read_json(dir / "scoreboard.after"));
  m.sampling_weights =
      type_weights(m.scoreboard_before, type_map_, config_.score_floor, config_.weight_rule)
          .weights;
  const auto seeds = load_seeds(dir / "seeds");
  m.seeds_built = seeds.size();

  const auto parsed = read_jsonl(dir / "parsed");
  const auto reports = read_jsonl(dir / "reports");
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    if (!parsed[i].contains("qa")) {
      ++m.parse_failures;
      continue;
    }
    ++m.generated;
    const ValidationReport r = validation_report_from_json(reports[i]);
    if (r.verdict.kind == VerdictKind::kAccept) {
      ++m.accepted;
    } else {
      ++m.rejected;
      if (r.verdict.failure_type) ++m.rejected_by_type[*r.verdict.failure_type];
    }
  }

  const Dataset ds = load_dataset(dir / ("dataset." + ext), config_.format);
  for (const auto& [t, n] : manifest_of(ds).per_type) {
    if (n) m.accepted_by_type[t] = n;
  }
  m.format = config_.format;
  const std::string rname = "round_" + std::to_string(round);
  m.dataset = rname + "/dataset." + ext;
  m.merged_dataset = rname + "/dataset.merged." + ext;
  m.merged_count = load_dataset(dir / ("dataset.merged." + ext), config_.format).items.size();

  const PinnedTemplate pin = load_pin(dir / "prompts" / "template.json");
  m.template_id = pin.template_id;
  m.prompt_version = pin.version;
  for (const auto& seed : seeds) {
    const json raw = read_json(dir / "raw_responses" / (seed_name(seed.index) + ".json"));
    m.usage.prompt_tokens += raw.at("prompt_tokens").get<std::uint64_t>();
    m.usage.completion_tokens += raw.at("completion_tokens").get<std::uint64_t>();
  }
  if (!config_.gateway.prices.empty()) {
    const std::vector<UsageRecord> usage{{config_.gateway.model, m.usage}};
    m.cost = cost_report(usage, config_.gateway.prices);
  }
  return m;
}

void Engine::run_stage(std::uint32_t round, Stage stage) {
  if (round == 0) throw Error("rounds are numbered from 1");
  if (round > 1 && !fs::exists(rdir(round - 1) / "manifest")) {
    throw Error("round " + std::to_string(round - 1) + " has not finished");
  }
  require(round, stage);
  const fs::path dir = rdir(round);
  fs::create_directories(dir / ".stages");
  switch (stage) {
    case Stage::kIngest: ingest(round); break;
    case Stage::kSample: sample(round); break;
    case Stage::kGenerate: generate(round); break;
    case Stage::kValidate: validate_round(round); break;
    case Stage::kBuild: build_round(round); break;
    case Stage::kTrain: train(round); break;
  }
  write_file_atomic(dir / ".stages" / std::string(to_string(stage)), "");
}

RoundManifest Engine::run_round(std::uint32_t round, const EngineHooks& hooks) {
  const fs::path dir = rdir(round);
  if (fs::exists(dir / "manifest")) return round_manifest_from_json(read_json(dir / "manifest"));
  fs::create_directories(dir);

  json timing = json::object();
  if (fs::exists(dir / "timing.json")) timing = read_json(dir / "timing.json");
  write_file_atomic(dir / "status", "running\n");
  for (Stage stage : kAllStages) {
    if (stage_done(round, stage)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (hooks.before_stage) hooks.before_stage(round, stage);
      run_stage(round, stage);
    } catch (const std::exception& e) {
      write_file_atomic(dir / "status", "failed at " + std::string(to_string(stage)) + ": " +
                                            e.what() + "\n");
      throw StageError(round, stage, e.what());
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    timing[std::string(to_string(stage))] = timing.value(std::string(to_string(stage)), 0.0) +
                                            dt.count();
    write_file_atomic(dir / "timing.json", timing.dump(2) + "\n");
  }
  const RoundManifest m = assemble_manifest(round);
  write_file_atomic(dir / "manifest", to_json(m).dump(2) + "\n");
  write_file_atomic(dir / "status", "complete\n");
  return m;
}

std::vector<RoundManifest> Engine::run(const EngineHooks& hooks) {
  std::vector<RoundManifest> out;
  for (std::uint32_t r = 1; r <= config_.rounds; ++r) out.push_back(run_round(r, hooks));
  return out;
}

std::vector<RoundManifest> run_engine(const EngineConfig& config,
                                      std::shared_ptr<ChatProvider> provider,
                                      const EngineHooks& hooks) {
  Engine engine(config, std::move(provider));
  return engine.run(hooks);
}

std::optional<RoundManifest> resume_round(const fs::path& run_dir,
                                          std::shared_ptr<ChatProvider> provider) {
  Engine engine(load_engine_config(run_dir / "config.json"), std::move(provider));
  for (std::uint32_t r = 1; r <= engine.config().rounds; ++r) {
    if (!fs::exists(round_dir(engine.config().paths.run_dir, r) / "manifest")) {
      return engine.run_round(r);
    }
  }
  return std::nullopt;
}

std::vector<RoundManifest> load_manifests(const fs::path& run_dir) {
  std::vector<RoundManifest> out;
  for (std::uint32_t r = 1;; ++r) {
    const fs::path path = round_dir(run_dir, r) / "manifest";
    if (!fs::exists(path)) break;
    out.push_back(round_manifest_from_json(read_json(path)));
  }
  return out;
}

}  // namespace dataengine
