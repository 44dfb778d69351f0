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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any
// FAIL. Expected values are computed here from first principles, never by
// calling the code under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dataengine/abs_sampler.hpp"
#include "dataengine/dataset_builder.hpp"
#include "dataengine/embedding_index.hpp"
#include "dataengine/ipo_engine.hpp"
#include "dataengine/loop_orchestrator.hpp"
#include "dataengine/qa_validator.hpp"
#include "dataengine/synthetic.hpp"
#include "test_support.hpp"
#include "validator_corpus.hpp"

using namespace dataengine;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

// Collects failed expectations for one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::string out;
    for (const auto& s : ok() ? notes_ : failures_) out += (out.empty() ? "" : "; ") + s;
    if (failed_ > failures_.size()) out += "; +" + std::to_string(failed_ - failures_.size()) + " more";
    return out;
  }

 private:
  std::vector<std::string> failures_, notes_;
  std::size_t failed_ = 0;
};

std::string fmt(double x, int digits = 5) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << x;
  return s.str();
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// ---------------------------------------------------------------------------

void abs_weight_law(Checks& c) {
  const auto start = Clock::now();
  const std::array<QuestionType, 3> types = {QuestionType::kImageScene, QuestionType::kImageStyle,
                                             QuestionType::kImageTopic};
  AbilityScoreboard board;
  board.entries["image_scene"] = {20, 100};
  board.entries["image_style"] = {50, 100};
  board.entries["image_topic"] = {80, 100};
  const auto d = type_weights(board, LabelMap::defaults(), 0.05, WeightRule::kInverse, types);
  // 1/0.2 : 1/0.5 : 1/0.8, normalized.
  const double inv[3] = {1 / 0.2, 1 / 0.5, 1 / 0.8};
  const double sum = inv[0] + inv[1] + inv[2];
  const double rounded[3] = {0.60606, 0.24242, 0.15152};
  for (std::size_t i = 0; i < 3; ++i) {
    const double w = d.weights.count(types[i]) ? d.weights.at(types[i]) : -1;
    c.expect(std::abs(w - inv[i] / sum) < 1e-12, "weight " + fmt(w) + " != " + fmt(inv[i] / sum));
    c.expect(std::abs(w - rounded[i]) < 1e-5, "weight " + fmt(w) + " not within 1e-5 of " +
                                                fmt(rounded[i]));
  }
  Rng rng(20260101);
  std::map<QuestionType, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[draw_type(d, rng)];
  double worst = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    worst = std::max(worst, std::abs(counts[types[i]] / double(n) - inv[i] / sum));
  }
  c.expect(worst <= 0.01, "draw frequency off by " + fmt(worst));
  const double secs = seconds_since(start);
  c.expect(secs < 5, "took " + fmt(secs, 2) + " s");
  c.note("weights " + fmt(d.weights.at(types[0])) + "/" + fmt(d.weights.at(types[1])) + "/" +
         fmt(d.weights.at(types[2])) + ", max draw error " + fmt(worst, 4) + ", " +
         fmt(secs, 2) + " s");
}

// ---------------------------------------------------------------------------

std::vector<RoundManifest> simulated_run(const fs::path& world, const fs::path& run_dir,
                                         WeightRule rule) {
  EngineConfig cfg = testing::world_config(world, run_dir, 3, 900);
  cfg.weight_rule = rule;
  cfg.trainer.simulated.sigma = 0.0;
  cfg.gateway.synthetic_defect_rate = 0.1;
  cfg.gateway.max_in_flight = 4;
  return run_engine(cfg);
}

void closed_loop_targeting(Checks& c) {
  const auto start = Clock::now();
  testing::TempDir dir;
  SyntheticWorldOptions w;  // 18 dimensions spread evenly from 0.2 to 0.9
  w.images = 600;
  w.eval_items_per_dimension = 40;
  testing::write_world(dir / "world", w);

  const auto abs = simulated_run(dir / "world", dir / "abs", WeightRule::kInverse);
  const auto uni = simulated_run(dir / "world", dir / "uniform", WeightRule::kUniform);
  c.expect(abs.size() == 3 && uni.size() == 3, "expected three rounds per run");
  if (!c.ok()) return;

  const AbilityScoreboard& initial = abs[0].scoreboard_before;
  c.expect(initial.entries.size() == 18, "expected 18 dimensions");
  c.expect(initial == uni[0].scoreboard_before, "runs start from different scoreboards");
  std::vector<std::pair<double, std::string>> by_score;
  for (const auto& [dim, e] : initial.entries) by_score.push_back({e.score(), dim});
  std::sort(by_score.begin(), by_score.end());
  c.expect(by_score.front().first <= 0.25 && by_score.back().first >= 0.85,
           "initial scores do not span 0.2 to 0.9");

  auto weakest_gain = [&](const std::vector<RoundManifest>& run) {
    double g = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      const std::string& dim = by_score[i].second;
      g += run.back().scoreboard_after.entries.at(dim).score() - initial.entries.at(dim).score();
    }
    return g / 6;
  };
  const double g_abs = weakest_gain(abs), g_uni = weakest_gain(uni);
  const double rel = g_uni > 0 ? (g_abs - g_uni) / g_uni : 0;
  c.expect(g_uni > 0 && rel >= 0.20, "weakest-6 gain " + fmt(g_abs, 4) + " vs uniform " +
                                         fmt(g_uni, 4) + " (+" + fmt(100 * rel, 1) + "%)");

  const LabelMap map = LabelMap::defaults();
  for (std::size_t t = 0; t + 1 < abs.size(); ++t) {
    std::string best;
    double best_gain = -1;
    for (const auto& [dim, e] : abs[t].scoreboard_after.entries) {
      const double g = e.score() - abs[t].scoreboard_before.entries.at(dim).score();
      if (g > best_gain) best_gain = g, best = dim;
    }
    const QuestionType type = *map.find(best);
    const double now = abs[t].sampling_weights.at(type);
    const double next = abs[t + 1].sampling_weights.at(type);
    c.expect(next < now, "round " + std::to_string(t + 2) + " weight of " + best + " " +
                             fmt(next) + " did not drop from " + fmt(now));
  }
  const double secs = seconds_since(start);
  c.expect(secs < 30, "took " + fmt(secs, 1) + " s");
  c.note("weakest-6 gain " + fmt(g_abs, 4) + " vs uniform " + fmt(g_uni, 4) + " (+" +
         fmt(100 * rel, 1) + "%), " + fmt(secs, 1) + " s");
}

// ---------------------------------------------------------------------------

void nearest_neighbor_oracle(Checks& c) {
  const auto start = Clock::now();
  const std::size_t n = 1000, dim = 64;
  Rng rng(4242);
  std::vector<std::string> ids;
  std::vector<std::vector<double>> vs;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    // Small integer coordinates give exact duplicate directions now and then;
    // a few explicit copies make sure ties occur.
    for (double& x : v) x = static_cast<double>(rng.below(5)) - 2.0;
    ids.push_back("v" + std::to_string(100000 + (i * 7919) % n));
    vs.push_back(v);
  }
  for (std::size_t i = 0; i < 20; ++i) vs[n - 1 - i] = vs[i];
  for (std::size_t i = 0; i < 10; ++i) {
    vs[500 + i] = vs[20];
    for (double& x : vs[500 + i]) x *= 2.0 + i;  // same direction, other length
  }
  EmbeddingIndex index(dim);
  for (std::size_t i = 0; i < n; ++i) index.add(ids[i], vs[i]);

  // Exact oracle: coordinates are integers, so cosines compare exactly via
  // sign(dot) and dot^2 * |other|^2 in 64-bit integers.
  auto ivec = [&](std::size_t i) {
    std::vector<std::int64_t> v;
    for (double x : vs[i]) v.push_back(static_cast<std::int64_t>(x));
    return v;
  };
  auto idot = [](const std::vector<std::int64_t>& x, const std::vector<std::int64_t>& y) {
    std::int64_t s = 0;
    for (std::size_t d = 0; d < x.size(); ++d) s += x[d] * y[d];
    return s;
  };
  struct Hit {
    std::int64_t dot, norm2;
    std::string id;
  };
  // -1, 0, 1 as cos(x) <, ==, > cos(y).
  auto cmp = [](const Hit& x, const Hit& y) {
    const int sx = (x.dot > 0) - (x.dot < 0), sy = (y.dot > 0) - (y.dot < 0);
    if (sx != sy) return sx < sy ? -1 : 1;
    const __int128 lhs = static_cast<__int128>(x.dot) * x.dot * y.norm2;
    const __int128 rhs = static_cast<__int128>(y.dot) * y.dot * x.norm2;
    if (lhs == rhs) return 0;
    return ((lhs > rhs) == (sx > 0)) ? 1 : -1;
  };
  std::size_t anchors = 0, ties_seen = 0;
  for (std::size_t a = 0; a < n; a += 7) {
    const auto va = ivec(a);
    if (idot(va, va) == 0) continue;
    std::vector<Hit> hits;
    for (std::size_t i = 0; i < n; ++i) {
      const auto vi = ivec(i);
      if (i == a || idot(vi, vi) == 0) continue;
      hits.push_back({idot(va, vi), idot(vi, vi), ids[i]});
    }
    std::sort(hits.begin(), hits.end(), [&](const Hit& x, const Hit& y) {
      const int c = cmp(x, y);
      return c != 0 ? c > 0 : x.id < y.id;
    });
    hits.resize(10);
    for (std::size_t r = 1; r < hits.size(); ++r) ties_seen += cmp(hits[r], hits[r - 1]) == 0;
    const auto got = index.nearest(ids[a], 10);
    bool same = got.size() == hits.size();
    for (std::size_t r = 0; same && r < got.size(); ++r) same = got[r].image_id == hits[r].id;
    c.expect(same, "top-10 differs for anchor " + ids[a]);
    ++anchors;
  }
  c.expect(ties_seen > 0, "no ties exercised");
  const double secs = seconds_since(start);
  c.expect(secs < 5, "took " + fmt(secs, 2) + " s");
  c.note(std::to_string(anchors) + " anchors, " + std::to_string(ties_seen) +
         " tied neighbours, " + fmt(secs, 2) + " s");
}

// ---------------------------------------------------------------------------

void validator_fixtures(Checks& c) {
  const auto dir = testing::fixture("validator");
  const Catalog catalog = testing::load_validator_catalog(dir);
  GatewayOptions opts;
  opts.mode = GatewayMode::kReplay;
  Gateway gateway(opts, nullptr, Cassette::open(dir / "cassette.jsonl"));
  LlmClassifier clf(gateway, testing::corpus_classifier_prompt(), testing::kCorpusModel);

  std::map<std::string, std::size_t> faults;
  std::size_t fault_rejects = 0, clean = 0, clean_rejects = 0;
  for (const auto& item : testing::load_validator_corpus(dir / "corpus.jsonl")) {
    const ParseOutcome out = parse_output(item.text, testing::corpus_origin(item));
    if (out.blocks_detected != 1) {
      c.expect(false, item.id + " did not parse into one block");
      continue;
    }
    const ValidationReport r = out.items.empty()
                                   ? validate_stub(out.stubs.at(0))
                                   : validate_qa(out.items[0], catalog.find(item.image_id), {}, &clf);
    const bool rejected = r.verdict.kind == VerdictKind::kAutoReject;
    if (item.expected == "accept") {
      ++clean;
      clean_rejects += rejected;
      c.expect(r.verdict.kind == VerdictKind::kAccept, item.id + " was not accepted");
    } else {
      ++faults[item.expected];
      fault_rejects += rejected;
      c.expect(rejected && r.verdict.failure_type &&
                   to_string(*r.verdict.failure_type) == item.expected,
               item.id + " not rejected as " + item.expected);
    }
  }
  c.expect(faults["incorrect_bounding_box"] == 10, "corpus needs 10 box faults");
  c.expect(faults["illogical_question"] == 5, "corpus needs 5 structural faults");
  c.expect(faults["wrong_question_type"] == 5, "corpus needs 5 wrong-type faults");
  c.expect(clean == 30, "corpus needs 30 clean items");
  c.expect(clean_rejects == 0, std::to_string(clean_rejects) + " clean items rejected");
  // Two 40x40 boxes overlapping in a 20x20 square: 400 / (1600 + 1600 - 400).
  const double v = iou({0, 0, 40, 40}, {20, 20, 40, 40});
  c.expect(std::abs(v - 400.0 / 2800.0) < 1e-6, "IoU " + fmt(v, 8));
  c.note(std::to_string(fault_rejects) + "/20 faults rejected, " + std::to_string(clean_rejects) +
         "/30 clean rejected, IoU " + fmt(v, 6));
}

// ---------------------------------------------------------------------------

void ipo_ledger(Checks& c) {
  std::ifstream in(testing::fixture("ledger/failures.jsonl"));
  const auto cases = Ledger::parse(in).cases();
  auto expect_counts = [&](std::uint32_t v, std::array<std::size_t, 5> want) {
    const auto got = ledger_stats(cases, {v, v}, "generation");
    const FailureType order[] = {FailureType::kIncorrectBoundingBox, FailureType::kIllusion,
                                 FailureType::kIncorrect3dPerception,
                                 FailureType::kWrongQuestionType, FailureType::kIllogicalQuestion};
    std::string text;
    bool same = true;
    for (std::size_t i = 0; i < 5; ++i) {
      const std::size_t n = got.count(order[i]) ? got.at(order[i]) : 0;
      same = same && n == want[i];
      text += (i ? "," : "") + std::to_string(n);
    }
    c.expect(same, "v" + std::to_string(v) + " stats {" + text + "}");
    return text;
  };
  const std::string before = expect_counts(1, {24, 20, 15, 8, 8});
  const std::string after = expect_counts(2, {0, 2, 3, 0, 0});

  // Every ordered pair of states against a hand-written table.
  const IpoState states[] = {IpoState::kConflictCheck, IpoState::kBatchReview,
                             IpoState::kCorrection, IpoState::kConverged};
  const bool allowed[4][4] = {{false, true, false, false},
                              {false, false, true, true},
                              {true, true, false, false},
                              {false, false, false, false}};
  std::size_t rejected = 0;
  for (std::size_t f = 0; f < 4; ++f) {
    for (std::size_t t = 0; t < 4; ++t) {
      IpoSession s;
      s.state = states[f];
      bool threw = false;
      try {
        transition(s, states[t]);
      } catch (const IllegalTransitionError&) {
        threw = true;
      }
      c.expect(threw == !allowed[f][t], std::string(to_string(states[f])) + " -> " +
                                            std::string(to_string(states[t])));
      c.expect(s.state == (threw ? states[f] : states[t]), "state changed on a rejected move");
      rejected += threw;
    }
  }

  // Lineage: shipped versions, one approved conflict proposal, then a
  // version slipped in without a proposal must be flagged.
  testing::TempDir dir;
  auto ws = IpoWorkspace::open(dir / "ipo");
  c.expect(ws->audit_lineage().empty(), "shipped lineage has problems");
  GatewayOptions gopts;
  gopts.mode = GatewayMode::kLive;
  auto provider = std::make_shared<SyntheticChatProvider>(SyntheticProviderOptions{});
  Gateway gateway(gopts, provider, nullptr);
  const auto s = ws->start_session("generation", 1);
  const auto p = ws->run_conflict_check(s.session_id, gateway, "gpt-4");
  ws->decide_proposal(p.proposal_id, true, "acceptance");
  for (const auto& id : ws->store().template_ids()) {
    for (const auto& t : ws->store().versions(id)) {
      if (t.parent_version) c.expect(t.proposal_id.has_value(), id + " v" + std::to_string(t.version) +
                                                            " has no proposal");
    }
  }
  c.expect(ws->audit_lineage().empty(), "lineage problems after an approval");
  ws->store().register_version("generation", "rogue body", 1, "no proposal");
  c.expect(!ws->audit_lineage().empty(), "a version without a proposal went unnoticed");
  c.note("v1 {" + before + "}, v2 {" + after + "}, " + std::to_string(rejected) +
         "/16 transitions rejected, lineage sound");
}

// ---------------------------------------------------------------------------

EngineConfig determinism_config(const fs::path& world, const fs::path& run_dir,
                                GatewayMode mode, const fs::path& cassette) {
  EngineConfig cfg = testing::world_config(world, run_dir, 2, 60);
  cfg.gateway.mode = mode;
  cfg.gateway.cassette = cassette;
  cfg.gateway.synthetic_defect_rate = 0.2;
  cfg.gateway.max_in_flight = 4;
  return cfg;
}

std::vector<std::string> run_artifacts(const fs::path& run_dir, std::uint32_t rounds) {
  std::vector<std::string> out;
  for (std::uint32_t r = 1; r <= rounds; ++r) {
    const fs::path d = round_dir(run_dir, r);
    for (const char* f : {"manifest", "dataset.qmae", "dataset.merged.qmae"}) {
      out.push_back(fs::exists(d / f) ? read_file(d / f) : std::string("<missing>"));
    }
  }
  return out;
}

void determinism(Checks& c) {
  testing::TempDir dir;
  SyntheticWorldOptions w;
  w.images = 120;
  w.eval_items_per_dimension = 10;
  testing::write_world(dir / "world", w);
  const fs::path cassette = dir / "cassette.jsonl";
  run_engine(determinism_config(dir / "world", dir / "rec", GatewayMode::kRecord, cassette));
  run_engine(determinism_config(dir / "world", dir / "a", GatewayMode::kReplay, cassette));
  run_engine(determinism_config(dir / "world", dir / "b", GatewayMode::kReplay, cassette));
  const auto rec = run_artifacts(dir / "rec", 2);
  const auto a = run_artifacts(dir / "a", 2);
  const auto b = run_artifacts(dir / "b", 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.expect(a[i] != "<missing>", "artifact missing");
    c.expect(a[i] == b[i], "replay runs differ in artifact " + std::to_string(i));
    c.expect(a[i] == rec[i], "replay differs from the recording run in artifact " +
                                 std::to_string(i));
  }
  // The committed replay fixture, run twice.
  EngineConfig f1 = load_engine_config(testing::fixture("replay/config.json"));
  EngineConfig f2 = f1;
  f1.paths.run_dir = dir / "f1";
  f2.paths.run_dir = dir / "f2";
  run_engine(f1);
  run_engine(f2);
  c.expect(run_artifacts(dir / "f1", 1) == run_artifacts(dir / "f2", 1),
           "fixture replays differ");
  std::size_t bytes = 0;
  for (const auto& s : a) bytes += s.size();
  c.note("2 rounds x 3 files identical across record + 2 replays (" + std::to_string(bytes) +
         " bytes), fixture replay identical");
}

// ---------------------------------------------------------------------------

AcceptedQA synthetic_item(int i) {
  const std::string box = "[" + std::to_string(3 * i) + ", " + std::to_string(i % 7) + ", 30, 40]";
  AcceptedQA a;
  a.qa.origin.image_id = std::to_string(1000 + i);
  a.qa.origin.qtype = kAllQuestionTypes[static_cast<std::size_t>(i) % kQuestionTypeCount];
  a.qa.origin.round = 1;
  a.qa.origin.template_id = "generation";
  a.qa.origin.prompt_version = 2;
  a.qa.origin.request_digest = sha256_hex("item " + std::to_string(i / 3));
  a.qa.ordinal = static_cast<std::size_t>(i % 3);
  a.qa.qa_id = a.qa.origin.request_digest.substr(0, 8) + "-" + std::to_string(a.qa.ordinal);
  a.qa.question = "What is the object " + box + " doing in scene " + std::to_string(i) + "?";
  a.qa.choices = {"sitting " + box, "running", "it is \"quoted\"", "unicode é " + std::to_string(i)};
  a.qa.answer = static_cast<char>('A' + i % 4);
  a.qa.rationale = "Because " + box + " shows it.\nSecond line.";
  a.report.verdict = {VerdictKind::kAccept, std::nullopt};
  return a;
}

void format_round_trip(Checks& c) {
  std::vector<AcceptedQA> inputs;
  for (int i = 0; i < 100; ++i) inputs.push_back(synthetic_item(i));
  testing::TempDir dir;
  std::size_t spans = 0;
  for (QaFormat f : {QaFormat::kQmae, QaFormat::kQma}) {
    const std::string name = std::string(to_string(f));
    const Dataset built = build(inputs, f);
    const std::string first = write_dataset(built);
    write_file_atomic(dir / name, first);
    const Dataset parsed = load_dataset(dir / name);
    const std::string second = write_dataset(parsed);
    c.expect(built.items.size() == 100, name + " lost items");
    c.expect(parsed.format == f, name + " format not detected");
    c.expect(parsed.items == built.items, name + " items changed on parse");
    c.expect(first == second, name + " text is not a fixed point");
    for (const auto& item : parsed.items) {
      spans += contains_bbox_span(item.question);
      for (const auto& ch : item.choices) spans += contains_bbox_span(ch);
      if (item.rationale) spans += contains_bbox_span(*item.rationale);
    }
    // Independent scan of the emitted text for "[n, n, n, n]".
    static const std::regex box(R"(\[\s*-?\d+(\.\d+)?\s*(,\s*-?\d+(\.\d+)?\s*){3}\])");
    c.expect(!std::regex_search(first, box), name + " text still has a box span");
  }
  c.expect(spans == 0, std::to_string(spans) + " bbox spans emitted");
  c.note("100 items, QMAE and QMA fixed points, 0 bbox spans");
}

// ---------------------------------------------------------------------------

DatasetItem qma_item(const std::string& image, const std::string& question,
                     const std::string& answer) {
  DatasetItem d;
  d.image_id = image;
  d.question = question;
  d.choices = {answer, "x1", "x2", "x3"};
  d.answer = 'A';
  return d;
}

void diversity_metrics(Checks& c) {
  // Five copies of a 5-word question with answers "red car" x3 and "blue
  // car" x2; five 3-word "How many <animal>" questions with distinct
  // 2-word answers. By hand:
  //   unique questions 1 + 5 = 6, unique answers 2 + 5 = 7
  //   mean lengths (5*5 + 5*3) / 10 = 4, answers 2
  //   nouns in answers: car, bird, cat, dog = 4
  //   question pairs: 10 identical (0), 10 among the animals sharing
  //   "how many" (1 - 2/4 = 0.5), 25 across with no shared token (1);
  //   mean (0 + 5 + 25) / 45
  std::vector<DatasetItem> items;
  for (const char* a : {"red car", "red car", "red car", "blue car", "blue car"}) {
    items.push_back(qma_item("1", "What color is the car", a));
  }
  const char* animals[] = {"birds", "cats", "dogs", "foxes", "cows"};
  const char* answers[] = {"two birds", "three cats", "two dogs", "four cats", "one dog"};
  for (int i = 0; i < 5; ++i) {
    items.push_back(qma_item("2", std::string("How many ") + animals[i], answers[i]));
  }
  std::istringstream lex_text("car\nbird\ncat\ndog\n");
  const NounLexicon lex = NounLexicon::parse(lex_text);
  const DiversityReport r = diversity(items, lex);
  c.expect(r.instance_num == 10, "instance_num " + std::to_string(r.instance_num));
  c.expect(r.unique_q == 6, "unique_q " + std::to_string(r.unique_q));
  c.expect(r.unique_a == 7, "unique_a " + std::to_string(r.unique_a));
  c.expect(r.avg_len_q == 4.0, "avg_len_q " + fmt(r.avg_len_q));
  c.expect(r.avg_len_a == 2.0, "avg_len_a " + fmt(r.avg_len_a));
  c.expect(r.unique_nouns_a == 4, "nouns " + std::to_string(r.unique_nouns_a));
  c.expect(std::abs(r.mean_q_distance - 30.0 / 45.0) < 1e-12,
           "mean distance " + fmt(r.mean_q_distance, 8));

  const std::vector<DatasetItem> same(10, qma_item("1", "Is the cup on the table?", "yes"));
  const double d_same = diversity(same, lex).mean_q_distance;
  c.expect(d_same == 0.0, "identical questions give " + fmt(d_same));
  const std::vector<DatasetItem> pair = {qma_item("1", "red apple", "a"),
                                         qma_item("1", "blue sky", "b")};
  const double d_pair = diversity(pair, lex).mean_q_distance;
  c.expect(d_pair == 1.0, "disjoint pair gives " + fmt(d_pair));
  c.note("6/7 unique, lengths 4/2, 4 nouns, mean distance " + fmt(r.mean_q_distance) +
         ", identical 0, disjoint 1");
}

// ---------------------------------------------------------------------------

void gateway_hermeticity(Checks& c) {
  // Any attempt to reach a provider would go to a closed port.
  setenv("DATAENGINE_LLM_ENDPOINT", "http://127.0.0.1:9/v1/chat/completions", 1);
  testing::TempDir dir;
  EngineConfig cfg = load_engine_config(testing::fixture("replay/config.json"));
  cfg.paths.run_dir = dir / "run";
  const auto ms = run_engine(cfg);
  c.expect(ms.size() == 1 && ms[0].generated > 0, "replay round produced nothing");
  const auto expected = nlohmann::json::parse(
      read_file(testing::fixture("replay/expected_manifest.json")));
  c.expect(!ms.empty() && to_json(ms[0]) == expected, "replay manifest differs from the recording");

  // A cassette missing one reply.
  std::string cassette = read_file(testing::fixture("replay/cassette.jsonl"));
  cassette.pop_back();
  cassette.erase(cassette.rfind('\n') + 1);
  write_file_atomic(dir / "short.jsonl", cassette);
  cfg.gateway.cassette = dir / "short.jsonl";
  cfg.paths.run_dir = dir / "miss";
  std::string outcome = "no error";
  try {
    run_engine(cfg);
  } catch (const StageError& e) {
    outcome = e.what();
    c.expect(outcome.find("replay cassette has no entry") != std::string::npos,
             "stage failed for another reason: " + outcome);
  }
  c.expect(outcome != "no error", "a missing reply went unnoticed");

  GatewayOptions opts;
  opts.mode = GatewayMode::kReplay;
  Gateway gateway(opts, nullptr, std::make_shared<Cassette>());
  ChatRequest req;
  req.model = "gpt-4";
  req.messages = {{Role::kUser, "never recorded"}};
  bool miss = false;
  try {
    gateway.complete(req);
  } catch (const ReplayMissError&) {
    miss = true;
  }
  c.expect(miss, "an unrecorded request did not raise ReplayMissError");
  c.note("replay round matches the recording with no provider; miss raises ReplayMissError");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Checks&)>>> criteria = {
      {"abs_weight_law", abs_weight_law},
      {"closed_loop_targeting", closed_loop_targeting},
      {"nearest_neighbor_oracle", nearest_neighbor_oracle},
      {"validator_fixtures", validator_fixtures},
      {"ipo_ledger", ipo_ledger},
      {"determinism", determinism},
      {"format_round_trip", format_round_trip},
      {"diversity_metrics", diversity_metrics},
      {"gateway_hermeticity", gateway_hermeticity},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Checks c;
    try {
      run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("threw: ") + e.what());
    }
    std::printf("%s %s: %s\n", c.ok() ? "PASS" : "FAIL", name.c_str(), c.summary().c_str());
    std::fflush(stdout);
    failed += !c.ok();
  }
  return failed == 0 ? 0 : 1;
}
