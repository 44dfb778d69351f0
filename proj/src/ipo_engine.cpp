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

#include "dataengine/ipo_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "dataengine/shipped_assets.hpp"

namespace dataengine {

using nlohmann::json;

json to_json(const FailureCase& c) {
  return {{"qa_id", c.qa_id},
          {"failure_type", to_string(c.failure_type)},
          {"explanation", c.explanation},
          {"tagger", c.tagger},
          {"template_id", c.template_id},
          {"prompt_version", c.prompt_version},
          {"session_id", c.session_id},
          {"timestamp", c.timestamp}};
}

FailureCase failure_case_from_json(const json& j) {
  FailureCase c;
  c.qa_id = j.at("qa_id").get<std::string>();
  c.failure_type = parse_failure_type(j.at("failure_type").get<std::string>());
  c.explanation = j.at("explanation").get<std::string>();
  c.tagger = j.at("tagger").get<std::string>();
  c.template_id = j.value("template_id", "");
  c.prompt_version = j.at("prompt_version").get<std::uint32_t>();
  c.session_id = j.value("session_id", "");
  c.timestamp = j.value("timestamp", "");
  return c;
}

Ledger Ledger::parse(std::istream& in) {
  Ledger ledger;
  for_each_line(in, [&](const std::string& line, std::size_t number) {
    try {
      ledger.cases_.push_back(failure_case_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(std::string("ledger: ") + e.what(), number);
    }
  });
  return ledger;
}

Ledger Ledger::open(const std::filesystem::path& path) {
  Ledger ledger;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    ledger = parse(in);
  }
  ledger.path_ = path;
  return ledger;
}

void Ledger::append(const FailureCase& c) {
  if (path_) append_line(*path_, to_json(c).dump());
  cases_.push_back(c);
}

std::map<FailureType, std::size_t> ledger_stats(std::span<const FailureCase> cases,
                                                VersionRange range,
                                                const std::string& template_id) {
  std::map<FailureType, std::size_t> out;
  for (FailureType t : kAllFailureTypes) out[t] = 0;
  for (const auto& c : cases) {
    if (c.prompt_version < range.min || c.prompt_version > range.max) continue;
    if (!template_id.empty() && c.template_id != template_id) continue;
    ++out[c.failure_type];
  }
  return out;
}

std::string_view to_string(IpoState state) {
  switch (state) {
    case IpoState::kConflictCheck: return "conflict_check";
    case IpoState::kBatchReview: return "batch_review";
    case IpoState::kCorrection: return "correction";
    case IpoState::kConverged: return "converged";
  }
  return "conflict_check";
}

IpoState parse_ipo_state(std::string_view text) {
  for (IpoState s : {IpoState::kConflictCheck, IpoState::kBatchReview, IpoState::kCorrection,
                     IpoState::kConverged}) {
    if (to_string(s) == text) return s;
  }
  throw Error("unknown session state '" + std::string(text) + "'");
}

bool is_legal_transition(IpoState from, IpoState to) {
  switch (from) {
    case IpoState::kConflictCheck: return to == IpoState::kBatchReview;
    case IpoState::kBatchReview: return to == IpoState::kConverged || to == IpoState::kCorrection;
    // Back to BatchReview when the correction is rejected.
    case IpoState::kCorrection: return to == IpoState::kConflictCheck || to == IpoState::kBatchReview;
    case IpoState::kConverged: return false;
  }
  return false;
}

void transition(IpoSession& session, IpoState to) {
  if (!is_legal_transition(session.state, to)) {
    throw IllegalTransitionError("session " + session.session_id + " cannot move from " +
                                 std::string(to_string(session.state)) + " to " +
                                 std::string(to_string(to)));
  }
  session.state = to;
}

json to_json(const IpoSession& s) {
  json history = json::array();
  for (const auto& h : s.history) {
    history.push_back(
        {{"version", h.version}, {"batch_id", h.batch_id}, {"failure_rate", h.failure_rate}});
  }
  return {{"session_id", s.session_id},
          {"template_id", s.template_id},
          {"start_version", s.start_version},
          {"current_version", s.current_version},
          {"state", to_string(s.state)},
          {"batch_size", s.batch_size},
          {"theta", s.theta},
          {"history", history},
          {"pending_proposal", s.pending_proposal ? json(*s.pending_proposal) : json(nullptr)},
          {"batch_id", s.batch_id ? json(*s.batch_id) : json(nullptr)},
          {"batches_started", s.batches_started}};
}

IpoSession ipo_session_from_json(const json& j) {
  IpoSession s;
  s.session_id = j.at("session_id").get<std::string>();
  s.template_id = j.at("template_id").get<std::string>();
  s.start_version = j.at("start_version").get<std::uint32_t>();
  s.current_version = j.at("current_version").get<std::uint32_t>();
  s.state = parse_ipo_state(j.at("state").get<std::string>());
  s.batch_size = j.at("batch_size").get<std::size_t>();
  s.theta = j.at("theta").get<double>();
  for (const auto& h : j.at("history")) {
    s.history.push_back({h.at("version").get<std::uint32_t>(), h.at("batch_id").get<std::string>(),
                         h.at("failure_rate").get<double>()});
  }
  if (!j.at("pending_proposal").is_null()) s.pending_proposal = j["pending_proposal"].get<std::string>();
  if (!j.at("batch_id").is_null()) s.batch_id = j["batch_id"].get<std::string>();
  s.batches_started = j.value("batches_started", 0u);
  return s;
}

std::string_view to_string(ProposalStatus status) {
  switch (status) {
    case ProposalStatus::kPending: return "pending";
    case ProposalStatus::kApproved: return "approved";
    case ProposalStatus::kRejected: return "rejected";
    case ProposalStatus::kNoChange: return "no_change";
  }
  return "pending";
}

std::string_view to_string(ProposalKind kind) {
  switch (kind) {
    case ProposalKind::kConflictCheck: return "conflict_check";
    case ProposalKind::kCorrection: return "correction";
    case ProposalKind::kShipped: return "shipped";
  }
  return "conflict_check";
}

namespace {

ProposalStatus parse_proposal_status(std::string_view text) {
  for (ProposalStatus s : {ProposalStatus::kPending, ProposalStatus::kApproved,
                           ProposalStatus::kRejected, ProposalStatus::kNoChange}) {
    if (to_string(s) == text) return s;
  }
  throw Error("unknown proposal status '" + std::string(text) + "'");
}

ProposalKind parse_proposal_kind(std::string_view text) {
  for (ProposalKind k :
       {ProposalKind::kConflictCheck, ProposalKind::kCorrection, ProposalKind::kShipped}) {
    if (to_string(k) == text) return k;
  }
  throw Error("unknown proposal kind '" + std::string(text) + "'");
}

ReviewStatus parse_review_status(std::string_view text) {
  for (ReviewStatus s : {ReviewStatus::kQueued, ReviewStatus::kAutoFailed, ReviewStatus::kFailed,
                         ReviewStatus::kCleared}) {
    if (to_string(s) == text) return s;
  }
  throw Error("unknown review status '" + std::string(text) + "'");
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

json to_json(const PromptProposal& p) {
  return {{"proposal_id", p.proposal_id},
          {"session_id", p.session_id},
          {"kind", to_string(p.kind)},
          {"template_id", p.template_id},
          {"base_version", p.base_version},
          {"suggested_body", p.suggested_body},
          {"llm_rationale", p.llm_rationale},
          {"status", to_string(p.status)},
          {"decider", optional_json(p.decider)},
          {"resulting_version", optional_json(p.resulting_version)},
          {"request_digest", p.request_digest}};
}

PromptProposal prompt_proposal_from_json(const json& j) {
  PromptProposal p;
  p.proposal_id = j.at("proposal_id").get<std::string>();
  p.session_id = j.at("session_id").get<std::string>();
  p.kind = parse_proposal_kind(j.at("kind").get<std::string>());
  p.template_id = j.at("template_id").get<std::string>();
  p.base_version = j.at("base_version").get<std::uint32_t>();
  p.suggested_body = j.at("suggested_body").get<std::string>();
  p.llm_rationale = j.at("llm_rationale").get<std::string>();
  p.status = parse_proposal_status(j.at("status").get<std::string>());
  if (!j.at("decider").is_null()) p.decider = j["decider"].get<std::string>();
  if (!j.at("resulting_version").is_null()) {
    p.resulting_version = j["resulting_version"].get<std::uint32_t>();
  }
  p.request_digest = j.value("request_digest", "");
  return p;
}

std::optional<std::string> extract_fenced_body(std::string_view reply, std::string* rest) {
  const auto open = reply.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  auto body_start = reply.find('\n', open);
  if (body_start == std::string_view::npos) return std::nullopt;
  const auto info = trim(reply.substr(open + 3, body_start - open - 3));
  if (!info.empty() && to_lower(info) != "prompt" && to_lower(info) != "text") return std::nullopt;
  ++body_start;
  // Closing fence must start a line.
  std::size_t close = body_start;
  while (true) {
    close = reply.find("```", close);
    if (close == std::string_view::npos) return std::nullopt;
    if (close == body_start || reply[close - 1] == '\n') break;
    close += 3;
  }
  std::string body(reply.substr(body_start, close - body_start));
  if (!body.empty() && body.back() == '\n') body.pop_back();
  if (rest) {
    const auto after = reply.find('\n', close);
    const std::string before = trim(reply.substr(0, open));
    const std::string tail =
        trim(after == std::string_view::npos ? std::string_view() : reply.substr(after + 1));
    *rest = before.empty() || tail.empty() ? before + tail : before + "\n" + tail;
  }
  return body;
}

std::string_view to_string(ReviewStatus status) {
  switch (status) {
    case ReviewStatus::kQueued: return "queued";
    case ReviewStatus::kAutoFailed: return "auto_failed";
    case ReviewStatus::kFailed: return "failed";
    case ReviewStatus::kCleared: return "cleared";
  }
  return "queued";
}

json to_json(const ReviewBatch& b) {
  json items = json::array();
  for (const auto& it : b.items) {
    items.push_back({{"qa_id", it.qa_id},
                     {"qa", it.qa ? to_json(*it.qa) : json(nullptr)},
                     {"stub", it.stub ? to_json(*it.stub) : json(nullptr)},
                     {"report", to_json(it.report)},
                     {"status", to_string(it.status)},
                     {"reviewer", optional_json(it.reviewer)}});
  }
  return {{"batch_id", b.batch_id},   {"session_id", b.session_id},
          {"version", b.version},     {"seeds_total", b.seeds_total},
          {"seeds_done", b.seeds_done}, {"items", items}};
}

ReviewBatch review_batch_from_json(const json& j) {
  ReviewBatch b;
  b.batch_id = j.at("batch_id").get<std::string>();
  b.session_id = j.at("session_id").get<std::string>();
  b.version = j.at("version").get<std::uint32_t>();
  b.seeds_total = j.at("seeds_total").get<std::size_t>();
  b.seeds_done = j.at("seeds_done").get<std::size_t>();
  for (const auto& it : j.at("items")) {
    ReviewItem item;
    item.qa_id = it.at("qa_id").get<std::string>();
    if (!it.at("qa").is_null()) item.qa = generated_qa_from_json(it["qa"]);
    if (!it.at("stub").is_null()) item.stub = parse_stub_from_json(it["stub"]);
    item.report = validation_report_from_json(it.at("report"));
    item.status = parse_review_status(it.at("status").get<std::string>());
    if (!it.at("reviewer").is_null()) item.reviewer = it["reviewer"].get<std::string>();
    b.items.push_back(std::move(item));
  }
  return b;
}

ChatRequest generation_request(const std::string& model, const std::string& prompt_text) {
  ChatRequest req;
  req.model = model;
  req.temperature = kGenerationTemperature;
  req.max_tokens = 2048;
  req.messages.push_back({Role::kUser, prompt_text});
  return req;
}

IpoWorkspace::IpoWorkspace(std::filesystem::path dir) : dir_(std::move(dir)), clock_(utc_now) {}

std::unique_ptr<IpoWorkspace> IpoWorkspace::open(const std::filesystem::path& dir) {
  std::unique_ptr<IpoWorkspace> ws(new IpoWorkspace(dir));
  std::filesystem::create_directories(dir / "ipo" / "sessions");
  std::filesystem::create_directories(dir / "ipo" / "batches");
  ws->store_ = PromptStore::open(dir / "prompts");
  ws->ledger_ = Ledger::open(dir / "ipo" / "ledger.jsonl");

  const auto proposals_path = dir / "ipo" / "proposals.jsonl";
  if (std::filesystem::exists(proposals_path)) {
    std::ifstream in(proposals_path);
    for_each_line(in, [&](const std::string& line, std::size_t number) {
      try {
        ws->proposals_.push_back(prompt_proposal_from_json(json::parse(line)));
      } catch (const std::exception& e) {
        throw ParseError(std::string("proposals: ") + e.what(), number);
      }
    });
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir / "ipo" / "sessions")) {
    if (entry.path().extension() != ".json") continue;
    auto s = ipo_session_from_json(json::parse(read_file(entry.path())));
    ws->sessions_[s.session_id] = std::move(s);
  }
  ws->install_shipped_templates();
  return ws;
}

void IpoWorkspace::install_shipped_templates() {
  auto install_root = [&](std::string_view id, std::string_view body) {
    if (store_.contains(std::string(id))) return;
    auto t = store_.register_version(std::string(id), std::string(body), std::nullopt, "shipped");
    store_.activate(t.template_id, t.version);
  };
  if (!store_.contains(std::string(kGenerationTemplate))) {
    const std::string id(kGenerationTemplate);
    auto v1 = store_.register_version(id, std::string(assets::kGenerationOriginalPrompt),
                                      std::nullopt, "shipped original");
    store_.activate(id, v1.version);
    auto v2 = store_.register_version(id, std::string(assets::kGenerationFinalPrompt), v1.version,
                                      "shipped after prompt optimization",
                                      std::string(kShippedProposalId));
    store_.activate(id, v2.version);
    const bool recorded = std::any_of(proposals_.begin(), proposals_.end(), [](const auto& p) {
      return p.proposal_id == kShippedProposalId;
    });
    if (!recorded) {
      PromptProposal p;
      p.proposal_id = std::string(kShippedProposalId);
      p.kind = ProposalKind::kShipped;
      p.template_id = id;
      p.base_version = v1.version;
      p.suggested_body = v2.body;
      p.llm_rationale = "shipped template";
      p.status = ProposalStatus::kApproved;
      p.decider = "shipped";
      p.resulting_version = v2.version;
      proposals_.push_back(std::move(p));
      save_proposals();
    }
  }
  install_root(kClassificationTemplate, assets::kClassificationPrompt);
  install_root(kConflictCheckTemplate, assets::kConflictCheckPrompt);
  install_root(kFailureCorrectionTemplate, assets::kFailureCorrectionPrompt);
  install_root(kBboxExampleTemplate, assets::kBboxInsertExample);
}

void IpoWorkspace::save_session(const IpoSession& s) const {
  write_file_atomic(dir_ / "ipo" / "sessions" / (s.session_id + ".json"), to_json(s).dump(2) + "\n");
}

void IpoWorkspace::save_proposals() const {
  std::string out;
  for (const auto& p : proposals_) out += to_json(p).dump() + "\n";
  write_file_atomic(dir_ / "ipo" / "proposals.jsonl", out);
}

void IpoWorkspace::save_batch(const ReviewBatch& b) const {
  write_file_atomic(dir_ / "ipo" / "batches" / (b.batch_id + ".json"), to_json(b).dump(2) + "\n");
}

ReviewBatch IpoWorkspace::load_batch(const std::string& batch_id) const {
  const auto path = dir_ / "ipo" / "batches" / (batch_id + ".json");
  if (!std::filesystem::exists(path)) throw IpoError("no review batch " + batch_id);
  return review_batch_from_json(json::parse(read_file(path)));
}

IpoSession& IpoWorkspace::session_ref(const std::string& session_id) {
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw IpoError("unknown session " + session_id);
  return it->second;
}

PromptProposal& IpoWorkspace::proposal_ref(const std::string& proposal_id) {
  for (auto& p : proposals_) {
    if (p.proposal_id == proposal_id) return p;
  }
  throw IpoError("unknown proposal " + proposal_id);
}

IpoSession IpoWorkspace::start_session(const std::string& template_id, std::uint32_t version,
                                       std::size_t batch_size, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw IpoError("threshold must lie in (0, 1]");
  if (batch_size == 0) throw IpoError("batch size must be at least 1");
  std::lock_guard lock(mu_);
  store_.get(template_id, version);  // throws when missing
  char id[32];
  std::snprintf(id, sizeof id, "ipo-%04zu", sessions_.size() + 1);
  IpoSession s;
  s.session_id = id;
  s.template_id = template_id;
  s.start_version = version;
  s.current_version = version;
  s.state = IpoState::kConflictCheck;
  s.batch_size = batch_size;
  s.theta = theta;
  save_session(s);
  sessions_[s.session_id] = s;
  return s;
}

IpoSession IpoWorkspace::session(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw IpoError("unknown session " + session_id);
  return it->second;
}

std::vector<IpoSession> IpoWorkspace::sessions() const {
  std::lock_guard lock(mu_);
  std::vector<IpoSession> out;
  for (const auto& [id, s] : sessions_) out.push_back(s);
  return out;
}

namespace {

std::string next_proposal_id(const std::vector<PromptProposal>& proposals,
                             const std::string& session_id) {
  std::size_t n = 0;
  for (const auto& p : proposals) n += p.session_id == session_id;
  return session_id + "-p" + std::to_string(n + 1);
}

std::string template_body(const PromptStore& store, std::string_view id) {
  auto t = store.active(std::string(id));
  if (!t) throw IpoError("no active version of template " + std::string(id));
  return t->body;
}

// A suggested body is usable when it parses, keeps to the known
// placeholders and actually changes the prompt.
bool usable_body(const std::optional<std::string>& body, const std::string& base,
                 std::string* why) {
  if (!body) {
    *why = "reply has no fenced prompt block";
    return false;
  }
  try {
    validate_placeholders(*body);
  } catch (const UnknownPlaceholderError& e) {
    *why = e.what();
    return false;
  }
  if (trim(*body).empty()) {
    *why = "suggested prompt is empty";
    return false;
  }
  if (*body == base) {
    *why = "suggested prompt equals the current one";
    return false;
  }
  return true;
}

}  // namespace

PromptProposal IpoWorkspace::run_conflict_check(const std::string& session_id, Gateway& gateway,
                                                const std::string& model) {
  std::lock_guard lock(mu_);
  IpoSession& s = session_ref(session_id);
  if (s.state != IpoState::kConflictCheck) {
    throw IllegalTransitionError("conflict check needs state conflict_check, session is " +
                                 std::string(to_string(s.state)));
  }
  if (s.pending_proposal) throw IpoError("proposal " + *s.pending_proposal + " awaits a decision");
  const std::string base = store_.get(s.template_id, s.current_version).body;

  ChatRequest req;
  req.model = model;
  req.temperature = kClassificationTemperature;
  req.max_tokens = 4096;
  req.messages.push_back({Role::kSystem, template_body(store_, kConflictCheckTemplate)});
  req.messages.push_back({Role::kUser, base});
  const Completion reply = gateway.complete(req);

  PromptProposal p;
  p.proposal_id = next_proposal_id(proposals_, session_id);
  p.session_id = session_id;
  p.kind = ProposalKind::kConflictCheck;
  p.template_id = s.template_id;
  p.base_version = s.current_version;
  p.request_digest = reply.digest;

  std::string rest, why;
  const auto body = extract_fenced_body(reply.text, &rest);
  if (!body && to_lower(reply.text).find("no conflicts found") != std::string::npos) {
    p.status = ProposalStatus::kNoChange;
    p.llm_rationale = trim(reply.text);
  } else if (usable_body(body, base, &why)) {
    p.suggested_body = *body;
    p.llm_rationale = rest;
    p.status = ProposalStatus::kPending;
  } else {
    p.status = ProposalStatus::kNoChange;
    p.llm_rationale = "unparseable: " + why;
  }

  if (p.status == ProposalStatus::kPending) {
    s.pending_proposal = p.proposal_id;
  } else {
    transition(s, IpoState::kBatchReview);
  }
  proposals_.push_back(p);
  save_proposals();
  save_session(s);
  return p;
}

PromptProposal IpoWorkspace::decide_proposal(const std::string& proposal_id, bool approve,
                                             const std::string& decider) {
  if (trim(decider).empty()) throw IpoError("a decision needs a decider");
  std::lock_guard lock(mu_);
  PromptProposal& p = proposal_ref(proposal_id);
  if (p.status != ProposalStatus::kPending) {
    throw IpoError("proposal " + proposal_id + " is already " + std::string(to_string(p.status)));
  }
  IpoSession& s = session_ref(p.session_id);
  if (s.pending_proposal != proposal_id) {
    throw IpoError("proposal " + proposal_id + " is not the session's open proposal");
  }

  IpoSession next = s;
  if (p.kind == ProposalKind::kConflictCheck) {
    transition(next, IpoState::kBatchReview);
  } else {
    transition(next, approve ? IpoState::kConflictCheck : IpoState::kBatchReview);
  }
  if (approve) {
    auto t = store_.register_version(p.template_id, p.suggested_body, p.base_version,
                                     std::string(to_string(p.kind)) + " proposal " + proposal_id,
                                     proposal_id);
    p.resulting_version = t.version;
    next.current_version = t.version;
  }
  p.status = approve ? ProposalStatus::kApproved : ProposalStatus::kRejected;
  p.decider = decider;
  next.pending_proposal.reset();
  s = std::move(next);
  save_proposals();
  save_session(s);
  return p;
}

PromptProposal IpoWorkspace::propose_correction(const std::string& session_id, Gateway& gateway,
                                                const std::string& model,
                                                std::size_t k_examples) {
  if (k_examples == 0) throw IpoError("at least one failure example is required");
  std::lock_guard lock(mu_);
  IpoSession& s = session_ref(session_id);
  if (s.state != IpoState::kCorrection) {
    throw IllegalTransitionError("correction needs state correction, session is " +
                                 std::string(to_string(s.state)));
  }
  if (s.pending_proposal) throw IpoError("proposal " + *s.pending_proposal + " awaits a decision");

  std::vector<const FailureCase*> examples;
  for (const auto& c : ledger_.cases()) {
    if (c.template_id == s.template_id && c.prompt_version == s.current_version) {
      examples.push_back(&c);
      if (examples.size() == k_examples) break;
    }
  }
  if (examples.empty()) {
    throw IpoError("ledger has no failure cases for " + s.template_id + " v" +
                   std::to_string(s.current_version));
  }

  std::optional<ReviewBatch> batch;
  if (s.batch_id) batch = load_batch(*s.batch_id);
  const std::string base = store_.get(s.template_id, s.current_version).body;
  std::ostringstream user;
  user << "Current prompt:\n```prompt\n" << base << "\n```\n\nFailure cases:\n";
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const FailureCase& c = *examples[i];
    user << "\nCase " << i + 1 << "\n";
    const ReviewItem* item = nullptr;
    if (batch) {
      for (const auto& it : batch->items) {
        if (it.qa_id == c.qa_id) item = &it;
      }
    }
    if (item && item->qa) {
      user << "Question: " << item->qa->question << "\nChoices:\n";
      for (std::size_t k = 0; k < item->qa->choices.size(); ++k) {
        user << static_cast<char>('A' + k) << ". " << item->qa->choices[k] << "\n";
      }
      user << "Answer: " << item->qa->answer << "\n";
      if (!item->qa->rationale.empty()) user << "Rationale: " << item->qa->rationale << "\n";
    } else if (item && item->stub) {
      user << "Output:\n" << item->stub->raw_block;
    }
    user << "Failure type: " << to_string(c.failure_type) << "\n";
    user << "Explanation: " << c.explanation << "\n";
  }

  ChatRequest req;
  req.model = model;
  req.temperature = kGenerationTemperature;
  req.max_tokens = 4096;
  req.messages.push_back({Role::kSystem, template_body(store_, kFailureCorrectionTemplate)});
  req.messages.push_back({Role::kUser, user.str()});
  const Completion reply = gateway.complete(req);

  PromptProposal p;
  p.proposal_id = next_proposal_id(proposals_, session_id);
  p.session_id = session_id;
  p.kind = ProposalKind::kCorrection;
  p.template_id = s.template_id;
  p.base_version = s.current_version;
  p.request_digest = reply.digest;
  std::string rest, why;
  const auto body = extract_fenced_body(reply.text, &rest);
  if (usable_body(body, base, &why)) {
    p.suggested_body = *body;
    p.llm_rationale = rest;
    p.status = ProposalStatus::kPending;
    s.pending_proposal = p.proposal_id;
  } else {
    p.status = ProposalStatus::kNoChange;
    p.llm_rationale = "unparseable: " + why;
    transition(s, IpoState::kBatchReview);
  }
  proposals_.push_back(p);
  save_proposals();
  save_session(s);
  return p;
}

ReviewBatch IpoWorkspace::generate_review_batch(const std::string& session_id,
                                                const BatchContext& ctx) {
  if (!ctx.scoreboard || !ctx.pool || !ctx.catalog || !ctx.index || !ctx.type_map ||
      !ctx.gateway) {
    throw IpoError("batch context is incomplete");
  }
  std::lock_guard lock(mu_);
  IpoSession& s = session_ref(session_id);
  if (s.state != IpoState::kBatchReview) {
    throw IllegalTransitionError("review batches need state batch_review, session is " +
                                 std::string(to_string(s.state)));
  }
  if (s.batch_size == 0) throw IpoError("batch size must be at least 1");

  const bool consumed =
      s.batch_id && !s.history.empty() && s.history.back().batch_id == *s.batch_id;
  ReviewBatch b;
  if (s.batch_id && !consumed) {
    b = load_batch(*s.batch_id);
    if (b.complete()) return b;
  } else {
    ++s.batches_started;
    b.batch_id = session_id + "-b" + std::to_string(s.batches_started);
    b.session_id = session_id;
    b.version = s.current_version;
    b.seeds_total = s.batch_size;
    s.batch_id = b.batch_id;
    save_batch(b);
    save_session(s);
  }

  Rng rng(derive_seed(ctx.seed, b.batch_id));
  const auto seeds = build_query_seeds(*ctx.scoreboard, *ctx.pool, *ctx.catalog, *ctx.index,
                                       *ctx.type_map, b.seeds_total, ctx.sampler, rng);
  PromptTemplate tmpl = store_.get(s.template_id, b.version);
  tmpl.status = PromptStatus::kDraft;
  RenderInputs inputs;
  inputs.type_defs = ctx.type_defs;
  inputs.n_questions = ctx.questions_per_seed;
  inputs.bbox_insert_example = template_body(store_, kBboxExampleTemplate);
  inputs.allow_draft = true;
  ValidatorOptions vopts;
  vopts.iou_threshold = ctx.iou_threshold;
  vopts.format = ctx.format;
  vopts.mode = RunMode::kIpoReview;

  for (std::size_t i = b.seeds_done; i < seeds.size(); ++i) {
    const QuerySeed& seed = seeds[i];
    const ImageAnnotation& ann = ctx.catalog->at(seed.image_id);
    inputs.annotation_text = render_annotation_text(ann);
    const RenderedPrompt prompt = render(tmpl, seed, inputs);
    // A gateway failure leaves the batch saved up to the previous seed.
    const Completion reply = ctx.gateway->complete(generation_request(ctx.model, prompt.final_text));

    QaOrigin origin;
    origin.id_prefix = b.batch_id + "-";
    origin.seed_index = seed.index;
    origin.image_id = seed.image_id;
    origin.qtype = seed.qtype;
    origin.template_id = s.template_id;
    origin.prompt_version = b.version;
    origin.request_digest = reply.digest;
    const ParseOutcome parsed = parse_output(reply.text, origin);

    std::vector<ReviewItem> fresh;
    for (const auto& qa : parsed.items) {
      ReviewItem item;
      item.qa_id = qa.qa_id;
      item.qa = qa;
      item.report = validate_qa(qa, &ann, vopts, ctx.classifier);
      fresh.push_back(std::move(item));
    }
    for (const auto& stub : parsed.stubs) {
      ReviewItem item;
      item.qa_id = stub.qa_id;
      item.stub = stub;
      item.report = validate_stub(stub);
      fresh.push_back(std::move(item));
    }
    std::sort(fresh.begin(), fresh.end(), [](const ReviewItem& x, const ReviewItem& y) {
      const auto ox = x.qa ? x.qa->ordinal : x.stub->ordinal;
      const auto oy = y.qa ? y.qa->ordinal : y.stub->ordinal;
      return ox < oy;
    });
    for (auto& item : fresh) {
      if (item.report.verdict.kind == VerdictKind::kAutoReject) {
        item.status = ReviewStatus::kAutoFailed;
        item.reviewer = std::string(kAutoTagger);
        std::string detail;
        for (const auto& [name, check] : item.report.checks) {
          if (check.status == CheckStatus::kFail) {
            detail = name + ": " + check.detail;
            break;
          }
        }
        FailureCase c;
        c.qa_id = item.qa_id;
        c.failure_type = *item.report.verdict.failure_type;
        c.explanation = detail;
        c.tagger = std::string(kAutoTagger);
        c.template_id = s.template_id;
        c.prompt_version = b.version;
        c.session_id = session_id;
        c.timestamp = clock_();
        ledger_.append(c);
      }
      b.items.push_back(std::move(item));
    }
    b.seeds_done = i + 1;
    save_batch(b);
  }
  return b;
}

ReviewBatch IpoWorkspace::batch(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw IpoError("unknown session " + session_id);
  if (!it->second.batch_id) throw IpoError("session " + session_id + " has no review batch");
  return load_batch(*it->second.batch_id);
}

FailureCase IpoWorkspace::record_failure(const std::string& session_id, const std::string& qa_id,
                                         FailureType type, const std::string& explanation,
                                         const std::string& tagger, bool override_review) {
  if (trim(explanation).empty()) throw IpoError("a failure tag needs an explanation");
  if (trim(tagger).empty()) throw IpoError("a failure tag needs a tagger");
  std::lock_guard lock(mu_);
  IpoSession& s = session_ref(session_id);
  if (!s.batch_id) throw IpoError("session " + session_id + " has no review batch");
  for (const auto& c : ledger_.cases()) {
    if (c.session_id == session_id && c.qa_id == qa_id && c.tagger == tagger) return c;
  }
  ReviewBatch b = load_batch(*s.batch_id);
  auto it = std::find_if(b.items.begin(), b.items.end(),
                         [&](const ReviewItem& i) { return i.qa_id == qa_id; });
  if (it == b.items.end()) throw IpoError("item " + qa_id + " is not in the current batch");
  if (it->status != ReviewStatus::kQueued && !override_review) {
    throw IpoError("item " + qa_id + " is already " + std::string(to_string(it->status)));
  }
  FailureCase c;
  c.qa_id = qa_id;
  c.failure_type = type;
  c.explanation = explanation;
  c.tagger = tagger;
  c.template_id = s.template_id;
  c.prompt_version = b.version;
  c.session_id = session_id;
  c.timestamp = clock_();
  ledger_.append(c);
  it->status = ReviewStatus::kFailed;
  it->reviewer = tagger;
  save_batch(b);
  return c;
}

void IpoWorkspace::clear_case(const std::string& session_id, const std::string& qa_id,
                              const std::string& tagger) {
  if (trim(tagger).empty()) throw IpoError("clearing an item needs a reviewer");
  std::lock_guard lock(mu_);
  IpoSession& s = session_ref(session_id);
  if (!s.batch_id) throw IpoError("session " + session_id + " has no review batch");
  ReviewBatch b = load_batch(*s.batch_id);
  auto it = std::find_if(b.items.begin(), b.items.end(),
                         [&](const ReviewItem& i) { return i.qa_id == qa_id; });
  if (it == b.items.end()) throw IpoError("item " + qa_id + " is not in the current batch");
  if (it->status == ReviewStatus::kCleared) return;
  if (it->status != ReviewStatus::kQueued) {
    throw IpoError("item " + qa_id + " is already " + std::string(to_string(it->status)));
  }
  it->status = ReviewStatus::kCleared;
  it->reviewer = tagger;
  save_batch(b);
}

double IpoWorkspace::failure_rate_locked(const IpoSession& s) const {
  if (!s.batch_id) throw IpoError("session " + s.session_id + " has no review batch");
  const ReviewBatch b = load_batch(*s.batch_id);
  if (!b.complete()) throw IpoError("batch " + b.batch_id + " is still being generated");
  if (b.items.empty()) throw IpoError("batch " + b.batch_id + " produced no items");
  std::size_t failures = 0, queued = 0;
  for (const auto& item : b.items) {
    queued += item.status == ReviewStatus::kQueued;
    failures += item.status == ReviewStatus::kAutoFailed || item.status == ReviewStatus::kFailed;
  }
  if (queued) throw IpoError(std::to_string(queued) + " items of batch " + b.batch_id + " are unreviewed");
  return static_cast<double>(failures) / static_cast<double>(b.items.size());
}

double IpoWorkspace::failure_rate(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw IpoError("unknown session " + session_id);
  return failure_rate_locked(it->second);
}

IpoState IpoWorkspace::step(const std::string& session_id) {
  std::lock_guard lock(mu_);
  IpoSession& s = session_ref(session_id);
  if (s.state == IpoState::kConverged) return s.state;
  if (s.state != IpoState::kBatchReview) {
    throw IllegalTransitionError("step needs state batch_review, session is " +
                                 std::string(to_string(s.state)));
  }
  if (s.batch_id && !s.history.empty() && s.history.back().batch_id == *s.batch_id) {
    throw IpoError("batch " + *s.batch_id + " was already stepped; generate a new one");
  }
  const double rate = failure_rate_locked(s);
  IpoSession next = s;
  next.history.push_back({s.current_version, *s.batch_id, rate});
  if (rate <= s.theta) {
    transition(next, IpoState::kConverged);
    store_.activate(s.template_id, s.current_version);
  } else {
    transition(next, IpoState::kCorrection);
  }
  s = std::move(next);
  save_session(s);
  return s.state;
}

PromptProposal IpoWorkspace::proposal(const std::string& proposal_id) const {
  std::lock_guard lock(mu_);
  for (const auto& p : proposals_) {
    if (p.proposal_id == proposal_id) return p;
  }
  throw IpoError("unknown proposal " + proposal_id);
}

std::vector<PromptProposal> IpoWorkspace::proposals() const {
  std::lock_guard lock(mu_);
  return proposals_;
}

std::vector<FailureCase> IpoWorkspace::ledger() const {
  std::lock_guard lock(mu_);
  return ledger_.cases();
}

std::vector<std::string> IpoWorkspace::audit_lineage() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> problems;
  for (const auto& id : store_.template_ids()) {
    for (const auto& t : store_.versions(id)) {
      if (!t.parent_version) continue;
      const std::string name = id + " v" + std::to_string(t.version);
      if (!t.proposal_id) {
        problems.push_back(name + " has a parent but no proposal");
        continue;
      }
      auto p = std::find_if(proposals_.begin(), proposals_.end(),
                            [&](const PromptProposal& x) { return x.proposal_id == *t.proposal_id; });
      if (p == proposals_.end()) {
        problems.push_back(name + " names unknown proposal " + *t.proposal_id);
      } else if (p->status != ProposalStatus::kApproved) {
        problems.push_back(name + " comes from proposal " + p->proposal_id + " which is " +
                           std::string(to_string(p->status)));
      } else if (p->template_id != id || p->resulting_version != t.version ||
                 p->base_version != *t.parent_version) {
        problems.push_back(name + " does not match proposal " + p->proposal_id);
      }
    }
  }
  for (const auto& p : proposals_) {
    if (p.status != ProposalStatus::kApproved) continue;
    try {
      store_.get(p.template_id, p.resulting_version.value_or(0));
    } catch (const PromptStoreError&) {
      problems.push_back("approved proposal " + p.proposal_id + " has no resulting version");
    }
  }
  return problems;
}

}  // namespace dataengine
