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

// Interactive prompt optimization: a human-supervised loop that checks a
// generation prompt for internal conflicts, reviews a small generated
// batch, and asks the LLM for a corrected prompt until the failure rate of
// a batch drops to the session threshold.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataengine/abs_sampler.hpp"
#include "dataengine/llm_gateway.hpp"
#include "dataengine/prompt_store.hpp"
#include "dataengine/qa_validator.hpp"

namespace dataengine {

inline constexpr std::string_view kAutoTagger = "auto";

struct FailureCase {
  std::string qa_id;
  FailureType failure_type = FailureType::kIllogicalQuestion;
  std::string explanation;
  std::string tagger;
  std::string template_id;
  std::uint32_t prompt_version = 0;
  std::string session_id;
  std::string timestamp;
  bool operator==(const FailureCase&) const = default;
};

nlohmann::json to_json(const FailureCase& c);
FailureCase failure_case_from_json(const nlohmann::json& j);

// Append-only failure log, one case per line.
class Ledger {
 public:
  Ledger() = default;
  // Missing file yields an empty ledger bound to `path`.
  static Ledger open(const std::filesystem::path& path);
  static Ledger parse(std::istream& in);
  void append(const FailureCase& c);
  const std::vector<FailureCase>& cases() const { return cases_; }
  std::size_t size() const { return cases_.size(); }

 private:
  std::optional<std::filesystem::path> path_;
  std::vector<FailureCase> cases_;
};

struct VersionRange {
  std::uint32_t min = 0;
  std::uint32_t max = UINT32_MAX;
};

// Count per failure type; every type is present, zero included.
std::map<FailureType, std::size_t> ledger_stats(std::span<const FailureCase> cases,
                                                VersionRange range = {},
                                                const std::string& template_id = "");

enum class IpoState { kConflictCheck, kBatchReview, kCorrection, kConverged };

std::string_view to_string(IpoState state);
IpoState parse_ipo_state(std::string_view text);

bool is_legal_transition(IpoState from, IpoState to);

class IllegalTransitionError : public Error {
 public:
  using Error::Error;
};

class IpoError : public Error {
 public:
  using Error::Error;
};

struct HistoryEntry {
  std::uint32_t version = 0;
  std::string batch_id;
  double failure_rate = 0.0;
  bool operator==(const HistoryEntry&) const = default;
};

inline constexpr double kDefaultFailureThreshold = 0.10;
inline constexpr std::size_t kDefaultReviewBatchSize = 20;

struct IpoSession {
  std::string session_id;
  std::string template_id;
  std::uint32_t start_version = 0;
  std::uint32_t current_version = 0;
  IpoState state = IpoState::kConflictCheck;
  std::size_t batch_size = kDefaultReviewBatchSize;
  double theta = kDefaultFailureThreshold;
  std::vector<HistoryEntry> history;
  std::optional<std::string> pending_proposal;
  std::optional<std::string> batch_id;
  std::uint32_t batches_started = 0;
  bool operator==(const IpoSession&) const = default;
};

// Moves `session` to `to`; throws IllegalTransitionError off the declared edges.
void transition(IpoSession& session, IpoState to);

nlohmann::json to_json(const IpoSession& s);
IpoSession ipo_session_from_json(const nlohmann::json& j);

enum class ProposalStatus { kPending, kApproved, kRejected, kNoChange };
enum class ProposalKind { kConflictCheck, kCorrection, kShipped };

std::string_view to_string(ProposalStatus status);
std::string_view to_string(ProposalKind kind);

struct PromptProposal {
  std::string proposal_id;
  std::string session_id;
  ProposalKind kind = ProposalKind::kConflictCheck;
  std::string template_id;
  std::uint32_t base_version = 0;
  std::string suggested_body;
  std::string llm_rationale;
  ProposalStatus status = ProposalStatus::kPending;
  std::optional<std::string> decider;
  std::optional<std::uint32_t> resulting_version;
  std::string request_digest;
  bool operator==(const PromptProposal&) const = default;
};

nlohmann::json to_json(const PromptProposal& p);
PromptProposal prompt_proposal_from_json(const nlohmann::json& j);

// Extracts the body of the first ```prompt (or bare ```) fenced block.
// `rest` receives the reply text outside the block.
std::optional<std::string> extract_fenced_body(std::string_view reply, std::string* rest = nullptr);

enum class ReviewStatus { kQueued, kAutoFailed, kFailed, kCleared };

std::string_view to_string(ReviewStatus status);

struct ReviewItem {
  std::string qa_id;
  std::optional<GeneratedQA> qa;
  std::optional<ParseStub> stub;
  ValidationReport report;
  ReviewStatus status = ReviewStatus::kQueued;
  std::optional<std::string> reviewer;
};

struct ReviewBatch {
  std::string batch_id;
  std::string session_id;
  std::uint32_t version = 0;
  std::size_t seeds_total = 0;
  std::size_t seeds_done = 0;
  std::vector<ReviewItem> items;
  bool complete() const { return seeds_done == seeds_total; }
};

nlohmann::json to_json(const ReviewBatch& b);
ReviewBatch review_batch_from_json(const nlohmann::json& j);

// Everything a review batch needs to build and validate its seeds.
struct BatchContext {
  const AbilityScoreboard* scoreboard = nullptr;
  const BadCasePool* pool = nullptr;
  const Catalog* catalog = nullptr;
  const EmbeddingIndex* index = nullptr;
  const LabelMap* type_map = nullptr;
  Gateway* gateway = nullptr;
  const LlmClassifier* classifier = nullptr;
  std::string model;
  std::uint64_t seed = 0;
  SamplerOptions sampler;
  double iou_threshold = kDefaultIouThreshold;
  QaFormat format = QaFormat::kQmae;
  std::size_t questions_per_seed = 1;
  TypeDefinitions type_defs = default_type_definitions();
};

// The request sent for one review or production seed.
ChatRequest generation_request(const std::string& model, const std::string& prompt_text);

// Workspace directory layout:
//   prompts/<template_id>.jsonl   prompt store
//   ipo/sessions/<id>.json        one file per session
//   ipo/batches/<batch_id>.json   review batches
//   ipo/proposals.jsonl
//   ipo/ledger.jsonl
// Mutations are serialized by one lock per workspace.
class IpoWorkspace {
 public:
  // Creates the layout and installs the shipped templates when absent.
  static std::unique_ptr<IpoWorkspace> open(const std::filesystem::path& dir);

  PromptStore& store() { return store_; }
  const PromptStore& store() const { return store_; }

  // ISO-8601 UTC by default; tests pin it.
  void set_clock(std::function<std::string()> clock) { clock_ = std::move(clock); }

  IpoSession start_session(const std::string& template_id, std::uint32_t version,
                           std::size_t batch_size = kDefaultReviewBatchSize,
                           double theta = kDefaultFailureThreshold);
  IpoSession session(const std::string& session_id) const;
  std::vector<IpoSession> sessions() const;

  PromptProposal run_conflict_check(const std::string& session_id, Gateway& gateway,
                                    const std::string& model);
  PromptProposal decide_proposal(const std::string& proposal_id, bool approve,
                                 const std::string& decider);
  PromptProposal propose_correction(const std::string& session_id, Gateway& gateway,
                                    const std::string& model, std::size_t k_examples);

  // Continues the open batch if a previous call stopped partway.
  ReviewBatch generate_review_batch(const std::string& session_id, const BatchContext& ctx);
  ReviewBatch batch(const std::string& session_id) const;

  FailureCase record_failure(const std::string& session_id, const std::string& qa_id,
                             FailureType type, const std::string& explanation,
                             const std::string& tagger, bool override_review = false);
  void clear_case(const std::string& session_id, const std::string& qa_id,
                  const std::string& tagger);
  double failure_rate(const std::string& session_id) const;
  IpoState step(const std::string& session_id);

  PromptProposal proposal(const std::string& proposal_id) const;
  std::vector<PromptProposal> proposals() const;
  std::vector<FailureCase> ledger() const;

  // Lineage problems: versions with a parent but no approved proposal,
  // and proposals whose resulting version is missing. Empty when sound.
  std::vector<std::string> audit_lineage() const;

 private:
  explicit IpoWorkspace(std::filesystem::path dir);
  IpoSession& session_ref(const std::string& session_id);
  ReviewBatch load_batch(const std::string& batch_id) const;
  void save_batch(const ReviewBatch& b) const;
  void save_session(const IpoSession& s) const;
  void save_proposals() const;
  PromptProposal& proposal_ref(const std::string& proposal_id);
  double failure_rate_locked(const IpoSession& s) const;
  void install_shipped_templates();

  std::filesystem::path dir_;
  PromptStore store_;
  Ledger ledger_;
  std::map<std::string, IpoSession> sessions_;
  std::vector<PromptProposal> proposals_;
  std::function<std::string()> clock_;
  mutable std::mutex mu_;
};

// The proposal id recorded for the shipped final generation template.
inline constexpr std::string_view kShippedProposalId = "shipped-generation-v2";

}  // namespace dataengine
