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

#include "dataengine/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <optional>
#include <regex>
#include <sstream>

#include "dataengine/ipo_engine.hpp"
#include "dataengine/line_diff.hpp"
#include "dataengine/question_type.hpp"

namespace dataengine {

using nlohmann::json;

namespace {

constexpr std::string_view kCategories[] = {
    "person", "dog",    "cat",   "car",   "bicycle", "bus",    "chair",  "table",
    "cup",    "bottle", "horse", "bird",  "umbrella", "kite",  "boat",   "laptop",
    "book",   "clock",  "bench", "train"};
constexpr std::string_view kAdjectives[] = {"small", "large", "red",   "white", "black",
                                            "old",   "shiny", "brown", "blue",  "wooden"};
constexpr std::string_view kScenes[] = {"park",  "street", "kitchen", "beach",  "office",
                                        "field", "garden", "station", "harbor", "market"};
constexpr std::size_t kCategoryCount = std::size(kCategories);

template <typename T, std::size_t N>
const T& pick(const T (&arr)[N], Rng& rng) {
  return arr[rng.below(N)];
}

}  // namespace

SyntheticWorld make_synthetic_world(const SyntheticWorldOptions& options) {
  if (options.images == 0) throw Error("synthetic world needs at least one image");
  std::vector<double> scores = options.initial_scores;
  if (scores.empty()) {
    for (std::size_t i = 0; i < kQuestionTypeCount; ++i) {
      scores.push_back(0.2 + 0.7 * static_cast<double>(i) / (kQuestionTypeCount - 1));
    }
  }
  if (scores.size() != kQuestionTypeCount) throw Error("need one initial score per question type");

  Rng rng(derive_seed(options.seed, "synthetic-world"));
  json captions = {{"images", json::array()}, {"annotations", json::array()}};
  json instances = {{"images", json::array()}, {"annotations", json::array()},
                    {"categories", json::array()}};
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    instances["categories"].push_back({{"id", c + 1}, {"name", kCategories[c]}});
  }

  // Cluster centres per main category so similar-image search is meaningful.
  std::vector<std::vector<double>> centres(kCategoryCount);
  for (auto& c : centres) {
    for (std::size_t d = 0; d < options.embedding_dim; ++d) c.push_back(rng.normal());
  }

  std::ostringstream emb;
  std::vector<std::string> image_ids;
  std::size_t ann_id = 1;
  for (std::size_t i = 0; i < options.images; ++i) {
    const std::int64_t width = 640, height = 480;
    char name[32];
    std::snprintf(name, sizeof name, "%06zu", i + 1);
    const std::string id = name;
    image_ids.push_back(id);
    json img = {{"id", i + 1}, {"width", width}, {"height", height},
                {"file_name", id + ".jpg"}};
    captions["images"].push_back(img);
    instances["images"].push_back(img);

    const std::size_t n_objects = 1 + rng.below(4);
    std::vector<std::size_t> cats;
    for (std::size_t k = 0; k < n_objects; ++k) cats.push_back(rng.below(kCategoryCount));
    for (std::size_t k = 0; k < n_objects; ++k) {
      const double w = 60 + static_cast<double>(rng.below(200));
      const double h = 60 + static_cast<double>(rng.below(180));
      const double x = static_cast<double>(rng.below(static_cast<std::uint64_t>(width - w)));
      const double y = static_cast<double>(rng.below(static_cast<std::uint64_t>(height - h)));
      instances["annotations"].push_back({{"id", ann_id++},
                                          {"image_id", i + 1},
                                          {"category_id", cats[k] + 1},
                                          {"bbox", {x, y, w, h}}});
    }
    const std::string main(kCategories[cats[0]]);
    const std::string scene(pick(kScenes, rng));
    const std::string caption_a =
        "A " + std::string(pick(kAdjectives, rng)) + " " + main + " in the " + scene + ".";
    const std::string caption_b =
        n_objects > 1 ? "A " + main + " next to a " + std::string(kCategories[cats[1]]) + "."
                      : "A photo of a " + main + " at the " + scene + ".";
    captions["annotations"].push_back({{"id", ann_id++}, {"image_id", i + 1}, {"caption", caption_a}});
    captions["annotations"].push_back({{"id", ann_id++}, {"image_id", i + 1}, {"caption", caption_b}});

    emb << id << '\t';
    for (std::size_t d = 0; d < options.embedding_dim; ++d) {
      if (d) emb << ',';
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", centres[cats[0]][d] + 0.35 * rng.normal());
      emb << buf;
    }
    emb << '\n';
  }

  SyntheticWorld world;
  world.captions_json = captions.dump();
  world.instances_json = instances.dump();
  world.embeddings_tsv = emb.str();

  std::size_t counter = 0;
  for (QuestionType t : kAllQuestionTypes) {
    const double s = scores[index_of(t)];
    const std::size_t n = options.eval_items_per_dimension;
    const auto n_correct = static_cast<std::size_t>(std::llround(s * static_cast<double>(n)));
    for (std::size_t k = 0; k < n; ++k) {
      EvalRecord r;
      r.record_id = "eval-" + std::to_string(++counter);
      r.image_id = image_ids[rng.below(image_ids.size())];
      const std::string cat(pick(kCategories, rng));
      r.question = "Regarding " + std::string(display_name(t)) + ", what best describes the " +
                   cat + " in image " + r.image_id + "?";
      r.choices = {"It is " + std::string(pick(kAdjectives, rng)), "It is moving",
                   "It is partly hidden", "None of the above"};
      r.ground_truth = rng.below(4);
      r.prediction = k < n_correct ? r.ground_truth : (r.ground_truth + 1) % 4;
      r.dimension = std::string(canonical_name(t));
      r.benchmark = "synthetic";
      world.eval.push_back(std::move(r));
    }
  }
  return world;
}

void write_synthetic_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "captions.json", world.captions_json);
  write_file_atomic(dir / "instances.json", world.instances_json);
  write_file_atomic(dir / "embeddings.tsv", world.embeddings_tsv);
  std::string eval;
  for (const auto& r : world.eval) eval += to_json(r).dump() + "\n";
  write_file_atomic(dir / "eval.jsonl", eval);
}

namespace {

struct PromptObject {
  std::string category;
  std::string box;  // "[x,y,w,h]" exactly as rendered
};

std::vector<PromptObject> prompt_objects(const std::string& prompt) {
  // Only the image description, which follows the last "Image description:".
  const auto at = prompt.rfind("Image description:");
  const std::string tail = at == std::string::npos ? prompt : prompt.substr(at);
  static const std::regex line(R"((^|\n)([a-z][a-z ]*): (\[\d+,\d+,\d+,\d+\]))");
  std::vector<PromptObject> out;
  for (auto it = std::sregex_iterator(tail.begin(), tail.end(), line);
       it != std::sregex_iterator(); ++it) {
    out.push_back({(*it)[2].str(), (*it)[3].str()});
  }
  return out;
}

std::optional<QuestionType> prompt_type(const std::string& prompt) {
  for (const auto& raw : split_lines(prompt)) {
    const auto l = to_lower(trim(raw));
    for (QuestionType t : kAllQuestionTypes) {
      const std::string prefix = std::string(display_name(t)) + ":";
      if (l.rfind(prefix, 0) == 0) return t;
    }
  }
  return std::nullopt;
}

std::size_t prompt_count(const std::string& prompt) {
  static const std::regex re(R"(write (\d+) multiple-choice)");
  std::smatch m;
  if (std::regex_search(prompt, m, re)) return std::stoul(m[1].str());
  return 5;
}

std::string section_after(const std::string& text, const std::string& label) {
  const auto at = text.find(label);
  if (at == std::string::npos) return text;
  return text.substr(at + label.size());
}

constexpr std::string_view kStems[] = {
    "what can be said about the {obj} in this image?",
    "which statement about the {obj} is supported by the description?",
    "what is true of the {obj} shown here?",
    "how would you describe the {obj} in the picture?",
    "which option fits the {obj} best?",
};

std::string replace_obj(std::string_view stem, const std::string& obj) {
  std::string s(stem);
  const auto at = s.find("{obj}");
  return s.replace(at, 5, obj);
}

}  // namespace

std::string SyntheticChatProvider::generate(const std::string& prompt, Rng& rng) const {
  const auto objects = prompt_objects(prompt);
  const std::size_t n = prompt_count(prompt);
  const auto defined = prompt_type(prompt);
  // A prompt carrying the correction rule no longer gets box defects.
  const bool corrected = prompt.find(kSyntheticCorrectionRule) != std::string::npos;
  std::ostringstream out;
  for (std::size_t q = 0; q < n && !objects.empty(); ++q) {
    const PromptObject& obj = objects[rng.below(objects.size())];
    QuestionType type = defined ? *defined : kAllQuestionTypes[rng.below(kQuestionTypeCount)];
    std::string box = obj.box;
    std::string object_phrase = obj.category + " " + box;
    std::vector<std::string> choices = {
        "It is a " + obj.category,
        "It is a toy " + std::string(kCategories[rng.below(kCategoryCount)]),
        "It is not in the image", "It is a painting of a " + obj.category};

    if (rng.uniform01() < options_.defect_rate) {
      switch (rng.below(4)) {
        case 0:
          if (!corrected) object_phrase = obj.category + " [600,400,200,200]";
          break;
        case 1: choices[2] = choices[0]; break;
        case 2: {
          const auto shift = 1 + rng.below(kQuestionTypeCount - 1);
          type = kAllQuestionTypes[(index_of(type) + shift) % kQuestionTypeCount];
          break;
        }
        case 3:
          if (!corrected) object_phrase = obj.category + " (" + box + ")";
          break;
      }
    }

    const std::size_t answer = rng.below(4);
    std::swap(choices[0], choices[answer]);
    out << "Question: Considering " << display_name(type) << ", "
        << replace_obj(kStems[rng.below(std::size(kStems))], object_phrase) << "\n";
    out << "Choices:\n";
    for (std::size_t c = 0; c < 4; ++c) {
      out << static_cast<char>('A' + c) << ". " << choices[c] << "\n";
    }
    out << "Answer: " << static_cast<char>('A' + answer) << "\n";
    out << "Rationale: The description lists the " << obj.category << " " << obj.box
        << " in the image.\n\n";
  }
  return out.str();
}

ProviderReply SyntheticChatProvider::send(const ChatRequest& request) {
  Rng rng(derive_seed(options_.seed, request_digest(request)));
  ProviderReply reply;
  const std::string system =
      !request.messages.empty() && request.messages.front().role == Role::kSystem
          ? request.messages.front().content
          : "";
  const std::string user = request.messages.empty() ? "" : request.messages.back().content;

  if (system.find("NO CONFLICTS FOUND") != std::string::npos) {
    if (user.find(kSyntheticConflictFix) != std::string::npos) {
      reply.text = "NO CONFLICTS FOUND";
    } else {
      reply.text = "1. Rule 1 does not say what to do with unsupported questions.\n\n```prompt\n" +
                   user + "\n\n" + std::string(kSyntheticConflictFix) + "\n```\n";
    }
  } else if (user.rfind("Current prompt:", 0) == 0) {
    const auto base = extract_fenced_body(user).value_or("");
    std::string body = base;
    std::string why;
    const bool type_failures = user.find("Failure type: wrong_question_type") != std::string::npos;
    if (type_failures && base.find("{question_type_definition}") == std::string::npos) {
      body += "\n" + std::string(kSyntheticTypeRule);
      why += "Questions drift away from the requested type. ";
    }
    if (body == base || user.find("Failure type: incorrect_bounding_box") != std::string::npos) {
      if (base.find(kSyntheticCorrectionRule) == std::string::npos) {
        body += "\n" + std::string(kSyntheticCorrectionRule);
        why += "Some boxes were not copied from the object list.";
      }
    }
    reply.text = "```prompt\n" + body + "\n```\n" + (why.empty() ? "Nothing to add." : trim(why));
  } else if (!system.empty() && request.messages.size() >= 2 &&
             request.messages[1].content.rfind("Question:", 0) == 0) {
    const std::string question = section_after(request.messages[1].content, "Question:");
    const auto cut = question.find("\nChoices:");
    const auto type = find_unique_question_type(question.substr(0, cut));
    reply.text = type ? std::string(canonical_name(*type)) : "unsure";
  } else {
    reply.text = generate(user, rng);
  }
  reply.usage.prompt_tokens = 0;
  for (const auto& m : request.messages) reply.usage.prompt_tokens += split_whitespace(m.content).size();
  reply.usage.completion_tokens = split_whitespace(reply.text).size();
  return reply;
}

}  // namespace dataengine
