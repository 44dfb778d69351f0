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

// Regenerates fixtures/validator/cassette.jsonl from the classifier
// replies listed in corpus.jsonl.
#include <iostream>

#include "dataengine/llm_gateway.hpp"
#include "validator_corpus.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_validator_cassette <fixtures/validator>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::remove(dir / "cassette.jsonl");
  auto cassette = dataengine::Cassette::open(dir / "cassette.jsonl");
  dataengine::GatewayOptions opts;
  opts.mode = dataengine::GatewayMode::kReplay;
  dataengine::Gateway gateway(opts, nullptr, cassette);
  dataengine::LlmClassifier clf(gateway, testing::corpus_classifier_prompt(), testing::kCorpusModel);
  for (const auto& item : testing::load_validator_corpus(dir / "corpus.jsonl")) {
    const auto parsed = dataengine::parse_output(item.text, testing::corpus_origin(item));
    for (const auto& qa : parsed.items) {
      cassette->put(clf.first_request(dataengine::as_eval_record(qa)), item.classifier_reply, 120, 4);
    }
  }
  std::cout << cassette->size() << " entries\n";
}
