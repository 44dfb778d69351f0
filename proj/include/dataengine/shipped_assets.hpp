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

#pragma once

#include <string_view>

// Text assets compiled into the library from assets/.
namespace dataengine::assets {

extern const std::string_view kClassificationPrompt;
extern const std::string_view kConflictCheckPrompt;
extern const std::string_view kFailureCorrectionPrompt;
extern const std::string_view kGenerationOriginalPrompt;
extern const std::string_view kGenerationFinalPrompt;
extern const std::string_view kBboxInsertExample;
extern const std::string_view kDefaultLabelMap;
extern const std::string_view kNounLexicon;

}  // namespace dataengine::assets
