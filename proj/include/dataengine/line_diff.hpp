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

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dataengine {

// One contiguous change: `removed` lines starting at a_start in the old
// text are replaced by `added` lines starting at b_start in the new text.
struct DiffHunk {
  std::size_t a_start = 0;
  std::vector<std::string> removed;
  std::size_t b_start = 0;
  std::vector<std::string> added;
  bool operator==(const DiffHunk&) const = default;
};

std::vector<std::string> split_lines(std::string_view text);
std::string join_lines(std::span<const std::string> lines);

// Longest-common-subsequence line diff. Deterministic: among equal-length
// alignments, deletions are placed before insertions.
std::vector<DiffHunk> line_diff(std::string_view a, std::string_view b);

// Inverse of line_diff: apply_diff(a, line_diff(a, b)) == b.
std::string apply_diff(std::string_view a, std::span<const DiffHunk> hunks);

// "@@ -a,n +b,m @@" headers followed by "-" and "+" lines (1-based).
std::string format_diff(std::span<const DiffHunk> hunks);

nlohmann::json to_json(std::span<const DiffHunk> hunks);

}  // namespace dataengine
