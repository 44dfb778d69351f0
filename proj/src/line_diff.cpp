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

#include "dataengine/line_diff.hpp"

#include <sstream>

#include "dataengine/common.hpp"

namespace dataengine {

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      break;
    }
    out.emplace_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

std::string join_lines(std::span<const std::string> lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

std::vector<DiffHunk> line_diff(std::string_view a_text, std::string_view b_text) {
  const auto a = split_lines(a_text);
  const auto b = split_lines(b_text);
  const std::size_t n = a.size(), m = b.size();

  // lcs[i][j] = LCS length of a[i..] and b[j..]
  std::vector<std::vector<std::size_t>> lcs(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }

  std::vector<DiffHunk> hunks;
  DiffHunk current;
  bool open = false;
  auto flush = [&] {
    if (open) hunks.push_back(std::move(current));
    current = {};
    open = false;
  };
  auto ensure_open = [&](std::size_t i, std::size_t j) {
    if (!open) {
      current.a_start = i;
      current.b_start = j;
      open = true;
    }
  };

  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    if (i < n && j < m && a[i] == b[j]) {
      flush();
      ++i;
      ++j;
    } else if (i < n && (j == m || lcs[i + 1][j] >= lcs[i][j + 1])) {
      ensure_open(i, j);
      current.removed.push_back(a[i++]);
    } else {
      ensure_open(i, j);
      current.added.push_back(b[j++]);
    }
  }
  flush();
  return hunks;
}

std::string apply_diff(std::string_view a_text, std::span<const DiffHunk> hunks) {
  const auto a = split_lines(a_text);
  std::vector<std::string> out;
  std::size_t i = 0;
  for (const auto& h : hunks) {
    if (h.a_start < i || h.a_start + h.removed.size() > a.size()) {
      throw Error("diff hunk does not apply");
    }
    while (i < h.a_start) out.push_back(a[i++]);
    for (const auto& line : h.removed) {
      if (a[i++] != line) throw Error("diff hunk does not match the base text");
    }
    for (const auto& line : h.added) out.push_back(line);
  }
  while (i < a.size()) out.push_back(a[i++]);
  return join_lines(out);
}

std::string format_diff(std::span<const DiffHunk> hunks) {
  std::ostringstream out;
  for (const auto& h : hunks) {
    out << "@@ -" << h.a_start + 1 << ',' << h.removed.size() << " +" << h.b_start + 1 << ','
        << h.added.size() << " @@\n";
    for (const auto& l : h.removed) out << '-' << l << '\n';
    for (const auto& l : h.added) out << '+' << l << '\n';
  }
  return out.str();
}

nlohmann::json to_json(std::span<const DiffHunk> hunks) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& h : hunks) {
    out.push_back({{"a_start", h.a_start},
                   {"removed", h.removed},
                   {"b_start", h.b_start},
                   {"added", h.added}});
  }
  return out;
}

}  // namespace dataengine
