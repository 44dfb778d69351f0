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

#include "dataengine/embedding_index.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "dataengine/common.hpp"

namespace dataengine {

void EmbeddingIndex::add(const std::string& image_id, std::span<const double> v) {
  if (dim_ == 0) throw Error("embedding dimension must be positive");
  if (v.size() != dim_) {
    throw Error("embedding for '" + image_id + "' has length " + std::to_string(v.size()) +
                ", expected " + std::to_string(dim_));
  }
  if (rows_.count(image_id)) throw Error("duplicate embedding id '" + image_id + "'");
  double norm2 = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw Error("embedding for '" + image_id + "' is not finite");
    norm2 += x * x;
  }
  if (norm2 == 0.0) throw Error("embedding for '" + image_id + "' has zero norm");
  const double inv = 1.0 / std::sqrt(norm2);
  rows_.emplace(image_id, ids_.size());
  ids_.push_back(image_id);
  for (double x : v) data_.push_back(x * inv);
}

std::span<const double> EmbeddingIndex::vector(const std::string& image_id) const {
  auto it = rows_.find(image_id);
  if (it == rows_.end()) throw Error("no embedding for image '" + image_id + "'");
  return {data_.data() + it->second * dim_, dim_};
}

std::vector<Neighbor> EmbeddingIndex::nearest(const std::string& anchor_id, std::size_t k,
                                              const std::set<std::string>& exclude) const {
  if (k == 0) throw Error("k must be at least 1");
  const auto anchor = vector(anchor_id);
  std::vector<Neighbor> all;
  all.reserve(ids_.size());
  for (std::size_t row = 0; row < ids_.size(); ++row) {
    const std::string& id = ids_[row];
    if (id == anchor_id || exclude.count(id)) continue;
    const double* v = data_.data() + row * dim_;
    double dot = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) dot += anchor[d] * v[d];
    all.push_back({id, dot});
  }
  // Rounding noise from normalization must not decide ties, so order on a
  // 1e-12 grid; vectors pointing the same way then fall back to id order.
  auto key = [](double s) { return std::llround(s * 1e12); };
  auto better = [&](const Neighbor& a, const Neighbor& b) {
    const auto ka = key(a.similarity), kb = key(b.similarity);
    if (ka != kb) return ka > kb;
    return a.image_id < b.image_id;
  };
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    better);
  all.resize(take);
  return all;
}

EmbeddingIndex load_embeddings(std::istream& source, std::optional<std::size_t> expected_dim) {
  EmbeddingIndex index;
  bool initialized = false;
  if (expected_dim) {
    index = EmbeddingIndex(*expected_dim);
    initialized = true;
  }
  for_each_line(source, [&](const std::string& line, std::size_t number) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected '<image_id>\\t<vector>'", number);
    const std::string id = trim(std::string_view(line).substr(0, tab));
    if (id.empty()) throw ParseError("empty image id", number);

    std::vector<double> v;
    std::string_view rest = std::string_view(line).substr(tab + 1);
    while (true) {
      const auto comma = rest.find(',');
      const std::string field = trim(rest.substr(0, comma));
      double x = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
      if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
        throw ParseError("cannot parse number '" + field + "'", number);
      }
      v.push_back(x);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!initialized) {
      index = EmbeddingIndex(v.size());
      initialized = true;
    }
    try {
      index.add(id, v);
    } catch (const Error& e) {
      throw ParseError(e.what(), number);
    }
  });
  return index;
}

}  // namespace dataengine
