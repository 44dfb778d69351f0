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

#include <cstddef>
#include <istream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dataengine {

inline constexpr std::size_t kDefaultEmbeddingDim = 512;

struct Neighbor {
  std::string image_id;
  double similarity = 0.0;
  bool operator==(const Neighbor&) const = default;
};

// Unit-normalized image embeddings with exhaustive cosine search.
// Immutable after construction; concurrent queries are safe.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  explicit EmbeddingIndex(std::size_t dim) : dim_(dim) {}

  // Normalizes `v` to unit length. Throws on wrong length, zero norm,
  // non-finite values or a duplicate id.
  void add(const std::string& image_id, std::span<const double> v);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  bool contains(const std::string& image_id) const { return rows_.count(image_id) != 0; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const double> vector(const std::string& image_id) const;

  // Top-k by cosine similarity, excluding the anchor and `exclude`.
  // Ties are broken by ascending image_id.
  std::vector<Neighbor> nearest(const std::string& anchor_id, std::size_t k,
                                const std::set<std::string>& exclude = {}) const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> rows_;
};

// Lines of the form "image_id<TAB>v1,v2,...,vd". When `expected_dim` is
// unset the first line fixes the dimension. Errors name the offending line.
EmbeddingIndex load_embeddings(std::istream& source,
                               std::optional<std::size_t> expected_dim = std::nullopt);

}  // namespace dataengine
