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

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace dataengine {

// Axis-aligned box in pixels: top-left corner plus width and height.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  bool operator==(const BBox&) const = default;
};

// Intersection over union. 0 when either box has no area.
double iou(const BBox& a, const BBox& b);

bool contained_in(const BBox& box, double width, double height);

struct ObjectAnnotation {
  std::string category;
  BBox bbox;
  bool operator==(const ObjectAnnotation&) const = default;
};

struct ImageAnnotation {
  std::string image_id;
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::string file_name;
  std::vector<std::string> captions;
  std::vector<ObjectAnnotation> objects;  // source order
  bool operator==(const ImageAnnotation&) const = default;
};

struct CatalogLoadReport {
  std::size_t dropped_without_caption = 0;
  std::size_t clamped_boxes = 0;
  // Boxes with no area left after clamping.
  std::size_t dropped_boxes = 0;
};

class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::map<std::string, ImageAnnotation> images) : images_(std::move(images)) {}

  const ImageAnnotation* find(const std::string& image_id) const;
  const ImageAnnotation& at(const std::string& image_id) const;
  bool contains(const std::string& image_id) const { return images_.count(image_id) != 0; }
  // Sorted ascending.
  std::vector<std::string> ids() const;
  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  const std::map<std::string, ImageAnnotation>& images() const { return images_; }

 private:
  std::map<std::string, ImageAnnotation> images_;
};

// Merges a COCO captions file and a COCO instances file (each with
// `images`, `annotations` and, for instances, `categories`). Images without
// captions are dropped; boxes spilling past the image are clamped.
Catalog load_catalog(std::istream& captions, std::istream& instances,
                     CatalogLoadReport* report = nullptr);

// Integer box used in rendered text: coordinates rounded half-up, then
// shrunk if needed so the box stays inside the image and keeps w, h >= 1.
std::array<std::int64_t, 4> rendered_box(const BBox& box, std::int64_t width,
                                         std::int64_t height);

// Caption lines, then one "category: [x,y,w,h]" line per object in source
// order. `caption_cap` limits the number of caption lines.
std::string render_annotation_text(const ImageAnnotation& ann,
                                   std::optional<std::size_t> caption_cap = std::nullopt);

nlohmann::json to_json(const ImageAnnotation& ann);

}  // namespace dataengine
