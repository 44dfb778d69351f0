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

#include "dataengine/coco_catalog.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dataengine/common.hpp"

namespace dataengine {

using nlohmann::json;

double iou(const BBox& a, const BBox& b) {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0) return 0.0;
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool contained_in(const BBox& box, double width, double height) {
  return box.x >= 0 && box.y >= 0 && box.w > 0 && box.h > 0 && box.x + box.w <= width &&
         box.y + box.h <= height;
}

const ImageAnnotation* Catalog::find(const std::string& image_id) const {
  auto it = images_.find(image_id);
  return it == images_.end() ? nullptr : &it->second;
}

const ImageAnnotation& Catalog::at(const std::string& image_id) const {
  if (const auto* ann = find(image_id)) return *ann;
  throw Error("image '" + image_id + "' is not in the catalog");
}

std::vector<std::string> Catalog::ids() const {
  std::vector<std::string> out;
  out.reserve(images_.size());
  for (const auto& [id, _] : images_) out.push_back(id);
  return out;
}

namespace {

std::string id_string(const json& v) {
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_string()) return v.get<std::string>();
  throw Error("id must be an integer or string");
}

const json& array_field(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_array()) {
    throw ParseError(std::string("COCO file lacks the '") + key + "' array");
  }
  return *it;
}

void merge_images(const json& doc, std::map<std::string, ImageAnnotation>& images) {
  for (const auto& img : array_field(doc, "images")) {
    ImageAnnotation ann;
    ann.image_id = id_string(img.at("id"));
    ann.width = img.at("width").get<std::int64_t>();
    ann.height = img.at("height").get<std::int64_t>();
    ann.file_name = img.value("file_name", "");
    if (ann.width <= 0 || ann.height <= 0) {
      throw ParseError("image " + ann.image_id + " has non-positive dimensions");
    }
    auto [it, inserted] = images.emplace(ann.image_id, ann);
    if (!inserted) {
      if (it->second.width != ann.width || it->second.height != ann.height) {
        throw ParseError("image " + ann.image_id + " has conflicting dimensions");
      }
      if (it->second.file_name.empty()) it->second.file_name = ann.file_name;
    }
  }
}

json parse_document(std::istream& in, const char* what) {
  try {
    json doc = json::parse(in);
    if (!doc.is_object()) throw ParseError(std::string(what) + " is not a JSON object");
    return doc;
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

Catalog load_catalog(std::istream& captions_in, std::istream& instances_in,
                     CatalogLoadReport* report) {
  CatalogLoadReport local;
  CatalogLoadReport& rep = report ? *report : local;
  rep = {};

  const json captions = parse_document(captions_in, "captions file");
  const json instances = parse_document(instances_in, "instances file");

  std::map<std::string, ImageAnnotation> images;
  try {
    merge_images(captions, images);
    merge_images(instances, images);

    for (const auto& a : array_field(captions, "annotations")) {
      const std::string id = id_string(a.at("image_id"));
      auto it = images.find(id);
      if (it == images.end()) throw ParseError("caption refers to unknown image " + id);
      it->second.captions.push_back(trim(a.at("caption").get<std::string>()));
    }

    std::map<std::string, std::string> categories;
    for (const auto& c : array_field(instances, "categories")) {
      categories[id_string(c.at("id"))] = c.at("name").get<std::string>();
    }

    for (const auto& a : array_field(instances, "annotations")) {
      const std::string id = id_string(a.at("image_id"));
      auto it = images.find(id);
      if (it == images.end()) throw ParseError("instance refers to unknown image " + id);
      const std::string cat_id = id_string(a.at("category_id"));
      auto cat = categories.find(cat_id);
      if (cat == categories.end()) throw ParseError("unknown category id " + cat_id);
      const auto& b = a.at("bbox");
      if (!b.is_array() || b.size() != 4) throw ParseError("bbox must have four numbers");
      BBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};

      const double W = static_cast<double>(it->second.width);
      const double H = static_cast<double>(it->second.height);
      if (!contained_in(box, W, H)) {
        const double x0 = std::clamp(box.x, 0.0, W);
        const double y0 = std::clamp(box.y, 0.0, H);
        const double x1 = std::clamp(box.x + box.w, 0.0, W);
        const double y1 = std::clamp(box.y + box.h, 0.0, H);
        box = {x0, y0, x1 - x0, y1 - y0};
        if (box.w <= 0 || box.h <= 0) {
          ++rep.dropped_boxes;
          continue;
        }
        ++rep.clamped_boxes;
      }
      it->second.objects.push_back({cat->second, box});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("COCO schema violation: ") + e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("COCO schema violation: ") + e.what());
  }

  for (auto it = images.begin(); it != images.end();) {
    if (it->second.captions.empty()) {
      ++rep.dropped_without_caption;
      it = images.erase(it);
    } else {
      ++it;
    }
  }
  return Catalog(std::move(images));
}

std::array<std::int64_t, 4> rendered_box(const BBox& box, std::int64_t width,
                                         std::int64_t height) {
  auto half_up = [](double v) { return static_cast<std::int64_t>(std::floor(v + 0.5)); };
  const std::int64_t x = std::clamp<std::int64_t>(half_up(box.x), 0, width - 1);
  const std::int64_t y = std::clamp<std::int64_t>(half_up(box.y), 0, height - 1);
  const std::int64_t w = std::clamp<std::int64_t>(half_up(box.w), 1, width - x);
  const std::int64_t h = std::clamp<std::int64_t>(half_up(box.h), 1, height - y);
  return {x, y, w, h};
}

std::string render_annotation_text(const ImageAnnotation& ann,
                                   std::optional<std::size_t> caption_cap) {
  std::ostringstream out;
  const std::size_t n = std::min(ann.captions.size(), caption_cap.value_or(ann.captions.size()));
  bool first = true;
  auto newline = [&] {
    if (!first) out << '\n';
    first = false;
  };
  for (std::size_t i = 0; i < n; ++i) {
    newline();
    out << ann.captions[i];
  }
  for (const auto& obj : ann.objects) {
    const auto b = rendered_box(obj.bbox, ann.width, ann.height);
    newline();
    out << obj.category << ": [" << b[0] << ',' << b[1] << ',' << b[2] << ',' << b[3] << ']';
  }
  return out.str();
}

json to_json(const ImageAnnotation& ann) {
  json objects = json::array();
  for (const auto& o : ann.objects) {
    objects.push_back({{"category", o.category},
                       {"bbox", {o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h}}});
  }
  return {{"image_id", ann.image_id}, {"width", ann.width},       {"height", ann.height},
          {"file_name", ann.file_name}, {"captions", ann.captions}, {"objects", objects},
          {"text", render_annotation_text(ann)}};
}

}  // namespace dataengine
