#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "layoutdm/error.hpp"

namespace layoutdm {

inline constexpr int kFieldsPerElement = 5;
inline constexpr int kDefaultMaxElements = 25;

/// Normalized center-size box; all four values live in [0, 1].
struct BBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double left() const { return cx - w / 2; }
  double right() const { return cx + w / 2; }
  double top() const { return cy - h / 2; }
  double bottom() const { return cy + h / 2; }
  double area() const { return w * h; }

  bool operator==(const BBox&) const = default;
};

struct Element {
  int category = 1;  // 1-based, in [1, C]
  BBox bbox;

  bool operator==(const Element&) const = default;
};

struct Layout {
  std::vector<Element> elements;
  std::array<int, 2> canvas{360, 640};

  int size() const { return static_cast<int>(elements.size()); }
  bool empty() const { return elements.empty(); }
};

/// Checks element and layout invariants. `num_categories` and `max_elements` come from the
/// dataset. Zero sizes are accepted; the quantizer maps them onto the smallest size centroid.
inline void validate(const Layout& layout, int num_categories, int max_elements = kDefaultMaxElements) {
  LAYOUTDM_REQUIRE(layout.size() <= max_elements, ErrorCode::kTooManyElements,
                   std::to_string(layout.size()) + " elements exceeds M=" + std::to_string(max_elements));
  LAYOUTDM_REQUIRE(layout.canvas[0] > 0 && layout.canvas[1] > 0, ErrorCode::kOutOfRange,
                   "canvas size must be positive");
  for (std::size_t i = 0; i < layout.elements.size(); ++i) {
    const auto& e = layout.elements[i];
    LAYOUTDM_REQUIRE(e.category >= 1 && e.category <= num_categories, ErrorCode::kBadCategory,
                     "element " + std::to_string(i) + " has category " + std::to_string(e.category));
    const std::array<double, 4> v{e.bbox.cx, e.bbox.cy, e.bbox.w, e.bbox.h};
    for (double x : v) {
      LAYOUTDM_REQUIRE(std::isfinite(x) && x >= 0.0 && x <= 1.0, ErrorCode::kOutOfRange,
                       "element " + std::to_string(i) + " has a coordinate outside [0,1]");
    }
  }
}

/// Deterministic order used for metrics and rendering: category, then cy, then cx.
inline Layout canonicalize(Layout layout) {
  std::stable_sort(layout.elements.begin(), layout.elements.end(), [](const Element& a, const Element& b) {
    return std::tie(a.category, a.bbox.cy, a.bbox.cx, a.bbox.w, a.bbox.h) <
           std::tie(b.category, b.bbox.cy, b.bbox.cx, b.bbox.w, b.bbox.h);
  });
  return layout;
}

inline std::vector<int> category_multiset(const Layout& layout) {
  std::vector<int> cats;
  cats.reserve(layout.elements.size());
  for (const auto& e : layout.elements) cats.push_back(e.category);
  std::sort(cats.begin(), cats.end());
  return cats;
}

inline BBox clamp_box(BBox b) {
  auto c = [](double v) { return std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0); };
  return {c(b.cx), c(b.cy), c(b.w), c(b.h)};
}

// JSON: {"canvas":[W,H],"elements":[{"category":int,"bbox":[cx,cy,w,h]}...]}

inline nlohmann::json to_json(const Layout& layout) {
  nlohmann::json elements = nlohmann::json::array();
  for (const auto& e : layout.elements) {
    elements.push_back({{"category", e.category}, {"bbox", {e.bbox.cx, e.bbox.cy, e.bbox.w, e.bbox.h}}});
  }
  return {{"canvas", {layout.canvas[0], layout.canvas[1]}}, {"elements", std::move(elements)}};
}

inline Layout layout_from_json(const nlohmann::json& j) {
  try {
    Layout layout;
    if (j.contains("canvas")) {
      layout.canvas = {j.at("canvas").at(0).get<int>(), j.at("canvas").at(1).get<int>()};
    }
    for (const auto& je : j.at("elements")) {
      Element e;
      e.category = je.at("category").get<int>();
      const auto& b = je.at("bbox");
      LAYOUTDM_REQUIRE(b.is_array() && b.size() == 4, ErrorCode::kParseError, "bbox must have 4 numbers");
      e.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      layout.elements.push_back(e);
    }
    return layout;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("layout json: ") + ex.what());
  }
}

}  // namespace layoutdm
