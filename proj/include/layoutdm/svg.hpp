#pragma once

#include <cstdio>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "layoutdm/layout.hpp"
#include "layoutdm/random.hpp"

namespace layoutdm {

/// Stable fill color for a category id.
inline std::string category_color(int category) {
  const std::uint64_t h = mix_seed(static_cast<std::uint64_t>(category) * 0x9e3779b97f4a7c15ULL + 1);
  // Keep channels in a mid range so labels stay readable on top.
  const int r = 64 + static_cast<int>(h & 0x7f);
  const int g = 64 + static_cast<int>((h >> 8) & 0x7f);
  const int b = 64 + static_cast<int>((h >> 16) & 0x7f);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Self-contained SVG of a layout: the canvas, one translucent rectangle per element and a
/// legend listing the categories present. `names[c - 1]` labels category c when given.
inline std::string render_svg(const Layout& layout, const std::vector<std::string>& names = {}) {
  const int w = layout.canvas[0], h = layout.canvas[1];
  std::set<int> present;
  for (const auto& e : layout.elements) present.insert(e.category);
  const int legend_h = present.empty() ? 0 : 8 + 18 * static_cast<int>(present.size());
  const auto label = [&](int c) {
    return c >= 1 && c <= static_cast<int>(names.size()) ? names[c - 1] : "category " + std::to_string(c);
  };

  std::ostringstream ss;
  ss.precision(6);
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h + legend_h
     << "\" viewBox=\"0 0 " << w << ' ' << h + legend_h << "\">\n";
  ss << "  <rect class=\"canvas\" x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"#ffffff\" stroke=\"#444444\"/>\n";
  for (const auto& e : layout.elements) {
    const auto color = category_color(e.category);
    ss << "  <rect class=\"element\" data-category=\"" << e.category << "\" x=\"" << e.bbox.left() * w << "\" y=\""
       << e.bbox.top() * h << "\" width=\"" << e.bbox.w * w << "\" height=\"" << e.bbox.h * h << "\" fill=\""
       << color << "\" fill-opacity=\"0.5\" stroke=\"" << color << "\"/>\n";
  }
  int row = 0;
  for (int c : present) {
    const int y = h + 8 + 18 * row++;
    ss << "  <rect class=\"legend\" x=\"8\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\"" << category_color(c)
       << "\"/>\n";
    ss << "  <text x=\"26\" y=\"" << y + 11 << "\" font-family=\"sans-serif\" font-size=\"12\">"
       << xml_escape(label(c)) << "</text>\n";
  }
  ss << "</svg>\n";
  return ss.str();
}

}  // namespace layoutdm
