#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "layoutdm/error.hpp"
#include "layoutdm/layout.hpp"

namespace layoutdm {

/// Pairwise kinds read "element `object` is <kind> relative to element `subject`"; the
/// single-element extensions (AREA, ASPECT) only use `subject` and `target`.
enum class RelationKind { kLarger, kSmaller, kEqualSize, kAbove, kBelow, kLeft, kRight, kArea, kAspect, kReadingOrder };

inline constexpr double kRelationTolerance = 0.1;

inline bool is_pairwise(RelationKind k) { return k != RelationKind::kArea && k != RelationKind::kAspect; }

inline std::string to_string(RelationKind k) {
  switch (k) {
    case RelationKind::kLarger: return "larger";
    case RelationKind::kSmaller: return "smaller";
    case RelationKind::kEqualSize: return "equal";
    case RelationKind::kAbove: return "above";
    case RelationKind::kBelow: return "below";
    case RelationKind::kLeft: return "left";
    case RelationKind::kRight: return "right";
    case RelationKind::kArea: return "area";
    case RelationKind::kAspect: return "aspect";
    case RelationKind::kReadingOrder: return "reading_order";
  }
  return "?";
}

inline RelationKind relation_kind_from_string(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(RelationKind::kReadingOrder); ++k) {
    if (to_string(static_cast<RelationKind>(k)) == s) return static_cast<RelationKind>(k);
  }
  throw Error(ErrorCode::kParseError, "unknown relation kind '" + s + "'");
}

struct RelationConstraint {
  RelationKind kind = RelationKind::kAbove;
  int subject = 0;  // i
  int object = 1;   // j
  double target = 0.0;
  double tolerance = kRelationTolerance;
};

inline void validate(const RelationConstraint& r, int num_elements) {
  LAYOUTDM_REQUIRE(r.subject >= 0 && r.subject < num_elements, ErrorCode::kInvalidCondition,
                   "relation subject index out of range");
  if (is_pairwise(r.kind)) {
    LAYOUTDM_REQUIRE(r.object >= 0 && r.object < num_elements, ErrorCode::kInvalidCondition,
                     "relation object index out of range");
    LAYOUTDM_REQUIRE(r.subject != r.object, ErrorCode::kInvalidCondition, "relation needs two distinct elements");
  }
}

inline nlohmann::json to_json(const RelationConstraint& r) {
  nlohmann::json j{{"kind", to_string(r.kind)}, {"i", r.subject}};
  if (is_pairwise(r.kind)) j["j"] = r.object;
  if (!is_pairwise(r.kind)) j["target"] = r.target;
  return j;
}

inline RelationConstraint relation_from_json(const nlohmann::json& j) {
  try {
    RelationConstraint r;
    r.kind = relation_kind_from_string(j.at("kind").get<std::string>());
    r.subject = j.at("i").get<int>();
    r.object = j.value("j", r.subject);
    r.target = j.value("target", 0.0);
    r.tolerance = j.value("tolerance", kRelationTolerance);
    return r;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("relation json: ") + ex.what());
  }
}

/// Penalty of one constraint for continuous boxes, with its gradient with respect to
/// (cx, cy, w, h) of the subject and object boxes.
struct RelationPenalty {
  double value = 0;
  std::array<double, 4> d_subject{};
  std::array<double, 4> d_object{};
};

inline RelationPenalty relation_penalty(const RelationConstraint& r, const BBox& bi, const BBox& bj) {
  RelationPenalty out;
  auto& di = out.d_subject;
  auto& dj = out.d_object;
  const double g = r.tolerance;
  switch (r.kind) {
    case RelationKind::kLarger: {
      // max((1+g) w_i h_i - w_j h_j, 0)
      const double v = (1 + g) * bi.w * bi.h - bj.w * bj.h;
      if (v > 0) {
        out.value = v;
        di = {0, 0, (1 + g) * bi.h, (1 + g) * bi.w};
        dj = {0, 0, -bj.h, -bj.w};
      }
      break;
    }
    case RelationKind::kSmaller: {
      const double v = (1 + g) * bj.w * bj.h - bi.w * bi.h;
      if (v > 0) {
        out.value = v;
        dj = {0, 0, (1 + g) * bj.h, (1 + g) * bj.w};
        di = {0, 0, -bi.h, -bi.w};
      }
      break;
    }
    case RelationKind::kEqualSize: {
      // max(|a_j - a_i| - g a_i, 0)
      const double diff = bj.w * bj.h - bi.w * bi.h;
      const double v = std::abs(diff) - g * bi.w * bi.h;
      if (v > 0) {
        out.value = v;
        const double s = diff > 0 ? 1.0 : -1.0;
        dj = {0, 0, s * bj.h, s * bj.w};
        di = {0, 0, -(s + g) * bi.h, -(s + g) * bi.w};
      }
      break;
    }
    case RelationKind::kAbove: {
      // bottom of j against top of i
      const double v = (bj.cy + bj.h / 2) - (bi.cy - bi.h / 2);
      if (v > 0) {
        out.value = v;
        dj = {0, 1, 0, 0.5};
        di = {0, -1, 0, 0.5};
      }
      break;
    }
    case RelationKind::kBelow: {
      const double v = (bi.cy + bi.h / 2) - (bj.cy - bj.h / 2);
      if (v > 0) {
        out.value = v;
        di = {0, 1, 0, 0.5};
        dj = {0, -1, 0, 0.5};
      }
      break;
    }
    case RelationKind::kLeft: {
      const double v = (bj.cx + bj.w / 2) - (bi.cx - bi.w / 2);
      if (v > 0) {
        out.value = v;
        dj = {1, 0, 0.5, 0};
        di = {-1, 0, 0.5, 0};
      }
      break;
    }
    case RelationKind::kRight: {
      const double v = (bi.cx + bi.w / 2) - (bj.cx - bj.w / 2);
      if (v > 0) {
        out.value = v;
        di = {1, 0, 0.5, 0};
        dj = {-1, 0, 0.5, 0};
      }
      break;
    }
    case RelationKind::kArea: {
      const double diff = r.target - bi.h * bi.w;
      out.value = std::abs(diff);
      const double s = diff > 0 ? -1.0 : (diff < 0 ? 1.0 : 0.0);
      di = {0, 0, s * bi.h, s * bi.w};
      break;
    }
    case RelationKind::kAspect: {
      const double w = std::max(bi.w, 1e-9);
      const double diff = r.target - bi.h / w;
      out.value = std::abs(diff);
      const double s = diff > 0 ? -1.0 : (diff < 0 ? 1.0 : 0.0);
      di = {0, 0, -s * bi.h / (w * w), s / w};
      break;
    }
    case RelationKind::kReadingOrder: {
      // distance from the canvas origin to the top-left corner; i should come before j
      auto dist = [](const BBox& b, std::array<double, 4>& grad, double sign) {
        const double a = b.cx - b.w / 2;
        const double c = b.cy - b.h / 2;
        const double d = std::sqrt(a * a + c * c);
        if (d > 0) grad = {sign * a / d, sign * c / d, -sign * a / (2 * d), -sign * c / (2 * d)};
        return d;
      };
      std::array<double, 4> gi{}, gj{};
      const double v = dist(bi, gi, 1.0) - dist(bj, gj, -1.0);
      if (v > 0) {
        out.value = v;
        di = gi;
        dj = gj;
      }
      break;
    }
  }
  return out;
}

/// True when the constraint counts as violated. Single-element targets use a relative
/// tolerance since an exact match has measure zero.
inline bool is_violated(const RelationConstraint& r, const BBox& bi, const BBox& bj) {
  const double v = relation_penalty(r, bi, bj).value;
  if (r.kind == RelationKind::kArea || r.kind == RelationKind::kAspect) return v > r.tolerance * std::abs(r.target);
  return v > 0;
}

}  // namespace layoutdm
