#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "layoutdm/layout.hpp"
#include "layoutdm/quantizer.hpp"
#include "layoutdm/random.hpp"
#include "layoutdm/relations.hpp"
#include "layoutdm/sequence.hpp"

namespace layoutdm {

enum class TaskKind {
  kUnconditional,
  kCategoryToSizePosition,  // C -> S+P
  kCategorySizeToPosition,  // C+S -> P
  kCompletion,
  kRefinement,
  kRelationship,
};

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kUnconditional: return "uncond";
    case TaskKind::kCategoryToSizePosition: return "c";
    case TaskKind::kCategorySizeToPosition: return "c+s";
    case TaskKind::kCompletion: return "completion";
    case TaskKind::kRefinement: return "refine";
    case TaskKind::kRelationship: return "relation";
  }
  return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(TaskKind::kRelationship); ++k) {
    if (to_string(static_cast<TaskKind>(k)) == s) return static_cast<TaskKind>(k);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown task '" + s + "'");
}

/// Tasks whose element count is fixed by the condition (PAD tail known).
inline bool has_fixed_count(TaskKind k) { return k != TaskKind::kUnconditional && k != TaskKind::kCompletion; }

enum class PriorKind { kRefineDefault, kRefineGaussian, kRefineNegation, kLossGuided };

inline std::string to_string(PriorKind k) {
  switch (k) {
    case PriorKind::kRefineDefault: return "default";
    case PriorKind::kRefineGaussian: return "gaussian";
    case PriorKind::kRefineNegation: return "negation";
    case PriorKind::kLossGuided: return "loss";
  }
  return "?";
}

inline PriorKind prior_kind_from_string(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(PriorKind::kLossGuided); ++k) {
    if (to_string(static_cast<PriorKind>(k)) == s) return static_cast<PriorKind>(k);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown prior kind '" + s + "'");
}

/// Weak constraint added in log-probability space with weight `weight`.
struct PriorSpec {
  PriorKind kind = PriorKind::kRefineDefault;
  double weight = 3.0;
  double margin = 0.2;
  int repeats = 1;
  Layout noisy;                               // refinement kinds: element i drives slot i
  std::vector<RelationConstraint> relations;  // loss-guided kind
};

struct TaskCondition {
  TaskKind task = TaskKind::kUnconditional;
  TokenSeq known;                 // MASK where unknown
  std::vector<std::uint8_t> mask;  // 1 = known
  std::vector<PriorSpec> weak_priors;

  int length() const { return static_cast<int>(known.size()); }
};

/// Raises INVALID_CONDITION when the known/mask pair is inconsistent or a known id sits
/// outside its position's modality.
inline void validate(const TaskCondition& c, const Vocabulary& vocab, int max_elements) {
  const int n = sequence_length(max_elements);
  LAYOUTDM_REQUIRE(c.length() == n && static_cast<int>(c.mask.size()) == n, ErrorCode::kInvalidCondition,
                   "condition length must be 5M");
  for (int p = 0; p < n; ++p) {
    const bool known = c.mask[p] != 0;
    LAYOUTDM_REQUIRE(known == (c.known[p] != vocab.mask()), ErrorCode::kInvalidCondition,
                     "mask and known tokens disagree at position " + std::to_string(p));
    const int id = c.known[p];
    LAYOUTDM_REQUIRE(id == vocab.pad() || id == vocab.mask() || vocab.in_range(id, modality_at(p)),
                     ErrorCode::kInvalidCondition, "known token outside modality at position " + std::to_string(p));
  }
  for (const auto& prior : c.weak_priors) {
    LAYOUTDM_REQUIRE(prior.weight >= 0, ErrorCode::kInvalidCondition, "prior weight must be >= 0");
    LAYOUTDM_REQUIRE(prior.repeats >= 1, ErrorCode::kInvalidCondition, "prior repeats must be >= 1");
    if (prior.kind == PriorKind::kLossGuided) {
      for (const auto& r : prior.relations) validate(r, max_elements);
    } else {
      LAYOUTDM_REQUIRE(prior.margin > 0 && prior.margin < 1, ErrorCode::kInvalidCondition, "margin must be in (0,1)");
      LAYOUTDM_REQUIRE(prior.noisy.size() <= max_elements, ErrorCode::kInvalidCondition, "too many noisy elements");
    }
  }
}

/// Element with optional fields, as read from a condition file.
struct PartialElement {
  std::optional<int> category;
  std::array<std::optional<double>, 4> bbox;  // cx, cy, w, h
};

struct ConditionOptions {
  PriorKind refine_kind = PriorKind::kRefineDefault;
  double refine_weight = 3.0;
  double refine_margin = 0.2;
  double relation_weight = 1.0;
  double relation_fraction = 0.1;
  int relation_repeats = 3;
  double completion_max_fraction = 0.2;
};

namespace detail {

inline TaskCondition empty_condition(TaskKind task, const Vocabulary& vocab, int max_elements) {
  TaskCondition c;
  c.task = task;
  c.known.assign(sequence_length(max_elements), vocab.mask());
  c.mask.assign(c.known.size(), 0);
  return c;
}

inline void set_known(TaskCondition& c, int position, int id) {
  c.known[position] = id;
  c.mask[position] = 1;
}

inline void set_pad_tail(TaskCondition& c, int first_slot, const Vocabulary& vocab) {
  for (int p = kFieldsPerElement * first_slot; p < c.length(); ++p) set_known(c, p, vocab.pad());
}

}  // namespace detail

/// Ground-truth relation chosen for a pair, used to synthesize relationship conditions.
inline RelationConstraint true_relation(const Layout& layout, int i, int j, Rng& rng) {
  const BBox& a = layout.elements[i].bbox;
  const BBox& b = layout.elements[j].bbox;
  RelationConstraint size{RelationKind::kEqualSize, i, j};
  if (b.area() >= (1 + kRelationTolerance) * a.area()) {
    size.kind = RelationKind::kLarger;
  } else if (a.area() >= (1 + kRelationTolerance) * b.area()) {
    size.kind = RelationKind::kSmaller;
  }
  std::vector<RelationConstraint> location;
  if (b.bottom() <= a.top()) location.push_back({RelationKind::kAbove, i, j});
  if (b.top() >= a.bottom()) location.push_back({RelationKind::kBelow, i, j});
  if (b.right() <= a.left()) location.push_back({RelationKind::kLeft, i, j});
  if (b.left() >= a.right()) location.push_back({RelationKind::kRight, i, j});
  if (location.empty() || uniform01(rng) < 0.5) return size;
  return location[uniform_int(rng, 0, static_cast<int>(location.size()) - 1)];
}

/// Builds the condition for one of the six tasks from a complete layout. Elements are placed in
/// canonical order, so relation indices refer to canonical positions. For refinement the input
/// layout is taken as the noisy observation.
inline TaskCondition make_condition(TaskKind task, const Layout& input, const Vocabulary& vocab, int max_elements,
                                    Rng& rng, const ConditionOptions& options = {}) {
  const Layout layout = canonicalize(input);
  const int e = layout.size();
  auto c = detail::empty_condition(task, vocab, max_elements);
  if (task == TaskKind::kUnconditional) return c;
  LAYOUTDM_REQUIRE(e >= 1, ErrorCode::kEmptyLayout, "task " + to_string(task) + " needs at least one element");
  const TokenSeq full = flatten(layout, vocab, max_elements);

  switch (task) {
    case TaskKind::kUnconditional:
      break;
    case TaskKind::kCategoryToSizePosition:
    case TaskKind::kRefinement:
    case TaskKind::kRelationship:
      for (int i = 0; i < e; ++i) detail::set_known(c, kFieldsPerElement * i, full[kFieldsPerElement * i]);
      detail::set_pad_tail(c, e, vocab);
      break;
    case TaskKind::kCategorySizeToPosition:
      for (int i = 0; i < e; ++i) {
        for (int j : {0, 3, 4}) detail::set_known(c, kFieldsPerElement * i + j, full[kFieldsPerElement * i + j]);
      }
      detail::set_pad_tail(c, e, vocab);
      break;
    case TaskKind::kCompletion: {
      const int max_known = static_cast<int>(std::floor(options.completion_max_fraction * e + 1e-9));
      const int count = uniform_int(rng, 0, max_known);
      std::vector<int> order(e);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::sort(order.begin(), order.begin() + count);
      for (int s = 0; s < count; ++s) {
        for (int j = 0; j < kFieldsPerElement; ++j) {
          detail::set_known(c, kFieldsPerElement * s + j, full[kFieldsPerElement * order[s] + j]);
        }
      }
      break;
    }
  }

  if (task == TaskKind::kRefinement) {
    PriorSpec prior;
    prior.kind = options.refine_kind;
    prior.weight = options.refine_weight;
    prior.margin = options.refine_margin;
    prior.noisy = layout;
    for (auto& el : prior.noisy.elements) el.bbox = clamp_box(el.bbox);
    c.weak_priors.push_back(std::move(prior));
  }
  if (task == TaskKind::kRelationship) {
    PriorSpec prior;
    prior.kind = PriorKind::kLossGuided;
    prior.weight = options.relation_weight;
    prior.repeats = options.relation_repeats;
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < e; ++i)
      for (int j = i + 1; j < e; ++j) pairs.emplace_back(i, j);
    if (!pairs.empty()) {
      std::shuffle(pairs.begin(), pairs.end(), rng);
      const int count = std::max(1, static_cast<int>(std::lround(options.relation_fraction * pairs.size())));
      for (int k = 0; k < count; ++k) {
        auto [i, j] = pairs[k];
        if (uniform01(rng) < 0.5) std::swap(i, j);
        prior.relations.push_back(true_relation(layout, i, j, rng));
      }
    }
    c.weak_priors.push_back(std::move(prior));
  }
  return c;
}

/// Builds a condition from user-supplied partial elements. Whatever fields are present become
/// known tokens (geometry of refinement inputs becomes the prior instead), in the given order.
inline TaskCondition condition_from_partial(TaskKind task, const std::vector<PartialElement>& elements,
                                            const std::vector<RelationConstraint>& relations,
                                            const Vocabulary& vocab, int max_elements,
                                            const ConditionOptions& options = {}) {
  const int e = static_cast<int>(elements.size());
  LAYOUTDM_REQUIRE(e <= max_elements, ErrorCode::kTooManyElements, "condition has more than M elements");
  auto c = detail::empty_condition(task, vocab, max_elements);
  if (task == TaskKind::kUnconditional) return c;
  LAYOUTDM_REQUIRE(e >= 1, ErrorCode::kEmptyLayout, "task " + to_string(task) + " needs at least one element");

  PriorSpec refine;
  refine.kind = options.refine_kind;
  refine.weight = options.refine_weight;
  refine.margin = options.refine_margin;
  for (int i = 0; i < e; ++i) {
    const auto& el = elements[i];
    if (has_fixed_count(task)) {
      LAYOUTDM_REQUIRE(el.category.has_value(), ErrorCode::kInvalidCondition,
                       "task " + to_string(task) + " needs a category for every element");
    }
    if (el.category) detail::set_known(c, kFieldsPerElement * i, vocab.encode_category(*el.category));
    if (task == TaskKind::kRefinement) {
      Element noisy{*el.category, {}};
      for (int k = 0; k < 4; ++k) {
        LAYOUTDM_REQUIRE(el.bbox[k].has_value(), ErrorCode::kInvalidCondition, "refinement needs full boxes");
      }
      noisy.bbox = clamp_box({*el.bbox[0], *el.bbox[1], *el.bbox[2], *el.bbox[3]});
      refine.noisy.elements.push_back(noisy);
      continue;
    }
    for (int k = 0; k < 4; ++k) {
      if (!el.bbox[k]) continue;
      const double v = *el.bbox[k];
      LAYOUTDM_REQUIRE(v >= 0 && v <= 1, ErrorCode::kOutOfRange, "coordinate outside [0,1]");
      detail::set_known(c, kFieldsPerElement * i + 1 + k, vocab.encode(v, kGeometricModalities[k]));
    }
  }
  if (has_fixed_count(task)) detail::set_pad_tail(c, e, vocab);
  if (task == TaskKind::kRefinement) c.weak_priors.push_back(std::move(refine));
  if (task == TaskKind::kRelationship || !relations.empty()) {
    PriorSpec prior;
    prior.kind = PriorKind::kLossGuided;
    prior.weight = options.relation_weight;
    prior.repeats = options.relation_repeats;
    prior.relations = relations;
    for (const auto& r : relations) validate(r, e);
    c.weak_priors.push_back(std::move(prior));
  }
  return c;
}

}  // namespace layoutdm
