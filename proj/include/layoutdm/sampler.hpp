#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "layoutdm/condition.hpp"
#include "layoutdm/diffusion.hpp"
#include "layoutdm/relations.hpp"

namespace layoutdm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Reweights a normalized categorical in log space: p'(k) ∝ p(k) exp(weight * prior(k)).
/// Entries with prior = -inf become exactly 0. A zero weight leaves `p` untouched.
inline void adjust_logits(std::span<double> p, std::span<const double> prior, double weight) {
  LAYOUTDM_REQUIRE(p.size() == prior.size(), ErrorCode::kShapeMismatch, "prior and distribution sizes differ");
  LAYOUTDM_REQUIRE(weight >= 0, ErrorCode::kInvalidArgument, "prior weight must be >= 0");
  if (weight == 0) return;
  double top = kNegInf;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double l = (p[k] > 0 && prior[k] != kNegInf) ? std::log(p[k]) + weight * prior[k] : kNegInf;
    p[k] = l;
    top = std::max(top, l);
  }
  LAYOUTDM_REQUIRE(top > kNegInf, ErrorCode::kAllMassesZero, "every id is suppressed");
  double total = 0;
  for (double& v : p) {
    v = v == kNegInf ? 0.0 : std::exp(v - top);
    total += v;
  }
  for (double& v : p) v /= total;
}

/// Keeps the smallest highest-probability set whose mass reaches `top_p` and renormalizes.
/// Ties are broken toward the smaller id.
inline void nucleus(std::span<double> p, double top_p) {
  LAYOUTDM_REQUIRE(top_p > 0 && top_p <= 1, ErrorCode::kInvalidArgument, "top_p must be in (0,1]");
  if (top_p >= 1) return;
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
  double kept = 0;
  std::size_t n = 0;
  while (n < order.size() && kept < top_p) kept += p[order[n++]];
  for (std::size_t i = n; i < order.size(); ++i) p[order[i]] = 0;
  for (double& v : p) v /= kept;
}

/// Prior table over the local ids (range, PAD, MASK) of one position.
using PositionPrior = std::vector<double>;

struct RefinePriorResult {
  std::vector<PositionPrior> table;  // one entry per sequence position; empty = no prior
  int widened = 0;                   // windows that held no centroid and were widened
};

/// Window prior around each noisy element's geometry. Element i of `noisy` drives slot i.
inline RefinePriorResult refine_prior(const Layout& noisy, PriorKind kind, double margin, const Vocabulary& vocab,
                                      int max_elements) {
  LAYOUTDM_REQUIRE(kind != PriorKind::kLossGuided, ErrorCode::kInvalidArgument, "not a refinement prior");
  LAYOUTDM_REQUIRE(margin > 0 && margin < 1, ErrorCode::kInvalidArgument, "margin must be in (0,1)");
  LAYOUTDM_REQUIRE(noisy.size() <= max_elements, ErrorCode::kTooManyElements, "noisy layout exceeds M");
  RefinePriorResult out;
  out.table.resize(sequence_length(max_elements));
  for (int i = 0; i < noisy.size(); ++i) {
    const BBox box = clamp_box(noisy.elements[i].bbox);
    const std::array<double, 4> observed{box.cx, box.cy, box.w, box.h};
    for (int k = 0; k < 4; ++k) {
      const Modality m = kGeometricModalities[k];
      const auto& loc = vocab.centroids(m);
      const int n = static_cast<int>(loc.size());
      std::vector<bool> inside(n);
      bool any = false;
      for (int j = 0; j < n; ++j) {
        inside[j] = std::abs(loc[j] - observed[k]) < margin;
        any = any || inside[j];
      }
      if (!any) {
        inside[detail::nearest_centroid(loc, observed[k])] = true;
        ++out.widened;
      }
      const double outside = kind == PriorKind::kRefineNegation ? kNegInf : 0.0;
      PositionPrior prior(vocab.states(m) + 1, outside);
      for (int j = 0; j < n; ++j) {
        if (!inside[j]) continue;
        const double d = loc[j] - observed[k];
        prior[j] = kind == PriorKind::kRefineDefault ? 1.0 : (kind == PriorKind::kRefineGaussian ? d * d : 0.0);
      }
      out.table[kFieldsPerElement * i + 1 + k] = std::move(prior);
    }
  }
  return out;
}

/// Local distributions (range, PAD, MASK) of the x, y, w, h positions of one element.
using ElementDistribution = std::array<std::vector<double>, 4>;

/// Mean centroid location under `p` restricted to the geometric ids. When `grad` is given it
/// receives d(mean)/d(p) for every local id.
inline double expected_coordinate(std::span<const double> p, std::span<const double> loc,
                                  std::vector<double>* grad = nullptr) {
  const std::size_t n = loc.size();
  double mass = 0, weighted = 0;
  for (std::size_t j = 0; j < n; ++j) {
    mass += p[j];
    weighted += p[j] * loc[j];
  }
  LAYOUTDM_REQUIRE(mass > 0, ErrorCode::kNoGeometricMass, "no probability on geometric ids");
  const double mean = weighted / mass;
  if (grad) {
    grad->assign(p.size(), 0.0);
    for (std::size_t j = 0; j < n; ++j) (*grad)[j] = (loc[j] - mean) / mass;
  }
  return mean;
}

inline BBox expected_box(const ElementDistribution& d, const Vocabulary& vocab) {
  std::array<double, 4> v{};
  for (int k = 0; k < 4; ++k) v[k] = expected_coordinate(d[k], vocab.centroids(kGeometricModalities[k]));
  return {v[0], v[1], v[2], v[3]};
}

struct RelationLoss {
  double value = 0;
  std::vector<ElementDistribution> grad;  // d(value)/d(probabilities), same shape as the input
};

/// Sum of relation penalties evaluated on expected boxes, with the gradient chained back to
/// the per-position probabilities.
inline RelationLoss relation_loss(const std::vector<ElementDistribution>& elements,
                                  const std::vector<RelationConstraint>& relations, const Vocabulary& vocab) {
  const int e = static_cast<int>(elements.size());
  std::vector<BBox> boxes(e);
  std::vector<std::array<std::vector<double>, 4>> dmean(e);
  std::vector<bool> used(e, false);
  for (const auto& r : relations) {
    validate(r, e);
    used[r.subject] = true;
    if (is_pairwise(r.kind)) used[r.object] = true;
  }
  for (int i = 0; i < e; ++i) {
    if (!used[i]) continue;
    std::array<double, 4> v{};
    for (int k = 0; k < 4; ++k) {
      v[k] = expected_coordinate(elements[i][k], vocab.centroids(kGeometricModalities[k]), &dmean[i][k]);
    }
    boxes[i] = {v[0], v[1], v[2], v[3]};
  }

  RelationLoss out;
  out.grad.resize(e);
  for (int i = 0; i < e; ++i)
    for (int k = 0; k < 4; ++k) out.grad[i][k].assign(elements[i][k].size(), 0.0);
  std::vector<std::array<double, 4>> dbox(e, std::array<double, 4>{});
  for (const auto& r : relations) {
    const int j = is_pairwise(r.kind) ? r.object : r.subject;
    const auto pen = relation_penalty(r, boxes[r.subject], boxes[j]);
    out.value += pen.value;
    for (int k = 0; k < 4; ++k) {
      dbox[r.subject][k] += pen.d_subject[k];
      if (is_pairwise(r.kind)) dbox[j][k] += pen.d_object[k];
    }
  }
  for (int i = 0; i < e; ++i) {
    if (!used[i]) continue;
    for (int k = 0; k < 4; ++k) {
      for (std::size_t n = 0; n < dmean[i][k].size(); ++n) out.grad[i][k][n] = dbox[i][k] * dmean[i][k][n];
    }
  }
  return out;
}

/// Anything that predicts clean-token logits for a batch of noisy sequences.
class DenoisingModel {
 public:
  virtual ~DenoisingModel() = default;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual const Schedule& schedule() const = 0;
  virtual int max_elements() const = 0;
  /// One row per position (sequence-major), one column per global id. Only the position's
  /// modality range and PAD are read.
  virtual Eigen::MatrixXd logits(const std::vector<TokenSeq>& zt, int t) const = 0;
};

enum class PartialPolicy { kDrop, kError };

struct SampleOptions {
  int delta = 1;
  double top_p = 1.0;
  int batch_size = 64;
  PartialPolicy partial = PartialPolicy::kDrop;
};

struct SampleStats {
  int denoising_steps = 0;  // per sequence
  long network_calls = 0;   // batched model invocations
  int dropped_partial = 0;
  int widened_windows = 0;
};

struct SampleResult {
  std::vector<TokenSeq> tokens;
  std::vector<Layout> layouts;
  SampleStats stats;
};

namespace detail {

struct PreparedCondition {
  const TaskCondition* condition = nullptr;
  // Static (refinement) priors: per position, a list of (weight, table).
  std::vector<std::vector<std::pair<double, const PositionPrior*>>> fixed;
  std::vector<RefinePriorResult> refine_tables;
  std::vector<const PriorSpec*> guided;
  std::vector<bool> no_pad;  // geometry positions of slots whose category is known and non-PAD
};

inline PreparedCondition prepare(const TaskCondition& c, const Vocabulary& vocab, int max_elements,
                                 SampleStats& stats) {
  validate(c, vocab, max_elements);
  PreparedCondition out;
  out.condition = &c;
  const int n = c.length();
  out.fixed.resize(n);
  out.refine_tables.reserve(c.weak_priors.size());
  for (const auto& prior : c.weak_priors) {
    if (prior.kind == PriorKind::kLossGuided) {
      if (!prior.relations.empty()) out.guided.push_back(&prior);
      continue;
    }
    out.refine_tables.push_back(refine_prior(prior.noisy, prior.kind, prior.margin, vocab, max_elements));
    stats.widened_windows += out.refine_tables.back().widened;
  }
  std::size_t table = 0;
  for (const auto& prior : c.weak_priors) {
    if (prior.kind == PriorKind::kLossGuided) continue;
    const auto& t = out.refine_tables[table++].table;
    for (int p = 0; p < n; ++p) {
      if (!t[p].empty() && c.mask[p] == 0) out.fixed[p].emplace_back(prior.weight, &t[p]);
    }
  }
  out.no_pad.assign(n, false);
  for (int p = 0; p < n; ++p) {
    const int cat = c.known[kFieldsPerElement * (p / kFieldsPerElement)];
    out.no_pad[p] = modality_at(p) != Modality::kCategory && cat != vocab.mask() && cat != vocab.pad();
  }
  return out;
}

}  // namespace detail

/// Reverse-diffusion sampler: strong constraints by overwriting known positions, weak
/// constraints by logit adjustment, optional nucleus truncation and step skipping.
class Sampler {
 public:
  explicit Sampler(const DenoisingModel& model) : model_(model) {}

  /// Draws `n` layouts under the same condition.
  SampleResult sample(const TaskCondition& condition, int n, Rng& rng, const SampleOptions& options = {}) const {
    LAYOUTDM_REQUIRE(n >= 0, ErrorCode::kInvalidArgument, "n must be >= 0");
    std::vector<const TaskCondition*> conds(n, &condition);
    return run(conds, rng, options);
  }

  /// Draws one layout per condition.
  SampleResult sample(const std::vector<TaskCondition>& conditions, Rng& rng, const SampleOptions& options = {}) const {
    std::vector<const TaskCondition*> conds;
    conds.reserve(conditions.size());
    for (const auto& c : conditions) conds.push_back(&c);
    return run(conds, rng, options);
  }

 private:
  SampleResult run(const std::vector<const TaskCondition*>& conds, Rng& rng, const SampleOptions& options) const {
    const Schedule& schedule = model_.schedule();
    const int T = schedule.timesteps();
    LAYOUTDM_REQUIRE(options.delta >= 1 && T % options.delta == 0, ErrorCode::kInvalidArgument,
                     "delta must divide T=" + std::to_string(T));
    LAYOUTDM_REQUIRE(options.top_p > 0 && options.top_p <= 1, ErrorCode::kInvalidArgument, "top_p must be in (0,1]");
    LAYOUTDM_REQUIRE(options.batch_size >= 1, ErrorCode::kInvalidArgument, "batch size must be >= 1");
    const Vocabulary& vocab = model_.vocabulary();
    const int max_elements = model_.max_elements();

    SampleResult result;
    result.stats.denoising_steps = T / options.delta;
    std::vector<detail::PreparedCondition> prepared;
    prepared.reserve(conds.size());
    for (const auto* c : conds) prepared.push_back(detail::prepare(*c, vocab, max_elements, result.stats));

    for (std::size_t begin = 0; begin < conds.size(); begin += options.batch_size) {
      const std::size_t end = std::min(conds.size(), begin + options.batch_size);
      std::vector<const detail::PreparedCondition*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&prepared[i]);
      auto tokens = run_batch(batch, rng, options, result.stats);
      for (auto& seq : tokens) {
        int dropped = 0;
        result.layouts.push_back(unflatten(seq, vocab, options.partial == PartialPolicy::kDrop, &dropped));
        result.stats.dropped_partial += dropped;
        result.tokens.push_back(std::move(seq));
      }
    }
    return result;
  }

  std::vector<TokenSeq> run_batch(const std::vector<const detail::PreparedCondition*>& batch, Rng& rng,
                                  const SampleOptions& options, SampleStats& stats) const {
    const Schedule& schedule = model_.schedule();
    const Vocabulary& vocab = model_.vocabulary();
    const int len = sequence_length(model_.max_elements());
    const int rows = static_cast<int>(batch.size());

    std::vector<TokenSeq> z(rows);
    for (int b = 0; b < rows; ++b) z[b] = batch[b]->condition->known;

    std::vector<std::vector<double>> dist(len);
    std::vector<double> x0;
    for (int t = schedule.timesteps(); t > 0; t -= options.delta) {
      const Eigen::MatrixXd logits = model_.logits(z, t);
      ++stats.network_calls;
      LAYOUTDM_REQUIRE(logits.rows() == static_cast<long>(rows) * len && logits.cols() == vocab.size(),
                       ErrorCode::kShapeMismatch, "model returned a logit table of the wrong shape");
      for (int b = 0; b < rows; ++b) {
        const auto& prep = *batch[b];
        const auto& cond = *prep.condition;
        for (int p = 0; p < len; ++p) {
          dist[p].clear();
          if (cond.mask[p]) continue;
          const Modality m = modality_at(p);
          const int states = vocab.states(m);
          const int begin = vocab.range_begin(m);
          const long row = static_cast<long>(b) * len + p;
          x0.resize(states);
          double top = kNegInf;
          for (int k = 0; k < states; ++k) {
            const int id = k + 1 < states ? begin + k : vocab.pad();
            x0[k] = (k + 1 == states && prep.no_pad[p]) ? kNegInf : logits(row, id);
            top = std::max(top, x0[k]);
          }
          LAYOUTDM_REQUIRE(top > kNegInf, ErrorCode::kAllMassesZero, "no admissible clean token");
          double total = 0;
          for (double& v : x0) {
            v = v == kNegInf ? 0.0 : std::exp(v - top);
            total += v;
          }
          for (double& v : x0) v /= total;
          dist[p].resize(states + 1);
          ReverseStep(schedule, vocab.to_local(z[b][p], m), t, options.delta, states).apply(x0, dist[p]);
          for (const auto& [weight, table] : prep.fixed[p]) adjust_logits(dist[p], *table, weight);
        }
        for (const PriorSpec* prior : prep.guided) guide(*prior, cond, dist);
        for (int p = 0; p < len; ++p) {
          if (cond.mask[p]) continue;
          nucleus(dist[p], options.top_p);
          const double total = std::accumulate(dist[p].begin(), dist[p].end(), 0.0);
          const int local = sample_categorical(dist[p], static_cast<int>(dist[p].size()), total, rng);
          z[b][p] = vocab.to_global(local, modality_at(p));
        }
        for (int p = 0; p < len; ++p) {
          LAYOUTDM_REQUIRE(!cond.mask[p] || z[b][p] == cond.known[p], ErrorCode::kInvalidCondition,
                           "known token changed during sampling");
        }
      }
    }
    return z;
  }

  // Loss-guided adjustment: repeatedly push each unknown geometric distribution down the
  // gradient of the relation loss evaluated on expected boxes.
  void guide(const PriorSpec& prior, const TaskCondition& cond, std::vector<std::vector<double>>& dist) const {
    if (prior.weight == 0) return;
    const Vocabulary& vocab = model_.vocabulary();
    int e = 0;
    for (const auto& r : prior.relations) e = std::max(e, std::max(r.subject, r.object) + 1);
    std::vector<ElementDistribution> elements(e);
    for (int rep = 0; rep < prior.repeats; ++rep) {
      for (int i = 0; i < e; ++i) {
        for (int k = 0; k < 4; ++k) {
          const int p = kFieldsPerElement * i + 1 + k;
          if (cond.mask[p]) {
            const Modality m = modality_at(p);
            elements[i][k].assign(vocab.states(m) + 1, 0.0);
            elements[i][k][vocab.to_local(cond.known[p], m)] = 1.0;
          } else {
            elements[i][k] = dist[p];
          }
        }
      }
      const auto loss = relation_loss(elements, prior.relations, vocab);
      for (int i = 0; i < e; ++i) {
        for (int k = 0; k < 4; ++k) {
          const int p = kFieldsPerElement * i + 1 + k;
          if (cond.mask[p]) continue;
          std::vector<double> pi(loss.grad[i][k].size());
          for (std::size_t n = 0; n < pi.size(); ++n) pi[n] = -loss.grad[i][k][n];
          adjust_logits(dist[p], pi, prior.weight);
        }
      }
    }
  }

  const DenoisingModel& model_;
};

}  // namespace layoutdm
