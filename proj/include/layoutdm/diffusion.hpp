#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "json.hpp"
#include "layoutdm/error.hpp"
#include "layoutdm/quantizer.hpp"
#include "layoutdm/random.hpp"
#include "layoutdm/sequence.hpp"

namespace layoutdm {

/// One mask-and-replace transition over `states` ordinary states (PAD included) plus an
/// absorbing MASK state at local index `states`.
///
///   [to == from]  keep + replace
///   [to != from]  replace
///   [to == MASK]  mask
///   MASK column   e_MASK
///
/// Used both for single steps Q_t and for products of consecutive steps, which stay in the family.
struct MaskReplace {
  double keep = 1.0;
  double replace = 0.0;
  double mask = 0.0;
  int states = 1;

  int mask_index() const { return states; }

  double prob(int to, int from) const {
    if (from == states) return to == states ? 1.0 : 0.0;
    if (to == states) return mask;
    return to == from ? keep + replace : replace;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd q(states + 1, states + 1);
    for (int to = 0; to <= states; ++to)
      for (int from = 0; from <= states; ++from) q(to, from) = prob(to, from);
    return q;
  }
};

/// Cumulative mask-and-replace schedule shared by all modalities. Stores the cumulative keep
/// probability (alpha bar) and cumulative mask probability (gamma bar) for t = 0..T; the
/// per-modality replace probability follows from column-stochasticity.
class Schedule {
 public:
  Schedule() = default;

  Schedule(std::vector<double> alpha_bar, std::vector<double> gamma_bar)
      : alpha_bar_(std::move(alpha_bar)), gamma_bar_(std::move(gamma_bar)) {
    LAYOUTDM_REQUIRE(alpha_bar_.size() >= 2 && alpha_bar_.size() == gamma_bar_.size(), ErrorCode::kInvalidArgument,
                     "schedule needs T >= 1");
    LAYOUTDM_REQUIRE(alpha_bar_[0] == 1.0 && gamma_bar_[0] == 0.0, ErrorCode::kInvalidArgument,
                     "schedule must start at the identity");
    for (int t = 1; t <= timesteps(); ++t) {
      LAYOUTDM_REQUIRE(alpha_bar_[t] > 0 && gamma_bar_[t] < 1, ErrorCode::kInfeasibleSchedule,
                       "cumulative keep must stay positive and mask below 1");
      const double keep = alpha_bar_[t] / alpha_bar_[t - 1];
      const double mask = 1.0 - (1.0 - gamma_bar_[t]) / (1.0 - gamma_bar_[t - 1]);
      LAYOUTDM_REQUIRE(keep <= 1.0 && mask >= 0 && 1.0 - keep - mask >= -1e-15, ErrorCode::kInfeasibleSchedule,
                       "negative transition probability at t=" + std::to_string(t));
    }
  }

  /// Cumulative keep decays linearly from 1 to `alpha_bar_end`; cumulative mask rises
  /// linearly from 0 to `gamma_bar_end`.
  static Schedule linear(int timesteps, double alpha_bar_end = 1e-5, double gamma_bar_end = 0.9999) {
    LAYOUTDM_REQUIRE(timesteps >= 1, ErrorCode::kInvalidArgument, "T must be >= 1");
    std::vector<double> a(timesteps + 1), g(timesteps + 1);
    for (int t = 0; t <= timesteps; ++t) {
      const double f = static_cast<double>(t) / timesteps;
      a[t] = t == timesteps ? alpha_bar_end : 1.0 - f * (1.0 - alpha_bar_end);
      g[t] = t == timesteps ? gamma_bar_end : f * gamma_bar_end;
    }
    return Schedule(std::move(a), std::move(g));
  }

  /// Builds a schedule from per-step keep/mask probabilities (index 0 is step t=1).
  static Schedule from_steps(std::span<const double> keep, std::span<const double> mask) {
    LAYOUTDM_REQUIRE(keep.size() == mask.size() && !keep.empty(), ErrorCode::kInvalidArgument,
                     "step lists must be equal and non-empty");
    std::vector<double> a{1.0}, g{0.0};
    for (std::size_t i = 0; i < keep.size(); ++i) {
      LAYOUTDM_REQUIRE(keep[i] + mask[i] <= 1.0 && keep[i] >= 0 && mask[i] >= 0, ErrorCode::kInfeasibleSchedule,
                       "step " + std::to_string(i + 1) + " is not a valid transition");
      a.push_back(a.back() * keep[i]);
      g.push_back(1.0 - (1.0 - g.back()) * (1.0 - mask[i]));
    }
    return Schedule(std::move(a), std::move(g));
  }

  int timesteps() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  double gamma_bar(int t) const { return gamma_bar_.at(t); }

  /// Composite transition Q_{to} Q_{to-1} ... Q_{from+1}; identity when from == to.
  MaskReplace span(int from, int to, int states) const {
    LAYOUTDM_REQUIRE(0 <= from && from <= to && to <= timesteps(), ErrorCode::kInvalidArgument,
                     "bad step range [" + std::to_string(from) + "," + std::to_string(to) + "]");
    MaskReplace q;
    q.states = states;
    if (from == to) return q;
    q.keep = alpha_bar_[to] / alpha_bar_[from];
    q.mask = from == 0 ? gamma_bar_[to] : 1.0 - (1.0 - gamma_bar_[to]) / (1.0 - gamma_bar_[from]);
    q.replace = std::max(0.0, (1.0 - q.keep - q.mask) / states);
    return q;
  }

  MaskReplace step(int t, int states) const { return span(t - 1, t, states); }
  MaskReplace cumulative(int t, int states) const { return span(0, t, states); }

  nlohmann::json to_json() const { return {{"T", timesteps()}, {"alpha_bar", alpha_bar_}, {"gamma_bar", gamma_bar_}}; }

  static Schedule from_json(const nlohmann::json& j) {
    try {
      Schedule s(j.at("alpha_bar").get<std::vector<double>>(), j.at("gamma_bar").get<std::vector<double>>());
      LAYOUTDM_REQUIRE(s.timesteps() == j.at("T").get<int>(), ErrorCode::kCorruptFile, "schedule T mismatch");
      return s;
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kParseError, std::string("schedule json: ") + ex.what());
    }
  }

 private:
  std::vector<double> alpha_bar_;
  std::vector<double> gamma_bar_;
};

/// Default schedule with its feasibility checked against every modality's state count.
inline Schedule build_schedule(int timesteps, std::span<const int> states_per_modality, double alpha_bar_end = 1e-5,
                               double gamma_bar_end = 0.9999) {
  Schedule s = Schedule::linear(timesteps, alpha_bar_end, gamma_bar_end);
  for (int k : states_per_modality) {
    for (int t = 1; t <= timesteps; ++t) {
      LAYOUTDM_REQUIRE(s.step(t, k).replace >= 0, ErrorCode::kInfeasibleSchedule, "negative replace probability");
    }
  }
  return s;
}

/// Samples z_t ~ q(z_t | z_0) position by position with each modality's own transition.
inline TokenSeq corrupt(const TokenSeq& z0, int t, const Schedule& schedule, const Vocabulary& vocab, Rng& rng) {
  TokenSeq zt(z0.size());
  for (std::size_t p = 0; p < z0.size(); ++p) {
    const Modality m = modality_at(static_cast<int>(p));
    const int states = vocab.states(m);
    const int k = vocab.to_local(z0[p], m);
    LAYOUTDM_REQUIRE(k < states, ErrorCode::kInvalidArgument, "clean sequence contains MASK");
    if (t == 0) {
      zt[p] = z0[p];
      continue;
    }
    const auto q = schedule.cumulative(t, states);
    const double u = uniform01(rng);
    int local;
    if (u < q.mask) {
      local = states;
    } else if (u < q.mask + q.keep) {
      local = k;
    } else {
      local = std::min(states - 1, static_cast<int>((u - q.mask - q.keep) / (1.0 - q.mask - q.keep) * states));
    }
    zt[p] = vocab.to_global(local, m);
  }
  return zt;
}

/// q(z_{t-delta} | z_t, z_0) over the `states + 1` local ids (MASK last). delta = 1 gives the
/// one-step posterior; at t - delta = 0 the result collapses onto z_0.
inline std::vector<double> posterior(const Schedule& schedule, int zt, int z0, int t, int states, int delta = 1) {
  LAYOUTDM_REQUIRE(delta >= 1 && t - delta >= 0, ErrorCode::kInvalidArgument, "need 1 <= delta <= t");
  LAYOUTDM_REQUIRE(z0 >= 0 && z0 < states, ErrorCode::kInvalidArgument, "z_0 must be an ordinary state");
  const auto forward = schedule.span(t - delta, t, states);
  const auto prior = schedule.cumulative(t - delta, states);
  std::vector<double> out(states + 1);
  double total = 0;
  for (int x = 0; x <= states; ++x) {
    out[x] = forward.prob(zt, x) * prior.prob(x, z0);
    total += out[x];
  }
  LAYOUTDM_REQUIRE(total > 0, ErrorCode::kZeroEvidence, "q(z_t | z_0) = 0");
  for (double& v : out) v /= total;
  return out;
}

/// Reverse step p(z_{t-delta} | z_t) = sum over z0 of q(z_{t-delta} | z_t, z0) * x0[z0], evaluated
/// in closed form in O(states). `x0` holds the predicted clean distribution over the ordinary
/// states; z0 values with q(z_t | z0) = 0 carry no posterior and are dropped before normalizing.
class ReverseStep {
 public:
  ReverseStep(const Schedule& schedule, int zt, int t, int delta, int states)
      : forward_(schedule.span(t - delta, t, states)),
        prior_(schedule.cumulative(t - delta, states)),
        zt_(zt),
        states_(states) {
    LAYOUTDM_REQUIRE(delta >= 1 && t - delta >= 0, ErrorCode::kInvalidArgument, "need 1 <= delta <= t");
    double sum_ordinary = 0;
    a_.resize(states + 1);
    for (int x = 0; x <= states; ++x) {
      a_[x] = forward_.prob(zt, x);
      if (x < states) sum_ordinary += a_[x];
    }
    evidence_.resize(states);
    for (int k = 0; k < states; ++k) {
      evidence_[k] = a_[k] * prior_.keep + prior_.replace * sum_ordinary + a_[states] * prior_.mask;
    }
  }

  int states() const { return states_; }
  /// q(z_t | z0 = k)
  double evidence(int k) const { return evidence_[k]; }

  /// Writes the normalized reverse distribution over states + 1 ids into `out`.
  void apply(std::span<const double> x0, std::span<double> out) const {
    double r_total = 0;
    r_.assign(states_, 0.0);
    for (int k = 0; k < states_; ++k) {
      if (evidence_[k] > 0) {
        r_[k] = x0[k] / evidence_[k];
        r_total += r_[k];
      }
    }
    double z = 0;
    for (int x = 0; x < states_; ++x) {
      out[x] = a_[x] * (prior_.keep * r_[x] + prior_.replace * r_total);
      z += out[x];
    }
    out[states_] = a_[states_] * prior_.mask * r_total;
    z += out[states_];
    LAYOUTDM_REQUIRE(z > 0, ErrorCode::kZeroEvidence, "predicted x0 has no mass on states compatible with z_t");
    for (int x = 0; x <= states_; ++x) out[x] /= z;
  }

  /// Given dL/dp for p = apply(x0), accumulates dL/dx0 into `grad_x0`.
  void backward(std::span<const double> x0, std::span<const double> p, std::span<const double> grad_p,
                std::span<double> grad_x0) const {
    double z = 0;
    for (int k = 0; k < states_; ++k)
      if (evidence_[k] > 0) z += x0[k];
    double mean_g = 0;
    for (int x = 0; x <= states_; ++x) mean_g += p[x] * grad_p[x];
    // du(x) = dL/du(x) for the unnormalized mixture u.
    du_.resize(states_ + 1);
    for (int x = 0; x <= states_; ++x) du_[x] = (grad_p[x] - mean_g) / z;
    double ordinary = 0;
    for (int x = 0; x < states_; ++x) ordinary += a_[x] * du_[x];
    const double shared = prior_.replace * ordinary + a_[states_] * prior_.mask * du_[states_];
    for (int k = 0; k < states_; ++k) {
      if (evidence_[k] <= 0) continue;
      grad_x0[k] += (a_[k] * prior_.keep * du_[k] + shared) / evidence_[k];
    }
  }

 private:
  MaskReplace forward_;
  MaskReplace prior_;
  int zt_;
  int states_;
  std::vector<double> a_;
  std::vector<double> evidence_;
  mutable std::vector<double> r_;
  mutable std::vector<double> du_;
};

inline std::vector<double> reverse_distribution(const Schedule& schedule, std::span<const double> x0, int zt, int t,
                                                int states, int delta = 1) {
  std::vector<double> out(states + 1);
  ReverseStep(schedule, zt, t, delta, states).apply(x0, out);
  return out;
}

/// Per-position training terms for local logits over the `states` ordinary ids (PAD last).
struct PositionLoss {
  double vb = 0;   // KL(q(z_{t-1}|z_t,z_0) || p(z_{t-1}|z_t)), or -log p(z_0|z_1) at t = 1
  double aux = 0;  // -log x0(z_0)
};

/// Computes the per-position loss and, when `grad_logits` is non-empty, accumulates
/// d(vb + lambda * aux)/d(logits) scaled by `scale`.
inline PositionLoss position_loss(const Schedule& schedule, std::span<const double> logits, int z0, int zt, int t,
                                  double lambda, std::span<double> grad_logits = {}, double scale = 1.0) {
  const int states = static_cast<int>(logits.size());
  LAYOUTDM_REQUIRE(z0 >= 0 && z0 < states, ErrorCode::kInvalidArgument, "z_0 must be an ordinary state");
  LAYOUTDM_REQUIRE(t >= 1 && t <= schedule.timesteps(), ErrorCode::kInvalidArgument, "t out of range");

  double max_logit = -std::numeric_limits<double>::infinity();
  for (double l : logits) max_logit = std::max(max_logit, l);
  std::vector<double> x0(states);
  double norm = 0;
  for (int k = 0; k < states; ++k) {
    x0[k] = std::exp(logits[k] - max_logit);
    norm += x0[k];
  }
  for (double& v : x0) v /= norm;
  const double log_x0_true = logits[z0] - max_logit - std::log(norm);

  PositionLoss out;
  out.aux = -log_x0_true;

  ReverseStep step(schedule, zt, t, 1, states);
  std::vector<double> p(states + 1);
  step.apply(x0, p);
  std::vector<double> grad_p(states + 1, 0.0);
  constexpr double kTiny = 1e-300;
  if (t == 1) {
    out.vb = -std::log(std::max(p[z0], kTiny));
    grad_p[z0] = -1.0 / std::max(p[z0], kTiny);
  } else {
    const auto q = posterior(schedule, zt, z0, t, states);
    for (int x = 0; x <= states; ++x) {
      if (q[x] <= 0) continue;
      const double px = std::max(p[x], kTiny);
      out.vb += q[x] * (std::log(q[x]) - std::log(px));
      grad_p[x] = -q[x] / px;
    }
  }
  if (!std::isfinite(out.vb) || !std::isfinite(out.aux)) {
    throw Error(ErrorCode::kNonfiniteLoss, "non-finite loss at t=" + std::to_string(t));
  }

  if (!grad_logits.empty()) {
    std::vector<double> grad_x0(states, 0.0);
    step.backward(x0, p, grad_p, grad_x0);
    double dot = 0;
    for (int k = 0; k < states; ++k) dot += x0[k] * grad_x0[k];
    for (int k = 0; k < states; ++k) {
      const double softmax_vb = x0[k] * (grad_x0[k] - dot);
      const double softmax_aux = x0[k] - (k == z0 ? 1.0 : 0.0);
      grad_logits[k] += scale * (softmax_vb + lambda * softmax_aux);
    }
  }
  return out;
}

struct LossValue {
  double total = 0;
  double vb = 0;
  double aux = 0;
};

/// Batch training objective L_vb + lambda * L_aux averaged over every position of every
/// sequence. `logits` has one row per position (sequence-major) and one column per global id;
/// only the position's modality range and PAD are read. If `grad` is non-null it receives
/// dLoss/dlogits with zeros elsewhere.
template <typename Matrix>
LossValue training_loss(const Matrix& logits, const std::vector<TokenSeq>& z0, const std::vector<TokenSeq>& zt,
                        std::span<const int> t, const Vocabulary& vocab, const Schedule& schedule, double lambda,
                        Matrix* grad = nullptr) {
  LAYOUTDM_REQUIRE(lambda >= 0, ErrorCode::kInvalidArgument, "lambda must be >= 0");
  LAYOUTDM_REQUIRE(z0.size() == zt.size() && z0.size() == t.size() && !z0.empty(), ErrorCode::kShapeMismatch,
                   "batch size mismatch");
  const int n = static_cast<int>(z0[0].size());
  LAYOUTDM_REQUIRE(logits.rows() == static_cast<long>(z0.size()) * n && logits.cols() == vocab.size(),
                   ErrorCode::kShapeMismatch, "logit table shape");
  if (grad) grad->setZero(logits.rows(), logits.cols());
  const double scale = 1.0 / (static_cast<double>(z0.size()) * n);

  LossValue out;
  std::vector<double> local;
  std::vector<double> local_grad;
  for (std::size_t b = 0; b < z0.size(); ++b) {
    for (int p = 0; p < n; ++p) {
      const Modality m = modality_at(p);
      const int states = vocab.states(m);
      const int begin = vocab.range_begin(m);
      const long row = static_cast<long>(b) * n + p;
      local.resize(states);
      for (int k = 0; k + 1 < states; ++k) local[k] = static_cast<double>(logits(row, begin + k));
      local[states - 1] = static_cast<double>(logits(row, vocab.pad()));
      local_grad.assign(grad ? states : 0, 0.0);
      const auto term = position_loss(schedule, local, vocab.to_local(z0[b][p], m), vocab.to_local(zt[b][p], m), t[b],
                                      lambda, local_grad, scale);
      out.vb += term.vb * scale;
      out.aux += term.aux * scale;
      if (grad) {
        for (int k = 0; k + 1 < states; ++k) (*grad)(row, begin + k) = static_cast<typename Matrix::Scalar>(local_grad[k]);
        (*grad)(row, vocab.pad()) = static_cast<typename Matrix::Scalar>(local_grad[states - 1]);
      }
    }
  }
  out.total = out.vb + lambda * out.aux;
  if (!std::isfinite(out.total)) throw Error(ErrorCode::kNonfiniteLoss, "non-finite batch loss");
  return out;
}

}  // namespace layoutdm
