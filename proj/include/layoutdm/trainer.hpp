#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "json.hpp"
#include "layoutdm/denoiser.hpp"
#include "layoutdm/diffusion.hpp"
#include "layoutdm/sampler.hpp"

namespace layoutdm {

struct TrainConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int batch_size = 64;
  int epochs = 1;
  int max_steps = 0;  // stop after this many steps when > 0
  double lambda = 0.1;
  double ema_decay = 0.99;
  std::uint64_t seed = 0;

  void validate() const {
    LAYOUTDM_REQUIRE(lr > 0, ErrorCode::kInvalidArgument, "lr must be > 0");
    LAYOUTDM_REQUIRE(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorCode::kInvalidArgument,
                     "betas must be in [0,1)");
    LAYOUTDM_REQUIRE(batch_size >= 1 && epochs >= 1 && max_steps >= 0, ErrorCode::kInvalidArgument,
                     "batch size and epochs must be >= 1");
    LAYOUTDM_REQUIRE(lambda >= 0 && weight_decay >= 0, ErrorCode::kInvalidArgument, "lambda and decay must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"lr", lr},         {"beta1", beta1},         {"beta2", beta2},       {"eps", eps},
            {"weight_decay", weight_decay}, {"batch_size", batch_size}, {"epochs", epochs},
            {"max_steps", max_steps}, {"lambda", lambda}, {"ema_decay", ema_decay}, {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.lambda = j.value("lambda", c.lambda);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::size_t size, const TrainConfig& config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

  template <typename Scalar>
  void step(std::span<Scalar> params, std::span<const Scalar> grad) {
    LAYOUTDM_REQUIRE(params.size() == m_.size() && grad.size() == m_.size(), ErrorCode::kShapeMismatch,
                     "optimizer state size");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, t_);
    const double c2 = 1.0 - std::pow(config_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m_[i] = config_.beta1 * m_[i] + (1 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1 - config_.beta2) * g * g;
      double p = params[i];
      p -= config_.lr * config_.weight_decay * p;
      p -= config_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.eps);
      params[i] = static_cast<Scalar>(p);
    }
  }

  long steps() const { return t_; }

 private:
  TrainConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

struct LossRecord {
  int step = 0;
  double loss = 0;
  double vb = 0;
  double aux = 0;
};

struct TrainResult {
  std::vector<LossRecord> trace;
  double ema_loss = 0;
};

/// Mean of `loss` over the `window` records ending at (1-based) step `step`.
inline double moving_average(const std::vector<LossRecord>& trace, int step, int window) {
  LAYOUTDM_REQUIRE(step >= 1 && step <= static_cast<int>(trace.size()), ErrorCode::kInvalidArgument,
                   "step outside the trace");
  const int first = std::max(0, step - window);
  double sum = 0;
  for (int i = first; i < step; ++i) sum += trace[i].loss;
  return sum / (step - first);
}

using TrainCallback = std::function<void(const LossRecord&)>;

/// Trains `model` in place on `data`. Every batch shuffles element order, samples one timestep
/// per layout and corrupts the flattened sequence.
template <typename Scalar>
TrainResult train(Denoiser<Scalar>& model, const std::vector<Layout>& data, const Schedule& schedule,
                  const TrainConfig& config, const TrainCallback& on_step = {}) {
  config.validate();
  LAYOUTDM_REQUIRE(!data.empty(), ErrorCode::kEmptyData, "training set is empty");
  LAYOUTDM_REQUIRE(schedule.timesteps() == model.config().timesteps, ErrorCode::kShapeMismatch,
                   "schedule and denoiser disagree on T");
  const Vocabulary& vocab = model.vocabulary();
  const int max_elements = model.config().max_elements;
  Rng order_rng(derive_seed(config.seed, "order"));
  Rng element_rng(derive_seed(config.seed, "elements"));
  Rng time_rng(derive_seed(config.seed, "timestep"));
  Rng corrupt_rng(derive_seed(config.seed, "corruption"));
  Rng dropout_rng(derive_seed(config.seed, "dropout"));

  AdamW optimizer(model.num_params(), config);
  AlignedVector<Scalar> grad(model.num_params());
  typename Denoiser<Scalar>::Cache cache;
  typename Denoiser<Scalar>::Mat grad_logits;

  TrainResult result;
  bool first = true;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < config.epochs || config.max_steps > 0; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      if (config.max_steps > 0 && step >= config.max_steps) return result;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<TokenSeq> z0, zt;
      std::vector<int> t;
      for (std::size_t i = begin; i < end; ++i) {
        z0.push_back(flatten(data[order[i]], vocab, max_elements, &element_rng, true));
        t.push_back(uniform_int(time_rng, 1, schedule.timesteps()));
        zt.push_back(corrupt(z0.back(), t.back(), schedule, vocab, corrupt_rng));
      }
      const auto logits = model.forward(zt, t, &dropout_rng, &cache);
      LossValue loss;
      try {
        loss = training_loss(logits, z0, zt, t, vocab, schedule, config.lambda, &grad_logits);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonfiniteLoss) throw;
        throw Error(ErrorCode::kNonfiniteLoss, "non-finite loss at batch " + std::to_string(step) + ": " + e.what());
      }
      std::fill(grad.begin(), grad.end(), Scalar(0));
      model.backward(cache, grad_logits, grad);
      optimizer.step(model.params(), std::span<const Scalar>(grad));
      ++step;
      const LossRecord record{step, loss.total, loss.vb, loss.aux};
      result.trace.push_back(record);
      result.ema_loss = first ? loss.total : config.ema_decay * result.ema_loss + (1 - config.ema_decay) * loss.total;
      first = false;
      if (on_step) on_step(record);
    }
  }
  return result;
}

/// Exposes a trained denoiser to the sampler.
template <typename Scalar>
class NetworkModel : public DenoisingModel {
 public:
  NetworkModel(const Denoiser<Scalar>& net, const Schedule& schedule) : net_(net), schedule_(schedule) {
    LAYOUTDM_REQUIRE(schedule.timesteps() == net.config().timesteps, ErrorCode::kShapeMismatch,
                     "schedule and denoiser disagree on T");
  }

  const Vocabulary& vocabulary() const override { return net_.vocabulary(); }
  const Schedule& schedule() const override { return schedule_; }
  int max_elements() const override { return net_.config().max_elements; }

  Eigen::MatrixXd logits(const std::vector<TokenSeq>& zt, int t) const override {
    const std::vector<int> steps(zt.size(), t);
    return net_.forward(zt, steps).template cast<double>();
  }

 private:
  const Denoiser<Scalar>& net_;
  const Schedule& schedule_;
};

}  // namespace layoutdm
