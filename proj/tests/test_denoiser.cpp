#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "layoutdm/corpus.hpp"
#include "layoutdm/denoiser.hpp"
#include "layoutdm/trainer.hpp"

using namespace layoutdm;

namespace {

constexpr int kM = 3;

DenoiserConfig toy_config() {
  DenoiserConfig c;
  c.layers = 2;
  c.heads = 4;
  c.embed_dim = 32;
  c.hidden_dim = 64;
  c.dropout = 0.0;
  c.max_elements = kM;
  c.timesteps = 10;
  return c;
}

Vocabulary toy_vocab() { return Vocabulary::fit(3, {}, 4, QuantizerKind::kUniform); }

struct Batch {
  std::vector<TokenSeq> z0, zt;
  std::vector<int> t;
};

Batch random_batch(const Vocabulary& vocab, const Schedule& schedule, int size, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  for (int i = 0; i < size; ++i) {
    Layout l;
    const int e = uniform_int(rng, 1, kM);
    for (int k = 0; k < e; ++k) {
      l.elements.push_back({uniform_int(rng, 1, vocab.num_categories()),
                            {uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng)}});
    }
    b.z0.push_back(flatten(l, vocab, kM));
    b.t.push_back(uniform_int(rng, 1, schedule.timesteps()));
    b.zt.push_back(corrupt(b.z0.back(), b.t.back(), schedule, vocab, rng));
  }
  return b;
}

}  // namespace

TEST(EncodePositions, ElementAndAttributeIndices) {
  const auto [element, attribute] = encode_positions(5 * kM);
  EXPECT_EQ(element[0], 0);
  EXPECT_EQ(attribute[0], 0);
  EXPECT_EQ(element[7], 1);
  EXPECT_EQ(attribute[7], 2);
  EXPECT_EQ(element[5 * kM - 1], kM - 1);
  EXPECT_EQ(attribute[5 * kM - 1], 4);
  EXPECT_THROW(encode_positions(7), Error);
}

TEST(DenoiserConfig, ValidationAndJson) {
  DenoiserConfig c = toy_config();
  c.heads = 5;
  EXPECT_THROW(c.validate(), Error);
  const auto round = DenoiserConfig::from_json(toy_config().to_json());
  EXPECT_EQ(round.to_json(), toy_config().to_json());
  const auto desk = DenoiserConfig::desk();
  EXPECT_EQ(desk.layers, 2);
  EXPECT_EQ(desk.embed_dim, 128);
  EXPECT_EQ(desk.hidden_dim, 512);
}

TEST(Denoiser, ForwardIsDeterministic) {
  const auto vocab = toy_vocab();
  const auto schedule = Schedule::linear(10);
  const Denoiser<float> a(toy_config(), vocab, 3), b(toy_config(), vocab, 3);
  const auto batch = random_batch(vocab, schedule, 4, 1);
  const auto la = a.forward(batch.zt, batch.t);
  const auto lb = b.forward(batch.zt, batch.t);
  ASSERT_EQ(la.rows(), 4 * 5 * kM);
  ASSERT_EQ(la.cols(), vocab.size());
  for (long i = 0; i < la.size(); ++i) {
    const float x = la.data()[i], y = lb.data()[i];
    ASSERT_TRUE(x == y || (std::isinf(x) && std::isinf(y)));
  }
}

TEST(Denoiser, LogitsRespectModalityMask) {
  const auto vocab = toy_vocab();
  const auto schedule = Schedule::linear(10);
  DenoiserConfig config = toy_config();
  config.dropout = 0.1;
  const Denoiser<double> net(config, vocab, 5);
  const auto batch = random_batch(vocab, schedule, 6, 2);
  Rng dropout(9);
  for (Rng* rng : {static_cast<Rng*>(nullptr), &dropout}) {
    const auto logits = net.forward(batch.zt, batch.t, rng);
    for (long r = 0; r < logits.rows(); ++r) {
      const Modality m = modality_at(static_cast<int>(r % (5 * kM)));
      EXPECT_EQ(logits(r, vocab.mask()), -std::numeric_limits<double>::infinity());
      const double top = logits.row(r).maxCoeff();
      const Eigen::RowVectorXd p = (logits.row(r).array() - top).unaryExpr([](double v) { return std::exp(v); });
      double inside = p(vocab.pad());
      for (int k = 0; k < vocab.range_size(m); ++k) inside += p(vocab.range_begin(m) + k);
      EXPECT_NEAR(inside / p.sum(), 1.0, 1e-15);
      for (int id = 0; id < vocab.size(); ++id) {
        if (id != vocab.pad() && !vocab.in_range(id, m)) {
          EXPECT_EQ(p(id), 0.0);
        }
      }
    }
  }
}

TEST(Denoiser, RejectsBadShapes) {
  const auto vocab = toy_vocab();
  const Denoiser<float> net(toy_config(), vocab, 0);
  const std::vector<TokenSeq> z{TokenSeq(5 * kM, vocab.mask())};
  const std::vector<int> ok{1}, bad_t{11}, two{1, 1};
  EXPECT_NO_THROW(net.forward(z, ok));
  EXPECT_THROW(net.forward(z, bad_t), Error);
  EXPECT_THROW(net.forward(z, two), Error);
  EXPECT_THROW(net.forward({TokenSeq(5 * kM - 1, vocab.mask())}, ok), Error);
  EXPECT_THROW(net.forward({TokenSeq(5 * kM, vocab.size())}, ok), Error);
  std::vector<float> wrong(net.num_params() + 1);
  Denoiser<float> copy = net;
  EXPECT_THROW(copy.set_params(wrong), Error);
}

TEST(Denoiser, ManifestCoversAllParameters) {
  const auto vocab = toy_vocab();
  for (bool decoupled : {true, false}) {
    DenoiserConfig c = toy_config();
    c.decoupled_pe = decoupled;
    const Denoiser<float> net(c, vocab, 0);
    std::size_t total = 0;
    for (const auto& p : net.manifest()) {
      EXPECT_EQ(p.offset, total) << p.name;
      total += p.size();
    }
    EXPECT_EQ(total, net.num_params());
    EXPECT_EQ(net.param("tok_emb").rows, vocab.size());
    if (decoupled) {
      EXPECT_EQ(net.param("elem_emb").rows, kM);
      EXPECT_EQ(net.param("attr_emb").rows, 5);
      EXPECT_THROW(net.param("pos_emb"), Error);
    } else {
      EXPECT_EQ(net.param("pos_emb").rows, 5 * kM);
      EXPECT_THROW(net.param("elem_emb"), Error);
    }
  }
}

namespace {

// Central-difference check of d(training loss)/d(param) for a few entries of every tensor.
void check_gradients(const DenoiserConfig& config, std::uint64_t seed) {
  const auto vocab = toy_vocab();
  const auto schedule = Schedule::linear(config.timesteps);
  Denoiser<double> net(config, vocab, seed);
  const auto batch = random_batch(vocab, schedule, 3, seed + 100);
  const bool dropout = config.dropout > 0;

  const auto loss_at = [&](Denoiser<double>::Cache* cache, Denoiser<double>::Mat* grad) {
    Rng rng(seed + 7);
    const auto logits = net.forward(batch.zt, batch.t, dropout ? &rng : nullptr, cache);
    return training_loss(logits, batch.z0, batch.zt, batch.t, vocab, schedule, 0.1, grad).total;
  };

  Denoiser<double>::Cache cache;
  Denoiser<double>::Mat dlogits;
  loss_at(&cache, &dlogits);
  std::vector<double> grad(net.num_params(), 0.0);
  net.backward(cache, dlogits, grad);

  Rng pick(seed);
  const double h = 1e-3;
  int checked = 0;
  for (const auto& info : net.manifest()) {
    for (int trial = 0; trial < 3; ++trial) {
      std::size_t index = info.offset + uniform_int(pick, 0, static_cast<int>(info.size()) - 1);
      if (info.name == "tok_emb") {
        // Rows of tokens absent from the batch have zero gradient; aim at a present token.
        const int token = batch.zt[0][uniform_int(pick, 0, 5 * kM - 1)];
        index = info.offset + static_cast<std::size_t>(token) * info.cols + uniform_int(pick, 0, info.cols - 1);
      }
      auto params = net.params();
      const double saved = params[index];
      params[index] = saved + h;
      const double plus = loss_at(nullptr, nullptr);
      params[index] = saved - h;
      const double minus = loss_at(nullptr, nullptr);
      params[index] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double analytic = grad[index];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      EXPECT_LE(std::abs(numeric - analytic) / scale, 1e-3)
          << info.name << "[" << index - info.offset << "] analytic " << analytic << " numeric " << numeric;
      ++checked;
    }
  }
  EXPECT_GT(checked, 40);
}

}  // namespace

TEST(DenoiserGradient, MatchesFiniteDifferences) { check_gradients(toy_config(), 11); }

TEST(DenoiserGradient, MatchesFiniteDifferencesWithDropout) {
  DenoiserConfig c = toy_config();
  c.dropout = 0.2;
  check_gradients(c, 12);
}

TEST(DenoiserGradient, MatchesFiniteDifferencesWithFlatPositions) {
  DenoiserConfig c = toy_config();
  c.decoupled_pe = false;
  check_gradients(c, 13);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  TrainConfig cfg;
  cfg.lr = 0.01;
  AdamW opt(3, cfg);
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 0.0};
  opt.step(std::span<double>(p), std::span<const double>(g));
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-6);
  EXPECT_DOUBLE_EQ(p[2], 0.5);
}

TEST(AdamW, DecoupledDecayShrinksWeights) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(1, cfg);
  std::vector<double> p{2.0};
  const std::vector<double> g{0.0};
  opt.step(std::span<double>(p), std::span<const double>(g));
  EXPECT_DOUBLE_EQ(p[0], 2.0 * (1 - 0.05));
}

TEST(TrainConfig, JsonAndValidation) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.lambda, 0.1);
  EXPECT_DOUBLE_EQ(c.lr, 5e-4);
  EXPECT_DOUBLE_EQ(c.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.beta2, 0.98);
  auto j = c.to_json();
  j["lambda"] = 0.25;
  EXPECT_DOUBLE_EQ(TrainConfig::from_json(j).lambda, 0.25);
  j["lr"] = 0.0;
  EXPECT_THROW(TrainConfig::from_json(j), Error);
}

namespace {

SyntheticSpec small_synthetic(int size, int max_elements) {
  SyntheticSpec s;
  s.size = size;
  s.max_elements = max_elements;
  s.seed = 4;
  s.ratios = {1.0, 0.0, 0.0};
  return s;
}

}  // namespace

TEST(Training, MemorizesAFixedBatch) {
  const auto corpus = gen_synthetic(small_synthetic(8, 6));
  ASSERT_EQ(corpus.train.size(), 8u);
  const auto vocab = fit_vocabulary(corpus.train, 5, 8, QuantizerKind::kKMeans);
  DenoiserConfig config = DenoiserConfig::desk();
  config.embed_dim = 64;
  config.hidden_dim = 128;
  config.max_elements = 6;
  config.dropout = 0.0;
  const auto schedule = Schedule::linear(config.timesteps);
  Denoiser<float> net(config, vocab, 1);

  Rng rng(2);
  std::vector<TokenSeq> z0, zt;
  std::vector<int> t;
  for (const auto& l : corpus.train) {
    z0.push_back(flatten(l, vocab, config.max_elements));
    t.push_back(uniform_int(rng, 1, config.timesteps));
    zt.push_back(corrupt(z0.back(), t.back(), schedule, vocab, rng));
  }
  TrainConfig tc;
  tc.lr = 1e-3;
  AdamW opt(net.num_params(), tc);
  std::vector<float> grad(net.num_params());
  Denoiser<float>::Cache cache;
  Denoiser<float>::Mat dlogits;
  LossValue loss;
  for (int step = 0; step < 500; ++step) {
    const auto logits = net.forward(zt, t, nullptr, &cache);
    loss = training_loss(logits, z0, zt, t, vocab, schedule, tc.lambda, &dlogits);
    std::fill(grad.begin(), grad.end(), 0.0f);
    net.backward(cache, dlogits, grad);
    opt.step(net.params(), std::span<const float>(grad));
  }
  EXPECT_LT(loss.aux, 0.05);
}

TEST(Training, SameSeedGivesIdenticalTrace) {
  const auto corpus = gen_synthetic(small_synthetic(64, 4));
  const auto vocab = fit_vocabulary(corpus.train, 5, 8, QuantizerKind::kKMeans);
  DenoiserConfig config = toy_config();
  config.max_elements = 4;
  config.dropout = 0.1;
  const auto schedule = Schedule::linear(config.timesteps);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.max_steps = 12;
  tc.seed = 21;
  std::vector<TrainResult> runs;
  std::vector<std::vector<float>> params;
  for (int r = 0; r < 2; ++r) {
    Denoiser<float> net(config, vocab, 8);
    runs.push_back(train(net, corpus.train, schedule, tc));
    params.emplace_back(net.params().begin(), net.params().end());
  }
  ASSERT_EQ(runs[0].trace.size(), 12u);
  ASSERT_EQ(runs[1].trace.size(), 12u);
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(runs[0].trace[i].loss, runs[1].trace[i].loss);
    EXPECT_EQ(runs[0].trace[i].step, i + 1);
  }
  EXPECT_EQ(params[0], params[1]);
  EXPECT_EQ(runs[0].ema_loss, runs[1].ema_loss);
}

TEST(Training, LossDecreasesOnSyntheticCorpus) {
  const auto corpus = gen_synthetic(small_synthetic(2000, 6));
  const auto vocab = fit_vocabulary(corpus.train, 5, 16, QuantizerKind::kKMeans);
  DenoiserConfig config = toy_config();
  config.max_elements = 6;
  config.timesteps = 50;
  const auto schedule = Schedule::linear(config.timesteps);
  Denoiser<float> net(config, vocab, 3);
  TrainConfig tc;
  tc.batch_size = 32;
  tc.max_steps = 400;
  tc.lr = 1e-3;
  int calls = 0;
  const auto result = train(net, corpus.train, schedule, tc, [&](const LossRecord&) { ++calls; });
  EXPECT_EQ(calls, 400);
  EXPECT_LT(moving_average(result.trace, 400, 50), moving_average(result.trace, 50, 50));
}

TEST(Training, RejectsEmptyDataAndScheduleMismatch) {
  const auto vocab = toy_vocab();
  Denoiser<float> net(toy_config(), vocab, 0);
  EXPECT_THROW(train(net, {}, Schedule::linear(10), TrainConfig{}), Error);
  Layout l;
  l.elements.push_back({1, {0.5, 0.5, 0.2, 0.2}});
  EXPECT_THROW(train(net, {l}, Schedule::linear(20), TrainConfig{}), Error);
}

TEST(Training, NetworkModelDrivesTheSampler) {
  const auto vocab = toy_vocab();
  const auto schedule = Schedule::linear(10);
  const Denoiser<float> net(toy_config(), vocab, 0);
  const NetworkModel<float> model(net, schedule);
  Sampler sampler(model);
  TaskCondition cond;
  cond.task = TaskKind::kUnconditional;
  cond.known.assign(5 * kM, vocab.mask());
  cond.mask.assign(5 * kM, 0);
  Rng rng(1);
  const auto result = sampler.sample(cond, 5, rng, {});
  ASSERT_EQ(result.tokens.size(), 5u);
  EXPECT_EQ(result.stats.network_calls, 10);
  for (const auto& seq : result.tokens) EXPECT_NO_THROW(check_modalities(seq, vocab));
}
