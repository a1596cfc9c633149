#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "layoutdm/error.hpp"
#include "layoutdm/quantizer.hpp"
#include "layoutdm/random.hpp"
#include "layoutdm/sequence.hpp"

namespace layoutdm {

/// Parameter and gradient storage. A fixed base alignment keeps vectorized reductions over
/// parameter maps bitwise reproducible between runs.
template <typename Scalar>
using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

struct DenoiserConfig {
  int layers = 4;
  int heads = 8;
  int embed_dim = 512;
  int hidden_dim = 2048;
  double dropout = 0.1;
  int max_elements = kDefaultMaxElements;
  int timesteps = 100;
  bool decoupled_pe = true;

  static DenoiserConfig desk() {
    DenoiserConfig c;
    c.layers = 2;
    c.heads = 8;
    c.embed_dim = 128;
    c.hidden_dim = 512;
    return c;
  }

  int sequence_length() const { return layoutdm::sequence_length(max_elements); }

  void validate() const {
    LAYOUTDM_REQUIRE(layers >= 1 && heads >= 1 && embed_dim >= 1 && hidden_dim >= 1 && max_elements >= 1 &&
                         timesteps >= 1,
                     ErrorCode::kInvalidArgument, "denoiser dimensions must be >= 1");
    LAYOUTDM_REQUIRE(embed_dim % heads == 0, ErrorCode::kInvalidArgument, "embed_dim must be divisible by heads");
    LAYOUTDM_REQUIRE(embed_dim % 2 == 0, ErrorCode::kInvalidArgument, "embed_dim must be even");
    LAYOUTDM_REQUIRE(dropout >= 0 && dropout < 1, ErrorCode::kInvalidArgument, "dropout must be in [0,1)");
  }

  nlohmann::json to_json() const {
    return {{"layers", layers},           {"heads", heads},         {"embed_dim", embed_dim},
            {"hidden_dim", hidden_dim},   {"dropout", dropout},     {"max_elements", max_elements},
            {"timesteps", timesteps},     {"decoupled_pe", decoupled_pe}};
  }

  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.dropout = j.value("dropout", c.dropout);
    c.max_elements = j.value("max_elements", c.max_elements);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.decoupled_pe = j.value("decoupled_pe", c.decoupled_pe);
    c.validate();
    return c;
  }
};

/// Name, shape and offset of one tensor inside a flat parameter vector.
struct ParamInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Element index and attribute index of every sequence position.
inline std::pair<std::vector<int>, std::vector<int>> encode_positions(int length) {
  LAYOUTDM_REQUIRE(length > 0 && length % kFieldsPerElement == 0, ErrorCode::kShapeMismatch,
                   "sequence length must be a positive multiple of 5");
  std::vector<int> element(length), attribute(length);
  for (int p = 0; p < length; ++p) {
    element[p] = p / kFieldsPerElement;
    attribute[p] = p % kFieldsPerElement;
  }
  return {element, attribute};
}

/// Transformer encoder predicting clean-token logits from a noisy sequence and its timestep.
/// Timestep enters through adaptive layer norm: each norm is parameter-free and modulated by
/// a per-sequence scale and shift computed from the timestep embedding.
template <typename Scalar>
class Denoiser {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using ColVec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct LayerCache {
    Mat mod1, xhat1, h1, qkv, cat, drop1;
    std::vector<Mat> probs;
    Mat mod2, xhat2, h2, u, g, drop2;
    ColVec sigma1, sigma2;
  };

  struct Cache {
    std::vector<TokenSeq> z;
    std::vector<int> t;
    Mat sin, e1, a1, e, se;
    std::vector<LayerCache> layers;
    Mat modf, xhatf, hf;
    ColVec sigmaf;
  };

  Denoiser() = default;

  Denoiser(const DenoiserConfig& config, const Vocabulary& vocab, std::uint64_t seed)
      : config_(config), vocab_(vocab) {
    config_.validate();
    LAYOUTDM_REQUIRE(vocab_.fitted(), ErrorCode::kUnfittedVocab, "denoiser needs a fitted vocabulary");
    build_manifest();
    params_.assign(num_params_, Scalar(0));
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (const auto& info : manifest_) {
      if (info.rows == 1) continue;  // biases start at zero
      for (std::size_t i = 0; i < info.size(); ++i) params_[info.offset + i] = static_cast<Scalar>(normal(rng));
    }
    build_mask();
  }

  const DenoiserConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<ParamInfo>& manifest() const { return manifest_; }
  std::size_t num_params() const { return num_params_; }
  std::span<Scalar> params() { return params_; }
  std::span<const Scalar> params() const { return params_; }

  const ParamInfo& param(const std::string& name) const {
    const auto it = by_name_.find(name);
    LAYOUTDM_REQUIRE(it != by_name_.end(), ErrorCode::kInvalidArgument, "no parameter named '" + name + "'");
    return manifest_[it->second];
  }

  void set_params(std::span<const Scalar> values) {
    LAYOUTDM_REQUIRE(values.size() == num_params_, ErrorCode::kShapeMismatch, "parameter count mismatch");
    params_.assign(values.begin(), values.end());
  }

  /// Logits of shape (batch * 5M) x K with out-of-modality ids and MASK set to -inf. Dropout is
  /// active only when `dropout_rng` is given.
  Mat forward(const std::vector<TokenSeq>& z, std::span<const int> t, Rng* dropout_rng = nullptr,
              Cache* cache = nullptr) const {
    const int batch = static_cast<int>(z.size());
    const int n = config_.sequence_length();
    const int d = config_.embed_dim;
    const int rows = batch * n;
    LAYOUTDM_REQUIRE(batch >= 1 && static_cast<int>(t.size()) == batch, ErrorCode::kShapeMismatch,
                     "need one timestep per sequence");
    for (int b = 0; b < batch; ++b) {
      LAYOUTDM_REQUIRE(static_cast<int>(z[b].size()) == n, ErrorCode::kShapeMismatch, "sequence length must be 5M");
      LAYOUTDM_REQUIRE(t[b] >= 1 && t[b] <= config_.timesteps, ErrorCode::kShapeMismatch, "timestep out of range");
      for (int id : z[b]) {
        LAYOUTDM_REQUIRE(id >= 0 && id < vocab_.size(), ErrorCode::kShapeMismatch, "token id outside vocabulary");
      }
    }
    Cache local;
    Cache& c = cache ? *cache : local;
    c.z = z;
    c.t.assign(t.begin(), t.end());
    const double keep = 1.0 - config_.dropout;
    const bool train = dropout_rng != nullptr && config_.dropout > 0;

    Mat x(rows, d);
    {
      const auto tok = mat("tok_emb");
      Mat position(n, d);
      if (config_.decoupled_pe) {
        const auto elem = mat("elem_emb");
        const auto attr = mat("attr_emb");
        for (int p = 0; p < n; ++p) position.row(p) = elem.row(p / kFieldsPerElement) + attr.row(p % kFieldsPerElement);
      } else {
        position = mat("pos_emb");
      }
      for (int b = 0; b < batch; ++b) {
        for (int p = 0; p < n; ++p) x.row(b * n + p) = tok.row(z[b][p]) + position.row(p);
      }
    }

    c.sin = sinusoid(c.t);
    c.e1 = c.sin * mat("t_w1");
    c.e1.rowwise() += vec("t_b1");
    c.a1 = silu(c.e1);
    c.e = c.a1 * mat("t_w2");
    c.e.rowwise() += vec("t_b2");
    c.se = silu(c.e);

    c.layers.resize(config_.layers);
    for (int l = 0; l < config_.layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      auto& lc = c.layers[l];

      lc.mod1 = c.se * mat(pre + "ada1_w");
      lc.mod1.rowwise() += vec(pre + "ada1_b");
      layer_norm(x, lc.xhat1, lc.sigma1);
      lc.h1 = modulate(lc.xhat1, lc.mod1, n);
      lc.qkv = lc.h1 * mat(pre + "qkv_w");
      lc.qkv.rowwise() += vec(pre + "qkv_b");
      attention(lc.qkv, batch, n, lc.cat, lc.probs);
      Mat a = lc.cat * mat(pre + "out_w");
      a.rowwise() += vec(pre + "out_b");
      if (train) {
        lc.drop1 = dropout_mask(rows, d, keep, *dropout_rng);
        x.array() += a.array() * lc.drop1.array();
      } else {
        lc.drop1.resize(0, 0);
        x += a;
      }

      lc.mod2 = c.se * mat(pre + "ada2_w");
      lc.mod2.rowwise() += vec(pre + "ada2_b");
      layer_norm(x, lc.xhat2, lc.sigma2);
      lc.h2 = modulate(lc.xhat2, lc.mod2, n);
      lc.u = lc.h2 * mat(pre + "ffn1_w");
      lc.u.rowwise() += vec(pre + "ffn1_b");
      lc.g = lc.u.unaryExpr([](Scalar v) { return gelu(v); });
      Mat f = lc.g * mat(pre + "ffn2_w");
      f.rowwise() += vec(pre + "ffn2_b");
      if (train) {
        lc.drop2 = dropout_mask(rows, d, keep, *dropout_rng);
        x.array() += f.array() * lc.drop2.array();
      } else {
        lc.drop2.resize(0, 0);
        x += f;
      }
    }

    c.modf = c.se * mat("final_ada_w");
    c.modf.rowwise() += vec("final_ada_b");
    layer_norm(x, c.xhatf, c.sigmaf);
    c.hf = modulate(c.xhatf, c.modf, n);
    Mat logits = c.hf * mat("head_w");
    logits.rowwise() += vec("head_b");
    for (int r = 0; r < rows; ++r) logits.row(r) += mask_.row(r % kFieldsPerElement);
    return logits;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits) for a cached forward.
  void backward(const Cache& c, const Mat& dlogits, std::span<Scalar> grad) const {
    LAYOUTDM_REQUIRE(grad.size() == num_params_, ErrorCode::kShapeMismatch, "gradient buffer size");
    const int batch = static_cast<int>(c.z.size());
    const int n = config_.sequence_length();
    const int d = config_.embed_dim;

    gmat(grad, "head_w").noalias() += c.hf.transpose() * dlogits;
    gvec(grad, "head_b") += dlogits.colwise().sum();
    Mat dh = dlogits * mat("head_w").transpose();

    Mat dse = Mat::Zero(batch, d);
    Mat dx = modulate_backward(dh, c.xhatf, c.sigmaf, c.modf, c.se, "final_ada", n, grad, dse);

    for (int l = config_.layers - 1; l >= 0; --l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      const auto& lc = c.layers[l];

      Mat df = lc.drop2.size() ? Mat(dx.array() * lc.drop2.array()) : dx;
      gmat(grad, pre + "ffn2_w").noalias() += lc.g.transpose() * df;
      gvec(grad, pre + "ffn2_b") += df.colwise().sum();
      Mat du = df * mat(pre + "ffn2_w").transpose();
      du.array() *= lc.u.unaryExpr([](Scalar v) { return gelu_grad(v); }).array();
      gmat(grad, pre + "ffn1_w").noalias() += lc.h2.transpose() * du;
      gvec(grad, pre + "ffn1_b") += du.colwise().sum();
      Mat dh2 = du * mat(pre + "ffn1_w").transpose();
      dx += modulate_backward(dh2, lc.xhat2, lc.sigma2, lc.mod2, c.se, pre + "ada2", n, grad, dse);

      Mat da = lc.drop1.size() ? Mat(dx.array() * lc.drop1.array()) : dx;
      gmat(grad, pre + "out_w").noalias() += lc.cat.transpose() * da;
      gvec(grad, pre + "out_b") += da.colwise().sum();
      Mat dcat = da * mat(pre + "out_w").transpose();
      Mat dqkv = attention_backward(dcat, lc.qkv, lc.probs, batch, n);
      gmat(grad, pre + "qkv_w").noalias() += lc.h1.transpose() * dqkv;
      gvec(grad, pre + "qkv_b") += dqkv.colwise().sum();
      Mat dh1 = dqkv * mat(pre + "qkv_w").transpose();
      dx += modulate_backward(dh1, lc.xhat1, lc.sigma1, lc.mod1, c.se, pre + "ada1", n, grad, dse);
    }

    {
      auto dtok = gmat(grad, "tok_emb");
      Mat dposition = Mat::Zero(n, d);
      for (int b = 0; b < batch; ++b) {
        for (int p = 0; p < n; ++p) {
          dtok.row(c.z[b][p]) += dx.row(b * n + p);
          dposition.row(p) += dx.row(b * n + p);
        }
      }
      if (config_.decoupled_pe) {
        auto delem = gmat(grad, "elem_emb");
        auto dattr = gmat(grad, "attr_emb");
        for (int p = 0; p < n; ++p) {
          delem.row(p / kFieldsPerElement) += dposition.row(p);
          dattr.row(p % kFieldsPerElement) += dposition.row(p);
        }
      } else {
        gmat(grad, "pos_emb") += dposition;
      }
    }

    Mat de = dse.array() * c.e.unaryExpr([](Scalar v) { return silu_grad(v); }).array();
    gmat(grad, "t_w2").noalias() += c.a1.transpose() * de;
    gvec(grad, "t_b2") += de.colwise().sum();
    Mat da1 = de * mat("t_w2").transpose();
    Mat de1 = da1.array() * c.e1.unaryExpr([](Scalar v) { return silu_grad(v); }).array();
    gmat(grad, "t_w1").noalias() += c.sin.transpose() * de1;
    gvec(grad, "t_b1") += de1.colwise().sum();
  }

  /// Mean over positions of the final normalized hidden state: one feature row per sequence.
  Mat features(const std::vector<TokenSeq>& z, std::span<const int> t) const {
    Cache c;
    forward(z, t, nullptr, &c);
    const int n = config_.sequence_length();
    Mat out(static_cast<int>(z.size()), config_.embed_dim);
    for (int b = 0; b < static_cast<int>(z.size()); ++b) out.row(b) = c.hf.middleRows(b * n, n).colwise().mean();
    return out;
  }

 private:
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;
  using MapRow = Eigen::Map<RowVec>;
  using CMapRow = Eigen::Map<const RowVec>;

  static constexpr double kNormEps = 1e-6;

  void add(const std::string& name, int rows, int cols) {
    by_name_[name] = manifest_.size();
    manifest_.push_back({name, rows, cols, num_params_});
    num_params_ += static_cast<std::size_t>(rows) * cols;
  }

  void build_manifest() {
    const int d = config_.embed_dim;
    const int h = config_.hidden_dim;
    const int k = vocab_.size();
    add("tok_emb", k, d);
    if (config_.decoupled_pe) {
      add("elem_emb", config_.max_elements, d);
      add("attr_emb", kFieldsPerElement, d);
    } else {
      add("pos_emb", config_.sequence_length(), d);
    }
    add("t_w1", d, d);
    add("t_b1", 1, d);
    add("t_w2", d, d);
    add("t_b2", 1, d);
    for (int l = 0; l < config_.layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      add(pre + "ada1_w", d, 2 * d);
      add(pre + "ada1_b", 1, 2 * d);
      add(pre + "qkv_w", d, 3 * d);
      add(pre + "qkv_b", 1, 3 * d);
      add(pre + "out_w", d, d);
      add(pre + "out_b", 1, d);
      add(pre + "ada2_w", d, 2 * d);
      add(pre + "ada2_b", 1, 2 * d);
      add(pre + "ffn1_w", d, h);
      add(pre + "ffn1_b", 1, h);
      add(pre + "ffn2_w", h, d);
      add(pre + "ffn2_b", 1, d);
    }
    add("final_ada_w", d, 2 * d);
    add("final_ada_b", 1, 2 * d);
    add("head_w", d, k);
    add("head_b", 1, k);
  }

  void build_mask() {
    const Scalar ninf = -std::numeric_limits<Scalar>::infinity();
    mask_ = Mat::Constant(kFieldsPerElement, vocab_.size(), ninf);
    for (Modality m : kAllModalities) {
      const int r = static_cast<int>(m);
      mask_.row(r).segment(vocab_.range_begin(m), vocab_.range_size(m)).setZero();
      mask_(r, vocab_.pad()) = 0;
    }
  }

  CMapMat mat(const std::string& name) const {
    const auto& info = param(name);
    return CMapMat(params_.data() + info.offset, info.rows, info.cols);
  }
  CMapRow vec(const std::string& name) const {
    const auto& info = param(name);
    return CMapRow(params_.data() + info.offset, info.cols);
  }
  MapMat gmat(std::span<Scalar> grad, const std::string& name) const {
    const auto& info = param(name);
    return MapMat(grad.data() + info.offset, info.rows, info.cols);
  }
  MapRow gvec(std::span<Scalar> grad, const std::string& name) const {
    const auto& info = param(name);
    return MapRow(grad.data() + info.offset, info.cols);
  }

  static Scalar sigmoid(Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); }
  static Scalar silu_scalar(Scalar v) { return v * sigmoid(v); }
  static Scalar silu_grad(Scalar v) {
    const Scalar s = sigmoid(v);
    return s * (Scalar(1) + v * (Scalar(1) - s));
  }
  static Mat silu(const Mat& m) { return m.unaryExpr([](Scalar v) { return silu_scalar(v); }); }
  static Scalar gelu(Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * Scalar(M_SQRT1_2))); }
  static Scalar gelu_grad(Scalar v) {
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * Scalar(M_SQRT1_2)));
    const Scalar pdf = std::exp(Scalar(-0.5) * v * v) * Scalar(0.3989422804014327);
    return cdf + v * pdf;
  }

  Mat sinusoid(const std::vector<int>& t) const {
    const int d = config_.embed_dim;
    const int half = d / 2;
    Mat s(static_cast<int>(t.size()), d);
    for (int b = 0; b < static_cast<int>(t.size()); ++b) {
      for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        s(b, i) = static_cast<Scalar>(std::sin(t[b] * freq));
        s(b, half + i) = static_cast<Scalar>(std::cos(t[b] * freq));
      }
    }
    return s;
  }

  static Mat dropout_mask(int rows, int cols, double keep, Rng& rng) {
    Mat m(rows, cols);
    const Scalar scale = static_cast<Scalar>(1.0 / keep);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < keep ? scale : Scalar(0);
    return m;
  }

  static void layer_norm(const Mat& x, Mat& xhat, ColVec& sigma) {
    xhat.resize(x.rows(), x.cols());
    sigma.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar mean = x.row(r).mean();
      const auto centered = x.row(r).array() - mean;
      const Scalar var = centered.square().mean();
      sigma(r) = std::sqrt(var + static_cast<Scalar>(kNormEps));
      xhat.row(r) = centered / sigma(r);
    }
  }

  // h = xhat * (1 + scale) + shift, with [scale | shift] = mod row of the owning sequence.
  static Mat modulate(const Mat& xhat, const Mat& mod, int n) {
    const Eigen::Index d = xhat.cols();
    Mat h(xhat.rows(), d);
    for (Eigen::Index b = 0; b < mod.rows(); ++b) {
      const auto scale = (mod.row(b).head(d).array() + Scalar(1)).matrix();
      const auto shift = mod.row(b).tail(d);
      for (int p = 0; p < n; ++p) {
        const Eigen::Index r = b * n + p;
        h.row(r) = (xhat.row(r).array() * scale.array() + shift.array()).matrix();
      }
    }
    return h;
  }

  // Back through modulate, the modulation linear layer and the norm. Returns d(loss)/dx and
  // accumulates into `dse` (gradient wrt SiLU(timestep embedding)).
  Mat modulate_backward(const Mat& dh, const Mat& xhat, const ColVec& sigma, const Mat& mod, const Mat& se,
                        const std::string& prefix, int n, std::span<Scalar> grad, Mat& dse) const {
    const Eigen::Index d = xhat.cols();
    const Eigen::Index batch = mod.rows();
    Mat dmod = Mat::Zero(batch, 2 * d);
    Mat dxhat(xhat.rows(), d);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto block = dh.middleRows(b * n, n);
      dmod.row(b).head(d) = (block.array() * xhat.middleRows(b * n, n).array()).colwise().sum();
      dmod.row(b).tail(d) = block.colwise().sum();
      const RowVec scale = (mod.row(b).head(d).array() + Scalar(1)).matrix();
      dxhat.middleRows(b * n, n) = (block.array().rowwise() * scale.array()).matrix();
    }
    gmat(grad, prefix + "_w").noalias() += se.transpose() * dmod;
    gvec(grad, prefix + "_b") += dmod.colwise().sum();
    dse.noalias() += dmod * mat(prefix + "_w").transpose();

    Mat dx(xhat.rows(), d);
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
      const auto g = dxhat.row(r).array();
      const auto xh = xhat.row(r).array();
      dx.row(r) = ((g - g.mean() - xh * (g * xh).mean()) / sigma(r)).matrix();
    }
    return dx;
  }

  void attention(const Mat& qkv, int batch, int n, Mat& cat, std::vector<Mat>& probs) const {
    const int d = config_.embed_dim;
    const int heads = config_.heads;
    const int dh = d / heads;
    const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
    cat.resize(static_cast<Eigen::Index>(batch) * n, d);
    probs.resize(static_cast<std::size_t>(batch) * heads);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto q = qkv.block(b * n, h * dh, n, dh);
        const auto k = qkv.block(b * n, d + h * dh, n, dh);
        const auto v = qkv.block(b * n, 2 * d + h * dh, n, dh);
        Mat& p = probs[static_cast<std::size_t>(b) * heads + h];
        p.noalias() = (q * k.transpose()) * scale;
        for (int r = 0; r < n; ++r) {
          const Scalar top = p.row(r).maxCoeff();
          p.row(r) = (p.row(r).array() - top).exp().matrix();
          p.row(r) /= p.row(r).sum();
        }
        cat.block(b * n, h * dh, n, dh).noalias() = p * v;
      }
    }
  }

  Mat attention_backward(const Mat& dcat, const Mat& qkv, const std::vector<Mat>& probs, int batch, int n) const {
    const int d = config_.embed_dim;
    const int heads = config_.heads;
    const int dh = d / heads;
    const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
    Mat dqkv(qkv.rows(), qkv.cols());
    Mat dp, ds;
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto q = qkv.block(b * n, h * dh, n, dh);
        const auto k = qkv.block(b * n, d + h * dh, n, dh);
        const auto v = qkv.block(b * n, 2 * d + h * dh, n, dh);
        const Mat& p = probs[static_cast<std::size_t>(b) * heads + h];
        const auto dout = dcat.block(b * n, h * dh, n, dh);
        dp.noalias() = dout * v.transpose();
        dqkv.block(b * n, 2 * d + h * dh, n, dh).noalias() = p.transpose() * dout;
        ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
        ds *= scale;
        dqkv.block(b * n, h * dh, n, dh).noalias() = ds * k;
        dqkv.block(b * n, d + h * dh, n, dh).noalias() = ds.transpose() * q;
      }
    }
    return dqkv;
  }

  DenoiserConfig config_;
  Vocabulary vocab_;
  std::vector<ParamInfo> manifest_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::size_t num_params_ = 0;
  AlignedVector<Scalar> params_;
  Mat mask_;
};

}  // namespace layoutdm
