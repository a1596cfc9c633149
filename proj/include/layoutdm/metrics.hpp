#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "layoutdm/assignment.hpp"
#include "layoutdm/denoiser.hpp"
#include "layoutdm/layout.hpp"
#include "layoutdm/relations.hpp"
#include "layoutdm/sequence.hpp"

namespace layoutdm {

inline double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double h = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  return w > 0 && h > 0 ? w * h : 0.0;
}

inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return a.cx == b.cx && a.cy == b.cy && a.w == b.w && a.h == b.h ? 1.0 : 0.0;
  return inter / uni;
}

/// Mean IoU of the best one-to-one matching between same-category elements. Two empty
/// layouts score 1.
inline double max_iou_pair(const Layout& a, const Layout& b) {
  LAYOUTDM_REQUIRE(category_multiset(a) == category_multiset(b), ErrorCode::kCategoryMismatch,
                   "max_iou_pair needs identical category multisets");
  if (a.elements.empty()) return 1.0;
  std::map<int, std::pair<std::vector<BBox>, std::vector<BBox>>> groups;
  for (const auto& e : a.elements) groups[e.category].first.push_back(e.bbox);
  for (const auto& e : b.elements) groups[e.category].second.push_back(e.bbox);
  double total = 0;
  for (const auto& [category, boxes] : groups) {
    const auto& [ga, gb] = boxes;
    Eigen::MatrixXd w(ga.size(), gb.size());
    for (std::size_t i = 0; i < ga.size(); ++i)
      for (std::size_t j = 0; j < gb.size(); ++j) w(i, j) = iou(ga[i], gb[j]);
    total += max_weight_assignment(w).total;
  }
  return total / a.size();
}

/// Optimal one-to-one matching between two collections where only layouts with identical
/// category multisets can pair. Returns the summed max_iou_pair over matched pairs divided by
/// the number of generated layouts, so unmatched layouts count as 0.
inline double max_iou_collection(const std::vector<Layout>& generated, const std::vector<Layout>& reference) {
  LAYOUTDM_REQUIRE(!generated.empty() && !reference.empty(), ErrorCode::kInvalidArgument,
                   "max_iou_collection needs non-empty collections");
  std::map<std::vector<int>, std::pair<std::vector<int>, std::vector<int>>> groups;
  for (std::size_t i = 0; i < generated.size(); ++i) groups[category_multiset(generated[i])].first.push_back(i);
  for (std::size_t j = 0; j < reference.size(); ++j) groups[category_multiset(reference[j])].second.push_back(j);
  double total = 0;
  for (const auto& [key, members] : groups) {
    const auto& [gi, rj] = members;
    if (gi.empty() || rj.empty()) continue;
    Eigen::MatrixXd w(gi.size(), rj.size());
    for (std::size_t a = 0; a < gi.size(); ++a)
      for (std::size_t b = 0; b < rj.size(); ++b) w(a, b) = max_iou_pair(generated[gi[a]], reference[rj[b]]);
    total += max_weight_assignment(w).total;
  }
  return total / static_cast<double>(generated.size());
}

/// 100 x mean over elements of -log(1 - d), where d is the smallest distance from any of the
/// element's left, x-center, right, top, y-center or bottom coordinates to the same coordinate
/// of another element. Layouts with fewer than two elements score 0.
inline double alignment(const Layout& layout) {
  const int e = layout.size();
  if (e < 2) return 0.0;
  const auto coords = [](const BBox& b) {
    return std::array<double, 6>{b.left(), b.cx, b.right(), b.top(), b.cy, b.bottom()};
  };
  double total = 0;
  for (int i = 0; i < e; ++i) {
    const auto ci = coords(layout.elements[i].bbox);
    double d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < e; ++j) {
      if (j == i) continue;
      const auto cj = coords(layout.elements[j].bbox);
      for (int a = 0; a < 6; ++a) d = std::min(d, std::abs(ci[a] - cj[a]));
    }
    total += -std::log1p(-std::min(d, 1.0 - 1e-12));
  }
  return 100.0 * total / e;
}

/// Mean over elements of (sum of pairwise intersections with other elements, capped at the
/// element's own area) / own area. Zero-area elements contribute 0.
inline double overlap(const Layout& layout) {
  const int e = layout.size();
  if (e < 2) return 0.0;
  double total = 0;
  for (int i = 0; i < e; ++i) {
    const BBox& bi = layout.elements[i].bbox;
    const double area = bi.area();
    if (area <= 0) continue;
    double covered = 0;
    for (int j = 0; j < e; ++j) {
      if (j != i) covered += intersection_area(bi, layout.elements[j].bbox);
    }
    total += std::min(covered, area) / area;
  }
  return total / e;
}

/// Element-pair weight: sqrt(min area) * 2^(-center distance - 2 * (|dw| + |dh|)), and 0 for
/// different categories.
inline double docsim_weight(const Element& a, const Element& b) {
  if (a.category != b.category) return 0.0;
  const double center = std::hypot(a.bbox.cx - b.bbox.cx, a.bbox.cy - b.bbox.cy);
  const double shape = std::abs(a.bbox.w - b.bbox.w) + std::abs(a.bbox.h - b.bbox.h);
  return std::sqrt(std::min(a.bbox.area(), b.bbox.area())) * std::exp2(-center - 2.0 * shape);
}

/// Maximum-weight matching under docsim_weight, divided by the larger element count.
inline double docsim(const Layout& a, const Layout& b) {
  if (a.elements.empty() || b.elements.empty()) return 0.0;
  Eigen::MatrixXd w(a.size(), b.size());
  for (int i = 0; i < a.size(); ++i)
    for (int j = 0; j < b.size(); ++j) w(i, j) = docsim_weight(a.elements[i], b.elements[j]);
  return max_weight_assignment(w).total / std::max(a.size(), b.size());
}

struct DensityCoverage {
  double density = 0;
  double coverage = 0;
};

/// k-NN manifold estimates. Each reference point owns a ball whose radius is the distance to
/// its k-th nearest other reference point; membership is a strict inequality.
inline DensityCoverage density_coverage(const Eigen::MatrixXd& generated, const Eigen::MatrixXd& reference, int k) {
  LAYOUTDM_REQUIRE(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  LAYOUTDM_REQUIRE(generated.rows() >= k + 1 && reference.rows() >= k + 1, ErrorCode::kTooFewPoints,
                   "density/coverage needs at least k+1 points per set");
  LAYOUTDM_REQUIRE(generated.cols() == reference.cols(), ErrorCode::kShapeMismatch, "feature dimensions differ");
  const long n = reference.rows(), g = generated.rows();
  std::vector<double> radius(n);
  std::vector<double> row(n - 1);
  for (long j = 0; j < n; ++j) {
    long c = 0;
    for (long l = 0; l < n; ++l) {
      if (l != j) row[c++] = (reference.row(j) - reference.row(l)).norm();
    }
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    radius[j] = row[k - 1];
  }
  long inside = 0;
  std::vector<char> covered(n, 0);
  for (long i = 0; i < g; ++i) {
    for (long j = 0; j < n; ++j) {
      if ((generated.row(i) - reference.row(j)).norm() < radius[j]) {
        ++inside;
        covered[j] = 1;
      }
    }
  }
  DensityCoverage out;
  out.density = static_cast<double>(inside) / (static_cast<double>(k) * g);
  out.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / n;
  return out;
}

/// Fraction of (layout, constraint) pairs that are violated.
inline double violation_rate(const std::vector<Layout>& layouts,
                             const std::vector<std::vector<RelationConstraint>>& constraints) {
  LAYOUTDM_REQUIRE(layouts.size() == constraints.size(), ErrorCode::kShapeMismatch,
                   "one constraint list per layout");
  long total = 0, violated = 0;
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    for (const auto& r : constraints[i]) {
      validate(r, layouts[i].size());
      const BBox& bi = layouts[i].elements[r.subject].bbox;
      const BBox& bj = is_pairwise(r.kind) ? layouts[i].elements[r.object].bbox : bi;
      ++total;
      violated += is_violated(r, bi, bj) ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(violated) / total;
}

inline constexpr double kFidEpsilon = 1e-6;

namespace detail {

inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

inline void moments(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

}  // namespace detail

/// Frechet distance between Gaussians fitted to two feature sets (rows are samples). Both
/// covariances are regularized by kFidEpsilon * I.
inline double fid(const Eigen::MatrixXd& generated, const Eigen::MatrixXd& reference) {
  LAYOUTDM_REQUIRE(generated.rows() >= 2 && reference.rows() >= 2, ErrorCode::kTooFewPoints,
                   "fid needs at least two samples per set");
  LAYOUTDM_REQUIRE(generated.cols() == reference.cols(), ErrorCode::kShapeMismatch, "feature dimensions differ");
  Eigen::VectorXd m1, m2;
  Eigen::MatrixXd s1, s2;
  detail::moments(generated, m1, s1);
  detail::moments(reference, m2, s2);
  const auto eye = Eigen::MatrixXd::Identity(s1.rows(), s1.cols());
  s1 += kFidEpsilon * eye;
  s2 += kFidEpsilon * eye;
  const Eigen::MatrixXd r1 = detail::sqrt_psd(s1);
  Eigen::MatrixXd inner = r1 * s2 * r1;
  inner = (inner + inner.transpose()) / 2;
  const double cross = detail::sqrt_psd(inner).trace();
  const double value = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2 * cross;
  return std::max(value, 0.0);
}

/// Maps layouts to fixed-length feature rows.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
  virtual Eigen::MatrixXd extract(const std::vector<Layout>& layouts) const = 0;
};

/// Hand-made layout statistics: normalized category histogram, element count / M, and the
/// mean and standard deviation of each box coordinate.
class LayoutStatsExtractor : public FeatureExtractor {
 public:
  LayoutStatsExtractor(int num_categories, int max_elements)
      : num_categories_(num_categories), max_elements_(max_elements) {}

  int dim() const override { return num_categories_ + 1 + 8; }
  std::string name() const override { return "layout-stats"; }

  Eigen::MatrixXd extract(const std::vector<Layout>& layouts) const override {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<long>(layouts.size()), dim());
    for (std::size_t r = 0; r < layouts.size(); ++r) {
      const auto& l = layouts[r];
      const int e = l.size();
      out(r, num_categories_) = static_cast<double>(e) / max_elements_;
      if (e == 0) continue;
      std::array<double, 4> sum{}, sq{};
      for (const auto& el : l.elements) {
        out(r, el.category - 1) += 1.0 / e;
        const std::array<double, 4> v{el.bbox.cx, el.bbox.cy, el.bbox.w, el.bbox.h};
        for (int a = 0; a < 4; ++a) {
          sum[a] += v[a];
          sq[a] += v[a] * v[a];
        }
      }
      for (int a = 0; a < 4; ++a) {
        const double mean = sum[a] / e;
        out(r, num_categories_ + 1 + a) = mean;
        out(r, num_categories_ + 5 + a) = std::sqrt(std::max(sq[a] / e - mean * mean, 0.0));
      }
    }
    return out;
  }

 private:
  int num_categories_;
  int max_elements_;
};

/// Mean-pooled final hidden state of a trained denoiser at t = 1 on the clean, canonically
/// ordered sequence. Only comparable between runs that share the same network.
class DenoiserFeatureExtractor : public FeatureExtractor {
 public:
  explicit DenoiserFeatureExtractor(const Denoiser<float>& net, int batch_size = 64)
      : net_(net), batch_size_(batch_size) {}

  int dim() const override { return net_.config().embed_dim; }
  std::string name() const override { return "denoiser"; }

  Eigen::MatrixXd extract(const std::vector<Layout>& layouts) const override {
    Eigen::MatrixXd out(static_cast<long>(layouts.size()), dim());
    for (std::size_t begin = 0; begin < layouts.size(); begin += batch_size_) {
      const std::size_t end = std::min(layouts.size(), begin + batch_size_);
      std::vector<TokenSeq> z;
      for (std::size_t i = begin; i < end; ++i) {
        z.push_back(flatten(canonicalize(layouts[i]), net_.vocabulary(), net_.config().max_elements));
      }
      const std::vector<int> t(z.size(), 1);
      out.middleRows(static_cast<long>(begin), static_cast<long>(end - begin)) =
          net_.features(z, t).cast<double>();
    }
    return out;
  }

 private:
  const Denoiser<float>& net_;
  int batch_size_;
};

struct MetricReport {
  std::map<std::string, double> values;
  std::size_t samples = 0;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j{{"samples", samples}, {"config", config}};
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [k, v] : values) metrics[k] = v;
    j["metrics"] = metrics;
    return j;
  }

  std::string table() const {
    std::ostringstream ss;
    constexpr std::size_t kWidth = 22;
    const auto row = [&](const std::string& name) { ss << name << std::string(kWidth - name.size(), ' '); };
    row("metric");
    ss << "value\n";
    for (const auto& [k, v] : values) {
      row(k.size() < kWidth ? k : k.substr(0, kWidth - 1));
      ss << v << '\n';
    }
    row("samples");
    ss << samples << '\n';
    return ss.str();
  }
};

struct EvalOptions {
  int k = 5;                                        // density/coverage neighbourhood
  const FeatureExtractor* extractor = nullptr;      // enables fid, density and coverage
  bool paired = false;                              // generated[i] corresponds to reference[i]
  const std::vector<std::vector<RelationConstraint>>* constraints = nullptr;
};

inline double mean_of(const std::vector<Layout>& layouts, double (*metric)(const Layout&)) {
  double total = 0;
  long count = 0;
  for (const auto& l : layouts) {
    if (l.elements.empty()) continue;
    total += metric(l);
    ++count;
  }
  return count == 0 ? 0.0 : total / count;
}

inline MetricReport evaluate(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
                             const EvalOptions& options = {}) {
  LAYOUTDM_REQUIRE(!generated.empty(), ErrorCode::kEmptyData, "no generated layouts");
  MetricReport report;
  report.samples = generated.size();
  report.values["alignment"] = mean_of(generated, &alignment);
  report.values["overlap"] = mean_of(generated, &overlap);
  if (!reference.empty()) {
    report.values["reference_alignment"] = mean_of(reference, &alignment);
    report.values["reference_overlap"] = mean_of(reference, &overlap);
    report.values["max_iou"] = max_iou_collection(generated, reference);
  }
  if (options.paired) {
    LAYOUTDM_REQUIRE(generated.size() == reference.size(), ErrorCode::kShapeMismatch,
                     "paired evaluation needs equal counts");
    double sim = 0;
    for (std::size_t i = 0; i < generated.size(); ++i) sim += docsim(generated[i], reference[i]);
    report.values["docsim"] = sim / generated.size();
  }
  if (options.extractor != nullptr && !reference.empty()) {
    const auto fg = options.extractor->extract(generated);
    const auto fr = options.extractor->extract(reference);
    report.values["fid"] = fid(fg, fr);
    const auto dc = density_coverage(fg, fr, options.k);
    report.values["density"] = dc.density;
    report.values["coverage"] = dc.coverage;
    report.config["feature_extractor"] = options.extractor->name();
    report.config["fid_note"] = "features come from this artifact; not comparable to published FID values";
  }
  if (options.constraints != nullptr) report.values["violation_rate"] = violation_rate(generated, *options.constraints);
  report.config["k"] = options.k;
  report.config["references"] = reference.size();
  return report;
}

}  // namespace layoutdm
