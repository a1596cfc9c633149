#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "layoutdm/error.hpp"
#include "layoutdm/random.hpp"

namespace layoutdm {

/// Attribute streams of a flattened layout; position 5i+j of a sequence holds modality j.
enum class Modality : int { kCategory = 0, kX = 1, kY = 2, kW = 3, kH = 4 };

inline constexpr std::array<Modality, 5> kAllModalities{Modality::kCategory, Modality::kX, Modality::kY,
                                                        Modality::kW, Modality::kH};
inline constexpr std::array<Modality, 4> kGeometricModalities{Modality::kX, Modality::kY, Modality::kW,
                                                              Modality::kH};

inline Modality modality_at(int position) { return static_cast<Modality>(position % 5); }
inline bool is_size(Modality m) { return m == Modality::kW || m == Modality::kH; }

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kCategory: return "c";
    case Modality::kX: return "x";
    case Modality::kY: return "y";
    case Modality::kW: return "w";
    case Modality::kH: return "h";
  }
  return "?";
}

enum class QuantizerKind { kKMeans, kUniform, kPercentile };

inline std::string to_string(QuantizerKind k) {
  switch (k) {
    case QuantizerKind::kKMeans: return "kmeans";
    case QuantizerKind::kUniform: return "uniform";
    case QuantizerKind::kPercentile: return "percentile";
  }
  return "kmeans";
}

inline QuantizerKind quantizer_kind_from_string(const std::string& s) {
  if (s == "kmeans") return QuantizerKind::kKMeans;
  if (s == "uniform") return QuantizerKind::kUniform;
  if (s == "percentile") return QuantizerKind::kPercentile;
  throw Error(ErrorCode::kInvalidArgument, "unknown quantizer kind '" + s + "'");
}

namespace detail {

// Pads a strictly increasing centroid list up to `bins` entries by repeatedly splitting the
// widest gap (including the gaps to 0 and 1) at its midpoint.
inline std::vector<double> pad_with_midpoints(std::vector<double> c, int bins) {
  if (c.empty()) c.push_back(0.5);
  while (static_cast<int>(c.size()) < bins) {
    double best_gap = c.front();
    double insert = c.front() / 2;
    for (std::size_t i = 1; i < c.size(); ++i) {
      if (c[i] - c[i - 1] > best_gap) {
        best_gap = c[i] - c[i - 1];
        insert = (c[i] + c[i - 1]) / 2;
      }
    }
    if (1.0 - c.back() > best_gap) insert = (1.0 + c.back()) / 2;
    c.insert(std::upper_bound(c.begin(), c.end(), insert), insert);
  }
  return c;
}

inline std::vector<double> unique_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Index of the centroid nearest to v; ties go to the smaller centroid.
inline int nearest_centroid(std::span<const double> sorted, double v) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), v);
  if (it == sorted.begin()) return 0;
  if (it == sorted.end()) return static_cast<int>(sorted.size()) - 1;
  const int hi = static_cast<int>(it - sorted.begin());
  return (v - sorted[hi - 1] <= sorted[hi] - v) ? hi - 1 : hi;
}

// Globally optimal 1-D k-means over sorted values: contiguous-segment dynamic program over the
// distinct values, with the divide-and-conquer split-point optimisation.
inline std::vector<double> kmeans_1d(const std::vector<double>& sorted_values, int k) {
  std::vector<double> x;
  std::vector<double> w;
  for (double v : sorted_values) {
    if (x.empty() || v != x.back()) {
      x.push_back(v);
      w.push_back(0);
    }
    w.back() += 1;
  }
  const int n = static_cast<int>(x.size());
  k = std::min(k, n);
  std::vector<double> sw(n + 1, 0), sx(n + 1, 0), sxx(n + 1, 0);
  for (int i = 0; i < n; ++i) {
    sw[i + 1] = sw[i] + w[i];
    sx[i + 1] = sx[i] + w[i] * x[i];
    sxx[i + 1] = sxx[i] + w[i] * x[i] * x[i];
  }
  // squared error of the segment [i, j)
  auto cost = [&](int i, int j) {
    const double ww = sw[j] - sw[i];
    const double s = sx[j] - sx[i];
    return std::max(0.0, (sxx[j] - sxx[i]) - s * s / ww);
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(n + 1, kInf), cur(n + 1, kInf);
  std::vector<std::vector<int>> split(k, std::vector<int>(n + 1, 0));
  for (int j = 1; j <= n; ++j) prev[j] = cost(0, j);
  for (int c = 1; c < k; ++c) {
    std::fill(cur.begin(), cur.end(), kInf);
    auto solve = [&](auto&& self, int lo, int hi, int opt_lo, int opt_hi) -> void {
      if (lo > hi) return;
      const int mid = (lo + hi) / 2;
      int best_i = std::max(opt_lo, c);
      double best = kInf;
      for (int i = std::max(opt_lo, c); i <= std::min(mid - 1, opt_hi); ++i) {
        const double v = prev[i] + cost(i, mid);
        if (v < best) {
          best = v;
          best_i = i;
        }
      }
      cur[mid] = best;
      split[c][mid] = best_i;
      self(self, lo, mid - 1, opt_lo, best_i);
      self(self, mid + 1, hi, best_i, opt_hi);
    };
    solve(solve, c + 1, n, c, n - 1);
    std::swap(prev, cur);
  }
  std::vector<double> centers(k);
  int j = n;
  for (int c = k - 1; c >= 0; --c) {
    const int i = c == 0 ? 0 : split[c][j];
    centers[c] = (sx[j] - sx[i]) / (sw[j] - sw[i]);
    j = i;
  }
  return centers;
}

}  // namespace detail

/// Fits `bins` sorted centroids for one geometric modality. Returns them strictly increasing and
/// inside [0, 1]. When the data has fewer distinct values than `bins`, the distinct values are
/// padded with midpoints and a message is appended to `warnings`.
inline std::vector<double> fit_centroids(std::span<const double> values, int bins, QuantizerKind kind, bool size_modality,
                                         std::vector<std::string>* warnings = nullptr) {
  LAYOUTDM_REQUIRE(bins >= 2, ErrorCode::kInvalidArgument, "B must be at least 2");
  if (kind == QuantizerKind::kUniform) {
    std::vector<double> c(bins);
    for (int i = 0; i < bins; ++i) c[i] = size_modality ? (i + 1.0) / bins : static_cast<double>(i) / bins;
    return c;
  }
  LAYOUTDM_REQUIRE(!values.empty(), ErrorCode::kEmptyData, "no values to fit");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    LAYOUTDM_REQUIRE(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorCode::kOutOfRange, "value outside [0,1]");
  }
  std::sort(sorted.begin(), sorted.end());

  const auto distinct = detail::unique_sorted(sorted);
  if (static_cast<int>(distinct.size()) < bins) {
    if (warnings) {
      warnings->push_back("B_EXCEEDS_DISTINCT: " + std::to_string(distinct.size()) + " distinct values for B=" +
                          std::to_string(bins) + "; padded with midpoints");
    }
    return detail::pad_with_midpoints(distinct, bins);
  }

  std::vector<double> centers;
  if (kind == QuantizerKind::kPercentile) {
    const std::size_t n = sorted.size();
    for (int g = 0; g < bins; ++g) {
      const std::size_t lo = g * n / bins;
      const std::size_t hi = (g + 1) * n / bins;
      if (hi <= lo) continue;
      centers.push_back(std::accumulate(sorted.begin() + lo, sorted.begin() + hi, 0.0) / (hi - lo));
    }
  } else {
    centers = detail::kmeans_1d(sorted, bins);
  }
  centers = detail::unique_sorted(centers);
  if (static_cast<int>(centers.size()) < bins) {
    if (warnings) warnings->push_back("collapsed centroids padded with midpoints");
    centers = detail::pad_with_midpoints(centers, bins);
  }
  return centers;
}

/// Global token vocabulary: categories occupy [0, C), then x, y, w, h ranges of B ids each,
/// followed by the shared PAD and MASK ids.
class Vocabulary {
 public:
  Vocabulary() = default;

  Vocabulary(int num_categories, int bins, QuantizerKind kind, std::array<std::vector<double>, 4> centroids)
      : num_categories_(num_categories), bins_(bins), kind_(kind), centroids_(std::move(centroids)) {
    LAYOUTDM_REQUIRE(num_categories >= 1, ErrorCode::kInvalidArgument, "C must be positive");
    LAYOUTDM_REQUIRE(bins >= 2, ErrorCode::kInvalidArgument, "B must be at least 2");
    for (const auto& c : centroids_) {
      LAYOUTDM_REQUIRE(static_cast<int>(c.size()) == bins, ErrorCode::kShapeMismatch, "centroid count != B");
      for (std::size_t i = 0; i < c.size(); ++i) {
        LAYOUTDM_REQUIRE(c[i] >= 0.0 && c[i] <= 1.0, ErrorCode::kOutOfRange, "centroid outside [0,1]");
        LAYOUTDM_REQUIRE(i == 0 || c[i] > c[i - 1], ErrorCode::kInvalidArgument, "centroids not increasing");
      }
    }
    fitted_ = true;
  }

  /// Fits all four geometric modalities. `values[m]` holds the samples for x, y, w, h.
  static Vocabulary fit(int num_categories, const std::array<std::vector<double>, 4>& values, int bins,
                        QuantizerKind kind, std::vector<std::string>* warnings = nullptr) {
    std::array<std::vector<double>, 4> centroids;
    for (int m = 0; m < 4; ++m) {
      centroids[m] = fit_centroids(values[m], bins, kind, m >= 2, warnings);
    }
    return Vocabulary(num_categories, bins, kind, std::move(centroids));
  }

  bool fitted() const { return fitted_; }
  int num_categories() const { return num_categories_; }
  int bins() const { return bins_; }
  QuantizerKind kind() const { return kind_; }

  int size() const { return num_categories_ + 4 * bins_ + 2; }
  int pad() const { return num_categories_ + 4 * bins_; }
  int mask() const { return pad() + 1; }

  int range_begin(Modality m) const {
    return m == Modality::kCategory ? 0 : num_categories_ + (static_cast<int>(m) - 1) * bins_;
  }
  int range_size(Modality m) const { return m == Modality::kCategory ? num_categories_ : bins_; }
  bool in_range(int id, Modality m) const { return id >= range_begin(m) && id < range_begin(m) + range_size(m); }

  /// Number of ordinary diffusion states for a modality (its range plus PAD).
  int states(Modality m) const { return range_size(m) + 1; }

  /// Maps a global id onto the modality-local state index: range ids map to [0, K), PAD to K,
  /// MASK to K + 1. Ids of other modalities raise MODALITY_MISMATCH.
  int to_local(int id, Modality m) const {
    if (id == pad()) return range_size(m);
    if (id == mask()) return range_size(m) + 1;
    LAYOUTDM_REQUIRE(in_range(id, m), ErrorCode::kModalityMismatch,
                     "token " + std::to_string(id) + " outside modality " + modality_name(m));
    return id - range_begin(m);
  }
  int to_global(int local, Modality m) const {
    const int k = range_size(m);
    if (local == k) return pad();
    if (local == k + 1) return mask();
    return range_begin(m) + local;
  }

  const std::vector<double>& centroids(Modality m) const {
    LAYOUTDM_REQUIRE(m != Modality::kCategory, ErrorCode::kNotGeometric, "category has no centroids");
    return centroids_[static_cast<int>(m) - 1];
  }

  int encode(double value, Modality m) const {
    LAYOUTDM_REQUIRE(fitted_, ErrorCode::kUnfittedVocab, "vocabulary not fitted");
    const auto& c = centroids(m);
    return range_begin(m) + detail::nearest_centroid(c, value);
  }

  int encode_category(int category) const {
    LAYOUTDM_REQUIRE(fitted_, ErrorCode::kUnfittedVocab, "vocabulary not fitted");
    LAYOUTDM_REQUIRE(category >= 1 && category <= num_categories_, ErrorCode::kBadCategory,
                     "category " + std::to_string(category));
    return category - 1;
  }

  bool is_geometric(int id) const { return id >= num_categories_ && id < pad(); }

  Modality geometric_modality(int id) const {
    LAYOUTDM_REQUIRE(fitted_ && is_geometric(id), ErrorCode::kNotGeometric,
                     "token " + std::to_string(id) + " is not geometric");
    return static_cast<Modality>(1 + (id - num_categories_) / bins_);
  }

  /// Centroid of a geometric token (loc).
  double decode(int id) const {
    const Modality m = geometric_modality(id);
    return centroids_[static_cast<int>(m) - 1][id - range_begin(m)];
  }

  nlohmann::json to_json() const {
    return {{"C", num_categories_},
            {"B", bins_},
            {"kind", to_string(kind_)},
            {"centroids", {{"x", centroids_[0]}, {"y", centroids_[1]}, {"w", centroids_[2]}, {"h", centroids_[3]}}}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    try {
      const auto& c = j.at("centroids");
      return Vocabulary(j.at("C").get<int>(), j.at("B").get<int>(),
                        quantizer_kind_from_string(j.at("kind").get<std::string>()),
                        {c.at("x").get<std::vector<double>>(), c.at("y").get<std::vector<double>>(),
                         c.at("w").get<std::vector<double>>(), c.at("h").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kParseError, std::string("vocabulary json: ") + ex.what());
    }
  }

 private:
  int num_categories_ = 0;
  int bins_ = 0;
  QuantizerKind kind_ = QuantizerKind::kKMeans;
  std::array<std::vector<double>, 4> centroids_;
  bool fitted_ = false;
};

}  // namespace layoutdm
