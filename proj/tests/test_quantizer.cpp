#include <gtest/gtest.h>

#include <set>

#include "layoutdm/quantizer.hpp"

using namespace layoutdm;

namespace {

Vocabulary uniform_vocab(int categories, int bins) {
  return Vocabulary::fit(categories, {}, bins, QuantizerKind::kUniform);
}

double within_cluster_ss(const std::vector<double>& values, const std::vector<double>& centroids) {
  double ss = 0;
  for (double v : values) {
    const double c = centroids[detail::nearest_centroid(centroids, v)];
    ss += (v - c) * (v - c);
  }
  return ss;
}

}  // namespace

TEST(Quantizer, KMeansFindsThreeExactClusters) {
  const std::vector<double> values{0.0, 0.0, 0.5, 0.5, 1.0, 1.0};
  const auto c = fit_centroids(values, 3, QuantizerKind::kKMeans, false);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_DOUBLE_EQ(c[0], 0.0);
  EXPECT_DOUBLE_EQ(c[1], 0.5);
  EXPECT_DOUBLE_EQ(c[2], 1.0);
}

TEST(Quantizer, UniformCentroids) {
  const auto pos = fit_centroids({}, 4, QuantizerKind::kUniform, false);
  EXPECT_EQ(pos, (std::vector<double>{0.0, 0.25, 0.5, 0.75}));
  const auto size = fit_centroids({}, 4, QuantizerKind::kUniform, true);
  EXPECT_EQ(size, (std::vector<double>{0.25, 0.5, 0.75, 1.0}));
}

TEST(Quantizer, PercentileGroupMeans) {
  Rng rng(11);
  std::vector<double> values(1000);
  for (double& v : values) v = uniform01(rng);
  const auto c = fit_centroids(values, 4, QuantizerKind::kPercentile, false);

  // Independent computation: sort and average each quarter.
  auto sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::vector<double> expected_centers{0.125, 0.375, 0.625, 0.875};
  for (int g = 0; g < 4; ++g) {
    double mean = 0;
    for (int i = g * 250; i < (g + 1) * 250; ++i) mean += sorted[i];
    mean /= 250;
    EXPECT_NEAR(c[g], mean, 1e-12);
    EXPECT_NEAR(c[g], expected_centers[g], 0.05);
  }
}

TEST(Quantizer, FewerDistinctValuesThanBinsPadsAndWarns) {
  std::vector<std::string> warnings;
  const auto c = fit_centroids(std::vector<double>{0.2, 0.2, 0.8}, 5, QuantizerKind::kKMeans, false, &warnings);
  ASSERT_EQ(c.size(), 5u);
  EXPECT_FALSE(warnings.empty());
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GT(c[i], c[i - 1]);
  EXPECT_NE(std::find(c.begin(), c.end(), 0.2), c.end());
  EXPECT_NE(std::find(c.begin(), c.end(), 0.8), c.end());
}

TEST(Quantizer, ErrorsOnEmptyDataAndSmallB) {
  try {
    fit_centroids(std::vector<double>{}, 4, QuantizerKind::kKMeans, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyData);
  }
  EXPECT_THROW(fit_centroids(std::vector<double>{0.1}, 1, QuantizerKind::kKMeans, false), Error);
}

TEST(Quantizer, EncodeTieBreaksTowardSmallerCentroid) {
  const auto vocab = uniform_vocab(3, 4);
  EXPECT_EQ(vocab.encode(0.375, Modality::kX), vocab.range_begin(Modality::kX) + 1);
  EXPECT_EQ(vocab.encode(0.5, Modality::kX), vocab.range_begin(Modality::kX) + 2);
}

TEST(Quantizer, EncodeDecodeExhaustive) {
  Rng rng(5);
  std::array<std::vector<double>, 4> values;
  for (auto& v : values) {
    v.resize(500);
    for (double& x : v) x = uniform01(rng);
  }
  const auto vocab = Vocabulary::fit(6, values, 16, QuantizerKind::kKMeans);
  for (int id = vocab.num_categories(); id < vocab.pad(); ++id) {
    EXPECT_EQ(vocab.encode(vocab.decode(id), vocab.geometric_modality(id)), id);
  }
  const double d = vocab.decode(vocab.encode(0.51, Modality::kY));
  EXPECT_GE(d, 0.0);
  EXPECT_LE(d, 1.0);
}

TEST(Quantizer, DecodeRejectsNonGeometric) {
  const auto vocab = uniform_vocab(3, 4);
  for (int id : {0, 2, vocab.pad(), vocab.mask()}) {
    try {
      vocab.decode(id);
      FAIL() << id;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNotGeometric);
    }
  }
}

TEST(Quantizer, UnfittedVocabularyRefusesToEncode) {
  Vocabulary vocab;
  try {
    vocab.encode(0.3, Modality::kX);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnfittedVocab);
  }
}

TEST(Quantizer, EncodeIsMonotone) {
  Rng rng(2);
  std::vector<double> v(300);
  for (double& x : v) x = uniform01(rng) * uniform01(rng);
  const auto vocab = Vocabulary::fit(2, {v, v, v, v}, 32, QuantizerKind::kKMeans);
  int prev = -1;
  for (int i = 0; i <= 10000; ++i) {
    const int id = vocab.encode(i / 10000.0, Modality::kW);
    EXPECT_GE(id, prev);
    prev = id;
  }
}

TEST(Quantizer, KMeansBeatsUniformObjective) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    std::vector<double> v(200);
    // Clustered data so the comparison is meaningful.
    for (double& x : v) x = std::clamp(0.1 * uniform_int(rng, 0, 9) + 0.01 * uniform01(rng), 0.0, 1.0);
    const auto kmeans = fit_centroids(v, 8, QuantizerKind::kKMeans, false);
    const auto uniform = fit_centroids(v, 8, QuantizerKind::kUniform, false);
    EXPECT_LE(within_cluster_ss(v, kmeans), within_cluster_ss(v, uniform) + 1e-12) << trial;
  }
}

TEST(Quantizer, RangesDisjointAndExhaustive) {
  const auto vocab = uniform_vocab(7, 5);
  std::vector<int> owners(vocab.size(), 0);
  for (Modality m : kAllModalities) {
    for (int id = 0; id < vocab.size(); ++id) owners[id] += vocab.in_range(id, m) ? 1 : 0;
  }
  for (int id = 0; id < vocab.size(); ++id) {
    const bool special = id == vocab.pad() || id == vocab.mask();
    EXPECT_EQ(owners[id], special ? 0 : 1) << id;
  }
  EXPECT_EQ(vocab.size(), 7 + 4 * 5 + 2);
}

TEST(Quantizer, JsonRoundTrip) {
  const auto vocab = uniform_vocab(4, 8);
  const auto back = Vocabulary::from_json(vocab.to_json());
  EXPECT_EQ(back.to_json().dump(), vocab.to_json().dump());
  EXPECT_EQ(back.to_json()["kind"], "uniform");
}
