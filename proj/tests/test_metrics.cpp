#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "layoutdm/assignment.hpp"
#include "layoutdm/metrics.hpp"

using namespace layoutdm;

namespace {

Element el(int c, double cx, double cy, double w, double h) { return {c, {cx, cy, w, h}}; }

Layout random_layout(Rng& rng, int e, int categories) {
  Layout l;
  for (int i = 0; i < e; ++i) {
    const double w = 0.05 + 0.5 * uniform01(rng), h = 0.05 + 0.5 * uniform01(rng);
    l.elements.push_back(el(uniform_int(rng, 1, categories), w / 2 + (1 - w) * uniform01(rng),
                            h / 2 + (1 - h) * uniform01(rng), w, h));
  }
  return l;
}

// Same category multiset, boxes perturbed and element order shuffled.
Layout jittered_copy(const Layout& l, Rng& rng) {
  Layout out = l;
  for (auto& e : out.elements) {
    e.bbox.cx = std::clamp(e.bbox.cx + 0.1 * (uniform01(rng) - 0.5), 0.0, 1.0);
    e.bbox.cy = std::clamp(e.bbox.cy + 0.1 * (uniform01(rng) - 0.5), 0.0, 1.0);
  }
  std::shuffle(out.elements.begin(), out.elements.end(), rng);
  return out;
}

double brute_max_iou(const Layout& a, const Layout& b) {
  std::vector<int> perm(b.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0;
  do {
    double total = 0;
    bool ok = true;
    for (int i = 0; i < a.size() && ok; ++i) {
      ok = a.elements[i].category == b.elements[perm[i]].category;
      if (ok) total += iou(a.elements[i].bbox, b.elements[perm[i]].bbox);
    }
    if (ok) best = std::max(best, total / a.size());
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(Assignment, MatchesBruteForceOnRectangularMatrices) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = uniform_int(rng, 1, 5), cols = uniform_int(rng, 1, 5);
    Eigen::MatrixXd w(rows, cols);
    for (long i = 0; i < w.size(); ++i) w.data()[i] = uniform01(rng);
    const auto got = max_weight_assignment(w);
    // Enumerate injections from the smaller side into the larger one.
    const bool flip = rows > cols;
    const Eigen::MatrixXd m = flip ? Eigen::MatrixXd(w.transpose()) : w;
    std::vector<int> perm(m.cols());
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1;
    do {
      double total = 0;
      for (int i = 0; i < m.rows(); ++i) total += m(i, perm[i]);
      best = std::max(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(got.total, best, 1e-12);
    std::vector<int> used;
    for (int c : got.row_to_col) {
      if (c >= 0) used.push_back(c);
    }
    EXPECT_EQ(static_cast<int>(used.size()), std::min(rows, cols));
    std::sort(used.begin(), used.end());
    EXPECT_EQ(std::adjacent_find(used.begin(), used.end()), used.end());
  }
}

TEST(Iou, BasicValues) {
  const BBox a{0.25, 0.25, 0.5, 0.5}, b{0.5, 0.25, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_NEAR(iou(a, b), 0.125 / 0.375, 1e-12);
  EXPECT_DOUBLE_EQ(iou(a, {0.9, 0.9, 0.1, 0.1}), 0.0);
}

TEST(MaxIouPair, IdenticalAndDisjoint) {
  Layout a;
  a.elements = {el(1, 0.2, 0.2, 0.2, 0.2), el(2, 0.7, 0.7, 0.3, 0.2)};
  EXPECT_DOUBLE_EQ(max_iou_pair(a, a), 1.0);
  Layout b;
  b.elements = {el(1, 0.8, 0.2, 0.1, 0.1), el(2, 0.2, 0.8, 0.1, 0.1)};
  EXPECT_DOUBLE_EQ(max_iou_pair(a, b), 0.0);
  Layout c = b;
  c.elements[0].category = 2;
  EXPECT_THROW(max_iou_pair(a, c), Error);
}

TEST(MaxIouPair, PicksTheBetterPairing) {
  Layout a, b;
  a.elements = {el(1, 0.2, 0.5, 0.3, 0.3), el(1, 0.7, 0.5, 0.3, 0.3)};
  b.elements = {el(1, 0.65, 0.5, 0.3, 0.3), el(1, 0.3, 0.5, 0.3, 0.3)};
  const double identity = (iou(a.elements[0].bbox, b.elements[0].bbox) + iou(a.elements[1].bbox, b.elements[1].bbox)) / 2;
  const double swapped = (iou(a.elements[0].bbox, b.elements[1].bbox) + iou(a.elements[1].bbox, b.elements[0].bbox)) / 2;
  ASSERT_LT(identity, swapped);
  EXPECT_NEAR(max_iou_pair(a, b), swapped, 1e-12);
}

TEST(MaxIouPair, MatchesPermutationBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Layout a = random_layout(rng, uniform_int(rng, 1, 6), 3);
    const Layout b = jittered_copy(a, rng);
    EXPECT_NEAR(max_iou_pair(a, b), brute_max_iou(a, b), 1e-12);
  }
}

TEST(MaxIouCollection, MatchesExhaustiveAssignment) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Layout> gen, ref;
    for (int i = 0; i < 3; ++i) {
      gen.push_back(random_layout(rng, uniform_int(rng, 1, 2), 2));
      ref.push_back(uniform01(rng) < 0.7 ? jittered_copy(gen[uniform_int(rng, 0, i)], rng)
                                         : random_layout(rng, uniform_int(rng, 1, 2), 2));
    }
    std::vector<int> perm{0, 1, 2};
    double best = 0;
    do {
      double total = 0;
      for (int i = 0; i < 3; ++i) {
        if (category_multiset(gen[i]) == category_multiset(ref[perm[i]])) total += max_iou_pair(gen[i], ref[perm[i]]);
      }
      best = std::max(best, total / 3);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(max_iou_collection(gen, ref), best, 1e-12);
  }
}

TEST(MaxIouCollection, IdentityAndNoMatches) {
  Rng rng(4);
  std::vector<Layout> gen;
  for (int i = 0; i < 5; ++i) gen.push_back(random_layout(rng, 3, 4));
  EXPECT_NEAR(max_iou_collection(gen, gen), 1.0, 1e-12);
  std::vector<Layout> other;
  for (int i = 0; i < 5; ++i) {
    Layout l;
    l.elements = {el(1, 0.5, 0.5, 0.1, 0.1)};
    for (int k = 0; k < 5; ++k) l.elements.push_back(el(1, 0.5, 0.5, 0.1, 0.1));
    other.push_back(l);
  }
  EXPECT_DOUBLE_EQ(max_iou_collection(gen, other), 0.0);
  EXPECT_THROW(max_iou_collection({}, gen), Error);
}

TEST(Alignment, GridAndSingleElement) {
  Layout grid;
  grid.elements = {el(1, 0.25, 0.25, 0.3, 0.3), el(1, 0.75, 0.25, 0.3, 0.3), el(2, 0.25, 0.75, 0.3, 0.3),
                   el(2, 0.75, 0.75, 0.3, 0.3)};
  EXPECT_DOUBLE_EQ(alignment(grid), 0.0);
  Layout single;
  single.elements = {el(1, 0.4, 0.4, 0.2, 0.2)};
  EXPECT_DOUBLE_EQ(alignment(single), 0.0);
  EXPECT_DOUBLE_EQ(overlap(single), 0.0);
}

TEST(Alignment, OffsetOnEveryAxis) {
  Layout l;
  l.elements = {el(1, 0.3, 0.3, 0.2, 0.2), el(1, 0.31, 0.31, 0.2, 0.2)};
  EXPECT_NEAR(alignment(l), 100 * -std::log(0.99), 1e-9);
  EXPECT_NEAR(alignment(l), 1.005, 1e-3);
}

TEST(Overlap, HandValues) {
  Layout apart;
  apart.elements = {el(1, 0.1, 0.1, 0.2, 0.2), el(1, 0.5, 0.5, 0.2, 0.2)};
  EXPECT_DOUBLE_EQ(overlap(apart), 0.0);
  Layout inside;
  inside.elements = {el(1, 0.5, 0.5, 0.6, 0.6), el(2, 0.5, 0.5, 0.2, 0.2)};
  // The small box contributes 1, the large one 0.04 / 0.36.
  EXPECT_NEAR(overlap(inside), (1.0 + 0.04 / 0.36) / 2, 1e-12);
  Layout half;
  half.elements = {el(1, 0.1, 0.1, 0.2, 0.2), el(1, 0.2, 0.1, 0.2, 0.2)};
  EXPECT_NEAR(overlap(half), 0.5, 1e-12);
}

TEST(DocSim, SelfEmptyAndTwoElements) {
  Layout a;
  a.elements = {el(1, 0.2, 0.3, 0.2, 0.1), el(2, 0.6, 0.6, 0.3, 0.4)};
  const double self = docsim(a, a);
  EXPECT_NEAR(self, (std::sqrt(0.02) + std::sqrt(0.12)) / 2, 1e-12);
  EXPECT_DOUBLE_EQ(docsim(a, Layout{}), 0.0);
  EXPECT_DOUBLE_EQ(docsim(Layout{}, a), 0.0);

  Layout b;
  b.elements = {el(1, 0.25, 0.3, 0.2, 0.2), el(1, 0.5, 0.5, 0.1, 0.1)};
  Layout c;
  c.elements = {el(1, 0.45, 0.5, 0.1, 0.15), el(1, 0.2, 0.35, 0.25, 0.2)};
  const auto w = [](const Element& x, const Element& y) {
    const double center = std::sqrt(std::pow(x.bbox.cx - y.bbox.cx, 2) + std::pow(x.bbox.cy - y.bbox.cy, 2));
    const double shape = std::abs(x.bbox.w - y.bbox.w) + std::abs(x.bbox.h - y.bbox.h);
    return std::sqrt(std::min(x.bbox.area(), y.bbox.area())) * std::pow(2.0, -center - 2 * shape);
  };
  const double straight = w(b.elements[0], c.elements[0]) + w(b.elements[1], c.elements[1]);
  const double crossed = w(b.elements[0], c.elements[1]) + w(b.elements[1], c.elements[0]);
  EXPECT_NEAR(docsim(b, c), std::max(straight, crossed) / 2, 1e-12);
}

TEST(DensityCoverage, MatchesBruteForceOnFivePoints) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd gen(5, 1), ref(5, 1);
    for (int i = 0; i < 5; ++i) {
      gen(i, 0) = uniform01(rng) * 4;
      ref(i, 0) = uniform01(rng) * 4;
    }
    for (int k = 1; k <= 3; ++k) {
      std::vector<double> radius(5);
      for (int j = 0; j < 5; ++j) {
        std::vector<double> d;
        for (int l = 0; l < 5; ++l) {
          if (l != j) d.push_back(std::abs(ref(j, 0) - ref(l, 0)));
        }
        std::sort(d.begin(), d.end());
        radius[j] = d[k - 1];
      }
      double count = 0;
      int covered = 0;
      for (int j = 0; j < 5; ++j) {
        bool any = false;
        for (int i = 0; i < 5; ++i) {
          if (std::abs(gen(i, 0) - ref(j, 0)) < radius[j]) {
            count += 1;
            any = true;
          }
        }
        covered += any;
      }
      const auto dc = density_coverage(gen, ref, k);
      EXPECT_NEAR(dc.density, count / (5.0 * k), 1e-12);
      EXPECT_NEAR(dc.coverage, covered / 5.0, 1e-12);
    }
  }
}

TEST(DensityCoverage, IdentityFarAndTooFew) {
  Eigen::MatrixXd ref(4, 2);
  ref << 0, 0, 1, 0, 0, 1, 1, 1;
  EXPECT_DOUBLE_EQ(density_coverage(ref, ref, 1).coverage, 1.0);
  const Eigen::MatrixXd far = ref.array() + 100.0;
  const auto dc = density_coverage(far, ref, 1);
  EXPECT_DOUBLE_EQ(dc.density, 0.0);
  EXPECT_DOUBLE_EQ(dc.coverage, 0.0);
  EXPECT_THROW(density_coverage(ref.topRows(2), ref, 2), Error);
}

TEST(ViolationRate, Counts) {
  Layout l;
  l.elements = {el(1, 0.5, 0.2, 0.2, 0.2), el(1, 0.5, 0.8, 0.2, 0.2)};
  // ABOVE(i, j) asks for element j above element i.
  const RelationConstraint ok{RelationKind::kAbove, 1, 0};
  const RelationConstraint bad{RelationKind::kAbove, 0, 1};
  std::vector<Layout> layouts(10, l);
  std::vector<std::vector<RelationConstraint>> cons(10);
  for (int i = 0; i < 10; ++i) cons[i] = {i < 3 ? bad : ok};
  EXPECT_NEAR(violation_rate(layouts, cons), 0.3, 1e-12);
  for (auto& c : cons) c = {ok};
  EXPECT_DOUBLE_EQ(violation_rate(layouts, cons), 0.0);
  for (auto& c : cons) c = {bad};
  EXPECT_DOUBLE_EQ(violation_rate(layouts, cons), 1.0);
  cons[0] = {RelationConstraint{RelationKind::kAbove, 0, 5}};
  EXPECT_THROW(violation_rate(layouts, cons), Error);
}

TEST(Fid, IdentityClosedFormAndSymmetry) {
  Rng rng(6);
  Eigen::MatrixXd x(200, 4), y(150, 4);
  for (long i = 0; i < x.size(); ++i) x.data()[i] = uniform01(rng);
  for (long i = 0; i < y.size(); ++i) y.data()[i] = 2 * uniform01(rng) + 0.3;
  EXPECT_LT(fid(x, x), 1e-6);
  EXPECT_NEAR(fid(x, y), fid(y, x), 1e-9);
  EXPECT_GT(fid(x, y), 0.1);

  // Both sets have unit sample variance; the means differ by 3.
  Eigen::MatrixXd a(4, 1), b(4, 1);
  const double s = std::sqrt(3.0) / 2;
  a << -s, -s, s, s;
  b = a.array() + 3.0;
  EXPECT_NEAR(fid(a, b), 9.0, 1e-6);
  EXPECT_THROW(fid(a.topRows(1), b), Error);
}

TEST(Metrics, InvariantToElementOrder) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Layout a = random_layout(rng, uniform_int(rng, 1, 6), 3);
    Layout b = a;
    std::shuffle(b.elements.begin(), b.elements.end(), rng);
    EXPECT_NEAR(alignment(a), alignment(b), 1e-12);
    EXPECT_NEAR(overlap(a), overlap(b), 1e-12);
    EXPECT_NEAR(docsim(a, a), docsim(b, a), 1e-12);
    EXPECT_NEAR(max_iou_pair(a, b), 1.0, 1e-12);
    const LayoutStatsExtractor stats(3, 6);
    EXPECT_TRUE(stats.extract({a}).isApprox(stats.extract({b}), 1e-12));
  }
}

TEST(Evaluate, ReportFields) {
  Rng rng(8);
  std::vector<Layout> gen, ref;
  for (int i = 0; i < 20; ++i) {
    gen.push_back(random_layout(rng, 3, 3));
    ref.push_back(random_layout(rng, 3, 3));
  }
  const LayoutStatsExtractor stats(3, 25);
  EvalOptions opts;
  opts.extractor = &stats;
  opts.paired = true;
  const auto report = evaluate(gen, ref, opts);
  for (const char* key : {"alignment", "overlap", "max_iou", "docsim", "fid", "density", "coverage"}) {
    ASSERT_TRUE(report.values.count(key)) << key;
    EXPECT_TRUE(std::isfinite(report.values.at(key))) << key;
  }
  EXPECT_GE(report.values.at("max_iou"), 0.0);
  EXPECT_LE(report.values.at("max_iou"), 1.0);
  EXPECT_EQ(report.to_json()["samples"], 20);
  EXPECT_NE(report.table().find("fid"), std::string::npos);
}
