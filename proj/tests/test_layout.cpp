#include <gtest/gtest.h>

#include <map>

#include "layoutdm/condition.hpp"
#include "layoutdm/sequence.hpp"

using namespace layoutdm;

namespace {

constexpr int kM = 25;

Vocabulary uniform_vocab(int categories = 5, int bins = 32) {
  return Vocabulary::fit(categories, {}, bins, QuantizerKind::kUniform);
}

Layout random_layout(Rng& rng, int categories, int max_elements) {
  Layout l;
  const int e = uniform_int(rng, 0, max_elements);
  for (int i = 0; i < e; ++i) {
    l.elements.push_back({uniform_int(rng, 1, categories),
                          {uniform01(rng), uniform01(rng), 0.01 + 0.99 * uniform01(rng), 0.01 + 0.99 * uniform01(rng)}});
  }
  return l;
}

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(Validate, AcceptsSingleElement) {
  Layout l;
  l.elements.push_back({1, {0.5, 0.5, 0.2, 0.2}});
  EXPECT_NO_THROW(validate(l, 5, kM));
}

TEST(Validate, Errors) {
  Layout many;
  for (int i = 0; i < 26; ++i) many.elements.push_back({1, {0.5, 0.5, 0.1, 0.1}});
  EXPECT_EQ(error_of([&] { validate(many, 5, kM); }), ErrorCode::kTooManyElements);

  Layout out;
  out.elements.push_back({1, {1.2, 0.5, 0.2, 0.2}});
  EXPECT_EQ(error_of([&] { validate(out, 5, kM); }), ErrorCode::kOutOfRange);

  Layout bad;
  bad.elements.push_back({6, {0.5, 0.5, 0.2, 0.2}});
  EXPECT_EQ(error_of([&] { validate(bad, 5, kM); }), ErrorCode::kBadCategory);
}

TEST(Flatten, EmptyLayoutIsAllPad) {
  const auto vocab = uniform_vocab();
  const auto seq = flatten(Layout{}, vocab, kM);
  ASSERT_EQ(seq.size(), 125u);
  for (int id : seq) EXPECT_EQ(id, vocab.pad());
}

TEST(Flatten, SingleElementLeadsTheSequence) {
  const auto vocab = uniform_vocab();
  Layout l;
  l.elements.push_back({3, {0.5, 0.25, 0.5, 1.0}});
  const auto seq = flatten(l, vocab, kM);
  EXPECT_EQ(seq[0], 2);
  EXPECT_EQ(seq[1], vocab.range_begin(Modality::kX) + 16);
  EXPECT_EQ(seq[2], vocab.range_begin(Modality::kY) + 8);
  EXPECT_EQ(seq[3], vocab.range_begin(Modality::kW) + 15);
  EXPECT_EQ(seq[4], vocab.range_begin(Modality::kH) + 31);
  for (std::size_t p = 5; p < seq.size(); ++p) EXPECT_EQ(seq[p], vocab.pad());
}

TEST(Flatten, ShuffleIsDeterministicPerSeed) {
  const auto vocab = uniform_vocab();
  Layout l;
  l.elements.push_back({1, {0.1, 0.1, 0.1, 0.1}});
  l.elements.push_back({2, {0.9, 0.9, 0.3, 0.3}});
  Rng a(42), b(42);
  EXPECT_EQ(flatten(l, vocab, kM, &a, true), flatten(l, vocab, kM, &b, true));
}

TEST(Flatten, ShuffleCoversBothOrders) {
  const auto vocab = uniform_vocab();
  Layout l;
  l.elements.push_back({1, {0.1, 0.1, 0.1, 0.1}});
  l.elements.push_back({2, {0.9, 0.9, 0.3, 0.3}});
  Rng rng(1);
  int first_is_one = 0;
  for (int i = 0; i < 2000; ++i) first_is_one += flatten(l, vocab, kM, &rng, true)[0] == 0 ? 1 : 0;
  EXPECT_NEAR(first_is_one / 2000.0, 0.5, 0.05);
}

TEST(Flatten, UnfittedVocab) {
  EXPECT_EQ(error_of([] { flatten(Layout{}, Vocabulary{}, kM); }), ErrorCode::kUnfittedVocab);
}

TEST(Unflatten, AllPadIsEmpty) {
  const auto vocab = uniform_vocab();
  EXPECT_TRUE(unflatten(TokenSeq(125, vocab.pad()), vocab).empty());
}

TEST(Unflatten, PartialAndMismatchErrors) {
  const auto vocab = uniform_vocab();
  TokenSeq seq(125, vocab.pad());
  seq[0] = 0;
  seq[1] = vocab.range_begin(Modality::kX);
  seq[2] = vocab.mask();
  seq[3] = vocab.range_begin(Modality::kW);
  seq[4] = vocab.range_begin(Modality::kH);
  EXPECT_EQ(error_of([&] { unflatten(seq, vocab); }), ErrorCode::kPartialElement);
  int dropped = 0;
  EXPECT_TRUE(unflatten(seq, vocab, true, &dropped).empty());
  EXPECT_EQ(dropped, 1);

  seq[2] = vocab.range_begin(Modality::kX);  // an x token in a y slot
  EXPECT_EQ(error_of([&] { unflatten(seq, vocab); }), ErrorCode::kModalityMismatch);
}

TEST(Unflatten, UniformCellErrorBound) {
  // Oracle: enumerate every uniform bin and take the worst distance from a value in the cell
  // to the centroid that encodes it.
  const int bins = 32;
  const auto vocab = uniform_vocab(5, bins);
  double worst_pos = 0, worst_size = 0;
  for (int i = 0; i <= 100000; ++i) {
    const double v = i / 100000.0;
    worst_pos = std::max(worst_pos, std::abs(v - vocab.decode(vocab.encode(v, Modality::kX))));
    worst_size = std::max(worst_size, std::abs(v - vocab.decode(vocab.encode(v, Modality::kW))));
  }
  // Interior cells have radius 1/(2B); the last position cell [(B-1)/B, 1] and the first size
  // cell [0, 1/B] are one-sided and add a centroid offset of 1/(2B).
  EXPECT_LE(worst_pos, 1.0 / bins + 1e-12);
  EXPECT_LE(worst_size, 1.0 / bins + 1e-12);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Layout l = random_layout(rng, 5, kM);
    const Layout back = unflatten(flatten(l, vocab, kM), vocab);
    ASSERT_EQ(back.size(), l.size());
    for (int e = 0; e < l.size(); ++e) {
      EXPECT_LE(std::abs(back.elements[e].bbox.cx - l.elements[e].bbox.cx), 1.0 / bins + 1e-12);
      EXPECT_LE(std::abs(back.elements[e].bbox.h - l.elements[e].bbox.h), 1.0 / bins + 1e-12);
    }
  }
}

TEST(RoundTrip, ThousandRandomLayouts) {
  Rng rng(17);
  std::array<std::vector<double>, 4> values;
  for (auto& v : values) {
    v.resize(2000);
    for (double& x : v) x = uniform01(rng);
  }
  const auto vocab = Vocabulary::fit(5, values, 32, QuantizerKind::kKMeans);
  for (int trial = 0; trial < 1000; ++trial) {
    const Layout l = random_layout(rng, 5, kM);
    Rng shuffle_rng(trial);
    const Layout back = unflatten(flatten(l, vocab, kM, &shuffle_rng, true), vocab);
    ASSERT_EQ(category_multiset(back), category_multiset(l));
    // Every decoded element lies in the quantization cell of some original element with the
    // same category: compare the canonical token tuples.
    std::multiset<std::array<int, 5>> original, decoded;
    for (const auto& e : l.elements) original.insert(encode_element(e, vocab));
    for (const auto& e : back.elements) decoded.insert(encode_element(e, vocab));
    ASSERT_EQ(original, decoded);
  }
}

TEST(RoundTrip, PadTailStartsAtFiveE) {
  Rng rng(5);
  const auto vocab = uniform_vocab();
  for (int trial = 0; trial < 300; ++trial) {
    const Layout l = random_layout(rng, 5, kM);
    const auto seq = flatten(l, vocab, kM);
    for (int p = 0; p < 125; ++p) ASSERT_EQ(seq[p] == vocab.pad(), p >= 5 * l.size());
  }
}

TEST(Canonicalize, OrdersByCategoryThenPosition) {
  Layout l;
  l.elements.push_back({2, {0.1, 0.1, 0.1, 0.1}});
  l.elements.push_back({1, {0.5, 0.9, 0.1, 0.1}});
  l.elements.push_back({1, {0.5, 0.2, 0.1, 0.1}});
  const auto c = canonicalize(l);
  EXPECT_EQ(c.elements[0].bbox.cy, 0.2);
  EXPECT_EQ(c.elements[1].bbox.cy, 0.9);
  EXPECT_EQ(c.elements[2].category, 2);
}

TEST(LayoutJson, RoundTrip) {
  Layout l;
  l.canvas = {100, 200};
  l.elements.push_back({4, {0.25, 0.75, 0.5, 0.125}});
  const auto back = layout_from_json(to_json(l));
  EXPECT_EQ(back.canvas, l.canvas);
  EXPECT_EQ(back.elements, l.elements);
  EXPECT_EQ(error_of([] { layout_from_json(nlohmann::json::parse(R"({"elements":[{"category":1}]})")); }),
            ErrorCode::kParseError);
}

class MakeCondition : public ::testing::Test {
 protected:
  Vocabulary vocab = uniform_vocab();
  Layout layout_with(int e) {
    Rng rng(e);
    Layout l;
    for (int i = 0; i < e; ++i) {
      l.elements.push_back({uniform_int(rng, 1, 5), {uniform01(rng), uniform01(rng), 0.1, 0.2}});
    }
    return l;
  }
};

TEST_F(MakeCondition, CategoryTaskKnownCount) {
  Rng rng(0);
  const auto c = make_condition(TaskKind::kCategoryToSizePosition, layout_with(3), vocab, kM, rng);
  int known = 0;
  for (auto m : c.mask) known += m;
  EXPECT_EQ(known, 3 + 5 * (kM - 3));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(c.mask[5 * i], 1);
}

TEST_F(MakeCondition, CategorySizeKeepsWidthHeight) {
  Rng rng(0);
  const auto c = make_condition(TaskKind::kCategorySizeToPosition, layout_with(2), vocab, kM, rng);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(c.mask[5 * i + 0], 1);
    EXPECT_EQ(c.mask[5 * i + 1], 0);
    EXPECT_EQ(c.mask[5 * i + 2], 0);
    EXPECT_EQ(c.mask[5 * i + 3], 1);
    EXPECT_EQ(c.mask[5 * i + 4], 1);
  }
}

TEST_F(MakeCondition, CompletionKnowsAtMostTwentyPercent) {
  const auto l = layout_with(10);
  std::map<int, int> counts;
  for (int seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const auto c = make_condition(TaskKind::kCompletion, l, vocab, kM, rng);
    int known = 0;
    for (auto m : c.mask) known += m;
    ASSERT_EQ(known % 5, 0);
    ASSERT_LE(known / 5, 2);
    ++counts[known / 5];
    for (int p = known; p < 125; ++p) ASSERT_EQ(c.mask[p], 0);
  }
  EXPECT_EQ(counts.size(), 3u);
}

TEST_F(MakeCondition, UnconditionalIsAllMask) {
  Rng rng(0);
  const auto c = make_condition(TaskKind::kUnconditional, Layout{}, vocab, kM, rng);
  for (int p = 0; p < 125; ++p) {
    EXPECT_EQ(c.mask[p], 0);
    EXPECT_EQ(c.known[p], vocab.mask());
  }
}

TEST_F(MakeCondition, EmptyLayoutRejected) {
  Rng rng(0);
  EXPECT_EQ(error_of([&] { make_condition(TaskKind::kCompletion, Layout{}, vocab, kM, rng); }),
            ErrorCode::kEmptyLayout);
}

TEST_F(MakeCondition, RefinementAndRelationshipAttachPriors) {
  Rng rng(0);
  const auto refine = make_condition(TaskKind::kRefinement, layout_with(4), vocab, kM, rng);
  ASSERT_EQ(refine.weak_priors.size(), 1u);
  EXPECT_EQ(refine.weak_priors[0].kind, PriorKind::kRefineDefault);
  EXPECT_EQ(refine.weak_priors[0].noisy.size(), 4);

  const auto rel = make_condition(TaskKind::kRelationship, layout_with(10), vocab, kM, rng);
  ASSERT_EQ(rel.weak_priors.size(), 1u);
  EXPECT_EQ(rel.weak_priors[0].relations.size(), 5u);  // 10% of 45 pairs, rounded
  // Sampled relations hold on the (canonical) ground truth.
  const Layout canon = canonicalize(layout_with(10));
  for (const auto& r : rel.weak_priors[0].relations) {
    EXPECT_FALSE(is_violated(r, canon.elements[r.subject].bbox, canon.elements[r.object].bbox));
  }
}

TEST_F(MakeCondition, MaskKnownConsistencyProperty) {
  for (int draw = 0; draw < 1000; ++draw) {
    Rng rng(draw);
    const auto task = static_cast<TaskKind>(draw % 6);
    const auto l = layout_with(1 + draw % kM);
    const auto c = make_condition(task, l, vocab, kM, rng);
    ASSERT_NO_THROW(validate(c, vocab, kM));
    for (int p = 0; p < 125; ++p) ASSERT_EQ(c.mask[p] == 1, c.known[p] != vocab.mask());
  }
}

TEST_F(MakeCondition, PartialConditionFromFile) {
  std::vector<PartialElement> els(2);
  els[0].category = 1;
  els[0].bbox = {std::nullopt, std::nullopt, 0.5, 0.25};
  els[1].category = 2;
  const auto c = condition_from_partial(TaskKind::kCategorySizeToPosition, els, {}, vocab, kM);
  EXPECT_EQ(c.mask[3], 1);
  EXPECT_EQ(c.mask[8], 0);
  EXPECT_EQ(c.mask[10], 1);
  EXPECT_EQ(c.known[10], vocab.pad());

  std::vector<RelationConstraint> bad{{RelationKind::kAbove, 0, 0}};
  EXPECT_EQ(error_of([&] { condition_from_partial(TaskKind::kRelationship, els, bad, vocab, kM); }),
            ErrorCode::kInvalidCondition);
}
