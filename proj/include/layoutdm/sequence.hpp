#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "layoutdm/layout.hpp"
#include "layoutdm/quantizer.hpp"
#include "layoutdm/random.hpp"

namespace layoutdm {

/// Flattened layout: 5M global token ids laid out as (c, x, y, w, h) per element slot.
using TokenSeq = std::vector<int>;

inline int sequence_length(int max_elements) { return kFieldsPerElement * max_elements; }

/// Fits a vocabulary to the box coordinates of a layout collection.
inline Vocabulary fit_vocabulary(const std::vector<Layout>& layouts, int num_categories, int bins, QuantizerKind kind,
                                 std::vector<std::string>* warnings = nullptr) {
  std::array<std::vector<double>, 4> values;
  for (const auto& l : layouts) {
    for (const auto& e : l.elements) {
      values[0].push_back(e.bbox.cx);
      values[1].push_back(e.bbox.cy);
      values[2].push_back(e.bbox.w);
      values[3].push_back(e.bbox.h);
    }
  }
  return Vocabulary::fit(num_categories, values, bins, kind, warnings);
}

/// Tokens for one element in (c, x, y, w, h) order.
inline std::array<int, 5> encode_element(const Element& e, const Vocabulary& vocab) {
  return {vocab.encode_category(e.category), vocab.encode(e.bbox.cx, Modality::kX), vocab.encode(e.bbox.cy, Modality::kY),
          vocab.encode(e.bbox.w, Modality::kW), vocab.encode(e.bbox.h, Modality::kH)};
}

/// Quantizes and flattens a layout. With `shuffle`, the element order is a uniform permutation
/// drawn from `rng`; otherwise the stored order is kept.
inline TokenSeq flatten(const Layout& layout, const Vocabulary& vocab, int max_elements, Rng* rng = nullptr,
                        bool shuffle = false) {
  LAYOUTDM_REQUIRE(vocab.fitted(), ErrorCode::kUnfittedVocab, "vocabulary not fitted");
  validate(layout, vocab.num_categories(), max_elements);
  std::vector<int> order(layout.elements.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    LAYOUTDM_REQUIRE(rng != nullptr, ErrorCode::kInvalidArgument, "shuffle requires an rng");
    std::shuffle(order.begin(), order.end(), *rng);
  }
  TokenSeq seq(sequence_length(max_elements), vocab.pad());
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const auto tokens = encode_element(layout.elements[order[slot]], vocab);
    std::copy(tokens.begin(), tokens.end(), seq.begin() + kFieldsPerElement * slot);
  }
  return seq;
}

/// Checks that every id sits in its position's modality range or is PAD/MASK.
inline void check_modalities(const TokenSeq& seq, const Vocabulary& vocab) {
  for (std::size_t p = 0; p < seq.size(); ++p) {
    const int id = seq[p];
    if (id == vocab.pad() || id == vocab.mask()) continue;
    LAYOUTDM_REQUIRE(vocab.in_range(id, modality_at(static_cast<int>(p))), ErrorCode::kModalityMismatch,
                     "token " + std::to_string(id) + " at position " + std::to_string(p));
  }
}

enum class SlotState { kPad, kComplete, kPartial };

inline SlotState slot_state(const TokenSeq& seq, int slot, const Vocabulary& vocab) {
  int pads = 0;
  int content = 0;
  for (int j = 0; j < kFieldsPerElement; ++j) {
    const int id = seq[kFieldsPerElement * slot + j];
    if (id == vocab.pad()) {
      ++pads;
    } else if (id != vocab.mask()) {
      ++content;
    }
  }
  if (pads == kFieldsPerElement) return SlotState::kPad;
  if (content == kFieldsPerElement) return SlotState::kComplete;
  return SlotState::kPartial;
}

inline Element decode_slot(const TokenSeq& seq, int slot, const Vocabulary& vocab) {
  const int base = kFieldsPerElement * slot;
  return {seq[base] + 1, {vocab.decode(seq[base + 1]), vocab.decode(seq[base + 2]), vocab.decode(seq[base + 3]),
                          vocab.decode(seq[base + 4])}};
}

/// Inverse of flatten via centroid lookup. PAD quintuples are dropped. With `drop_partial`,
/// quintuples mixing PAD/MASK and content are skipped and counted in `dropped` instead of raising
/// PARTIAL_ELEMENT.
inline Layout unflatten(const TokenSeq& seq, const Vocabulary& vocab, bool drop_partial = false,
                        int* dropped = nullptr) {
  LAYOUTDM_REQUIRE(vocab.fitted(), ErrorCode::kUnfittedVocab, "vocabulary not fitted");
  LAYOUTDM_REQUIRE(seq.size() % kFieldsPerElement == 0, ErrorCode::kShapeMismatch, "length not a multiple of 5");
  check_modalities(seq, vocab);
  Layout layout;
  const int slots = static_cast<int>(seq.size()) / kFieldsPerElement;
  for (int s = 0; s < slots; ++s) {
    switch (slot_state(seq, s, vocab)) {
      case SlotState::kPad:
        break;
      case SlotState::kComplete:
        layout.elements.push_back(decode_slot(seq, s, vocab));
        break;
      case SlotState::kPartial:
        if (!drop_partial) {
          throw Error(ErrorCode::kPartialElement, "element slot " + std::to_string(s) + " mixes PAD/MASK and content");
        }
        if (dropped) ++*dropped;
        break;
    }
  }
  return layout;
}

}  // namespace layoutdm
