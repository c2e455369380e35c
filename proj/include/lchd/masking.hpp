#pragma once

#include <cstdint>
#include <vector>

#include "lchd/rng.hpp"

namespace lchd {

enum class MaskAction { kMaskToken, kRandomToken, kKeep };
enum class MaskStrategy { kMlm, kCopy, kAnchor };

struct MaskEntry {
  int position;
  int original_token;
  MaskAction action;
  MaskStrategy strategy;
};

// Positions selected for corruption, sorted by position, one entry each.
struct MaskPlan {
  std::vector<MaskEntry> entries;

  bool has_position(int pos) const;
  const MaskEntry* find(int pos) const;
};

// Classic MLM plan: every non-special position is selected independently with
// probability p_mask; selected positions receive mask/random/keep actions in
// an 80/10/10 split.
MaskPlan standard_mlm_mask(const std::vector<int>& tokens, double p_mask, std::uint64_t seed);

// Second-half positions whose token value also occurs somewhere in the first
// half. Special tokens are never candidates.
std::vector<int> copy_mask_candidates(const std::vector<int>& tokens);

// Samples num_anchors distinct anchor positions from the eligible (non
// special) positions of the first quarter; every later occurrence of an
// anchor's token value is a candidate. Anchor positions themselves are
// excluded so the reference copy survives.
std::vector<int> anchor_mask_candidates(const std::vector<int>& tokens, int num_anchors,
                                        std::uint64_t seed);

struct RetrievalAwareParams {
  double p_mlm = 0.30;
  double p_ra = 0.10;
  int num_anchors = 4;
  int min_distance = 256;
};

// Combined plan: candidates from both retrieval strategies whose nearest
// earlier same-token occurrence is at least min_distance away are selected
// independently with probability p_ra and always receive the mask action;
// the standard plan covers the rest. Collisions resolve toward the
// retrieval-aware entry. A final pass restores one faraway evidence copy for
// any retrieval-masked position whose evidence was itself entirely masked.
MaskPlan compose_retrieval_aware(const std::vector<int>& tokens, const RetrievalAwareParams& params,
                                 std::uint64_t seed);

// Applies a plan, returning the corrupted sequence. Random replacements draw
// uniformly over the byte vocabulary, never special ids.
std::vector<int> apply_mask_plan(const std::vector<int>& tokens, const MaskPlan& plan, Rng& rng);

}  // namespace lchd
