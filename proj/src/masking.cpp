#include "lchd/masking.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "lchd/tokenizer.hpp"

namespace lchd {

namespace {
// stream tags so the three draw sequences inside a composed plan stay
// independent of each other
constexpr std::uint64_t kStreamMlm = 11;
constexpr std::uint64_t kStreamAnchor = 12;
constexpr std::uint64_t kStreamSelect = 13;
}  // namespace

bool MaskPlan::has_position(int pos) const { return find(pos) != nullptr; }

const MaskEntry* MaskPlan::find(int pos) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), pos,
                             [](const MaskEntry& e, int p) { return e.position < p; });
  if (it == entries.end() || it->position != pos) return nullptr;
  return &*it;
}

MaskPlan standard_mlm_mask(const std::vector<int>& tokens, double p_mask, std::uint64_t seed) {
  if (p_mask < 0.0 || p_mask > 1.0)
    throw std::invalid_argument("standard_mlm_mask: p_mask outside [0, 1]");
  Rng rng(mix_seed(seed, kStreamMlm));
  MaskPlan plan;
  for (int pos = 0; pos < static_cast<int>(tokens.size()); ++pos) {
    if (tok::is_special(tokens[pos])) continue;
    if (!rng.bernoulli(p_mask)) continue;
    double roll = rng.uniform_double();
    MaskAction action = roll < 0.8 ? MaskAction::kMaskToken
                        : roll < 0.9 ? MaskAction::kRandomToken
                                     : MaskAction::kKeep;
    plan.entries.push_back({pos, tokens[pos], action, MaskStrategy::kMlm});
  }
  return plan;
}

std::vector<int> copy_mask_candidates(const std::vector<int>& tokens) {
  const int n = static_cast<int>(tokens.size());
  const int half = n / 2;
  std::unordered_set<int> first_half_values;
  for (int i = 0; i < half; ++i)
    if (!tok::is_special(tokens[i])) first_half_values.insert(tokens[i]);
  std::vector<int> out;
  for (int i = half; i < n; ++i) {
    if (tok::is_special(tokens[i])) continue;
    if (first_half_values.count(tokens[i])) out.push_back(i);
  }
  return out;
}

std::vector<int> anchor_mask_candidates(const std::vector<int>& tokens, int num_anchors,
                                        std::uint64_t seed) {
  if (num_anchors < 0) throw std::invalid_argument("anchor_mask_candidates: negative count");
  const int n = static_cast<int>(tokens.size());
  const int quarter = n / 4;
  std::vector<int> eligible;
  for (int i = 0; i < quarter; ++i)
    if (!tok::is_special(tokens[i])) eligible.push_back(i);
  if (static_cast<int>(eligible.size()) < num_anchors)
    throw std::invalid_argument("anchor_mask_candidates: fewer eligible positions than anchors");

  Rng rng(mix_seed(seed, kStreamAnchor));
  for (int i = 0; i < num_anchors; ++i) {
    int j = i + static_cast<int>(rng.below(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  std::set<int> anchors(eligible.begin(), eligible.begin() + num_anchors);

  std::set<int> out;
  for (int a : anchors) {
    int value = tokens[a];
    for (int p = a + 1; p < n; ++p)
      if (tokens[p] == value && !anchors.count(p)) out.insert(p);
  }
  return {out.begin(), out.end()};
}

MaskPlan compose_retrieval_aware(const std::vector<int>& tokens,
                                 const RetrievalAwareParams& params, std::uint64_t seed) {
  if (params.p_ra < 0.0 || params.p_ra > 1.0)
    throw std::invalid_argument("compose_retrieval_aware: p_ra outside [0, 1]");
  if (params.min_distance < 1)
    throw std::invalid_argument("compose_retrieval_aware: min_distance must be positive");
  const int n = static_cast<int>(tokens.size());

  MaskPlan base = standard_mlm_mask(tokens, params.p_mlm, seed);

  std::vector<int> copy_cands = copy_mask_candidates(tokens);
  std::vector<int> anchor_cands = anchor_mask_candidates(tokens, params.num_anchors, seed);
  std::unordered_set<int> copy_set(copy_cands.begin(), copy_cands.end());
  std::set<int> all_cands(copy_cands.begin(), copy_cands.end());
  all_cands.insert(anchor_cands.begin(), anchor_cands.end());

  // nearest earlier occurrence of the same token value, per position
  std::vector<int> prev_occurrence(n, -1);
  {
    std::unordered_map<int, int> last_seen;
    for (int i = 0; i < n; ++i) {
      auto it = last_seen.find(tokens[i]);
      if (it != last_seen.end()) prev_occurrence[i] = it->second;
      last_seen[tokens[i]] = i;
    }
  }

  Rng select_rng(mix_seed(seed, kStreamSelect));
  std::map<int, MaskEntry> merged;
  for (const MaskEntry& e : base.entries) merged[e.position] = e;
  for (int pos : all_cands) {
    int prev = prev_occurrence[pos];
    if (prev < 0 || pos - prev < params.min_distance) continue;
    if (!select_rng.bernoulli(params.p_ra)) continue;
    MaskStrategy strat = copy_set.count(pos) ? MaskStrategy::kCopy : MaskStrategy::kAnchor;
    merged[pos] = {pos, tokens[pos], MaskAction::kMaskToken, strat};
  }

  // Evidence protection: a retrieval-masked position must keep at least one
  // visible same-token copy at qualifying distance. Walk left to right and
  // unmask the earliest qualifying copy when all of them were selected.
  // Removing entries never invalidates positions already processed.
  std::vector<int> ra_positions;
  for (const auto& [pos, e] : merged)
    if (e.strategy != MaskStrategy::kMlm) ra_positions.push_back(pos);
  for (int pos : ra_positions) {
    if (!merged.count(pos) || merged[pos].strategy == MaskStrategy::kMlm) continue;
    int value = tokens[pos];
    bool visible = false;
    int first_evidence = -1;
    for (int q = 0; q <= pos - params.min_distance; ++q) {
      if (tokens[q] != value) continue;
      auto it = merged.find(q);
      bool corrupted = it != merged.end() && it->second.action != MaskAction::kKeep;
      if (!corrupted) {
        visible = true;
        break;
      }
      if (first_evidence < 0) first_evidence = q;
    }
    if (!visible && first_evidence >= 0) merged.erase(first_evidence);
  }

  MaskPlan plan;
  plan.entries.reserve(merged.size());
  for (auto& [pos, e] : merged) plan.entries.push_back(e);
  return plan;
}

std::vector<int> apply_mask_plan(const std::vector<int>& tokens, const MaskPlan& plan, Rng& rng) {
  std::vector<int> out = tokens;
  for (const MaskEntry& e : plan.entries) {
    if (e.position < 0 || e.position >= static_cast<int>(tokens.size()))
      throw std::invalid_argument("apply_mask_plan: entry position out of range");
    switch (e.action) {
      case MaskAction::kMaskToken:
        out[e.position] = tok::kMask;
        break;
      case MaskAction::kRandomToken:
        out[e.position] = static_cast<int>(rng.below(256));
        break;
      case MaskAction::kKeep:
        break;
    }
  }
  return out;
}

}  // namespace lchd
