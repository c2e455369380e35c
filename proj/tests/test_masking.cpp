#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>
#include <vector>

#include "doctest.h"
#include "lchd/masking.hpp"
#include "lchd/rng.hpp"
#include "lchd/tokenizer.hpp"

using namespace lchd;

namespace {

std::vector<int> random_bytes(int n, std::uint64_t seed, int alphabet = 256) {
  Rng rng(seed);
  std::vector<int> t(n);
  for (int i = 0; i < n; ++i) t[i] = static_cast<int>(rng.below(alphabet));
  return t;
}

}  // namespace

TEST_CASE("standard plan skips special tokens and is reproducible") {
  std::vector<int> tokens = {tok::kCls, 10, 20, tok::kSep, 30, 40, tok::kMask, 50};
  MaskPlan a = standard_mlm_mask(tokens, 1.0, 5);
  for (const MaskEntry& e : a.entries) {
    CHECK_FALSE(tok::is_special(tokens[e.position]));
    CHECK(e.original_token == tokens[e.position]);
    CHECK(e.strategy == MaskStrategy::kMlm);
  }
  // p = 1 selects every eligible position
  CHECK(a.entries.size() == 5);
  MaskPlan b = standard_mlm_mask(tokens, 1.0, 5);
  REQUIRE(a.entries.size() == b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].position == b.entries[i].position);
    CHECK(a.entries[i].action == b.entries[i].action);
  }
  CHECK(standard_mlm_mask(tokens, 0.0, 5).entries.empty());
  CHECK_THROWS(standard_mlm_mask(tokens, 1.5, 5));
}

TEST_CASE("standard plan hits the target selection rate") {
  auto tokens = random_bytes(20000, 3);
  MaskPlan plan = standard_mlm_mask(tokens, 0.3, 17);
  double rate = static_cast<double>(plan.entries.size()) / 20000.0;
  CHECK(rate == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("selected positions split 80/10/10 across actions") {
  auto tokens = random_bytes(30000, 4);
  MaskPlan plan = standard_mlm_mask(tokens, 1.0, 29);
  REQUIRE(plan.entries.size() == 30000);
  int mask = 0, rnd = 0, keep = 0;
  for (const MaskEntry& e : plan.entries) {
    if (e.action == MaskAction::kMaskToken) ++mask;
    else if (e.action == MaskAction::kRandomToken) ++rnd;
    else ++keep;
  }
  CHECK(mask / 30000.0 == doctest::Approx(0.8).epsilon(0.03));
  CHECK(rnd / 30000.0 == doctest::Approx(0.1).epsilon(0.15));
  CHECK(keep / 30000.0 == doctest::Approx(0.1).epsilon(0.15));
}

TEST_CASE("plan lookup finds entries by position") {
  std::vector<int> tokens = random_bytes(64, 5);
  MaskPlan plan = standard_mlm_mask(tokens, 0.5, 31);
  REQUIRE(!plan.entries.empty());
  CHECK(std::is_sorted(plan.entries.begin(), plan.entries.end(),
                       [](const MaskEntry& a, const MaskEntry& b) {
                         return a.position < b.position;
                       }));
  for (const MaskEntry& e : plan.entries) {
    REQUIRE(plan.has_position(e.position));
    CHECK(plan.find(e.position)->original_token == e.original_token);
  }
  CHECK(plan.find(-1) == nullptr);
  CHECK(plan.find(64) == nullptr);
}

TEST_CASE("copy candidates are repeated second-half values") {
  // a b c | a d c -> positions 3 and 5 repeat first-half bytes
  std::vector<int> tokens = {65, 66, 67, 65, 68, 67};
  auto cands = copy_mask_candidates(tokens);
  REQUIRE(cands.size() == 2);
  CHECK(cands[0] == 3);
  CHECK(cands[1] == 5);
}

TEST_CASE("copy candidates ignore special tokens") {
  std::vector<int> tokens = {65, tok::kSep, 66, 65, tok::kSep, 67};
  auto cands = copy_mask_candidates(tokens);
  // the separator repeats across halves but is not a candidate
  REQUIRE(cands.size() == 1);
  CHECK(cands[0] == 3);
}

TEST_CASE("anchor candidates are later occurrences of first-quarter picks") {
  // quarter = positions 0..3
  std::vector<int> tokens = {5, 6, 7, 8, 5, 9, 6, 5, 10, 7, 6, 5, 11, 12, 13, 14};
  auto cands = anchor_mask_candidates(tokens, 4, 77);
  CHECK(!cands.empty());
  for (int p : cands) {
    bool has_earlier_quarter_copy = false;
    for (int a = 0; a < 4 && a < p; ++a)
      if (tokens[a] == tokens[p]) has_earlier_quarter_copy = true;
    CHECK(has_earlier_quarter_copy);
  }
  // deterministic under the same seed
  auto again = anchor_mask_candidates(tokens, 4, 77);
  CHECK(cands == again);
  // all four first-quarter values picked as anchors -> anchors themselves
  // (positions 0..3) never appear as candidates
  for (int p : cands) CHECK(p >= 4);
}

TEST_CASE("anchor selection needs enough eligible positions") {
  std::vector<int> tokens = {tok::kCls, tok::kSep, 5, 6, 7, 8, 9, 10};
  // first quarter holds two special tokens only
  CHECK_THROWS(anchor_mask_candidates(tokens, 1, 3));
  CHECK(anchor_mask_candidates(tokens, 0, 3).empty());
}

TEST_CASE("zero retrieval probability collapses to the standard plan") {
  auto tokens = random_bytes(512, 6, 32);
  RetrievalAwareParams params;
  params.p_mlm = 0.3;
  params.p_ra = 0.0;
  params.num_anchors = 4;
  params.min_distance = 16;
  MaskPlan composed = compose_retrieval_aware(tokens, params, 99);
  MaskPlan standard = standard_mlm_mask(tokens, 0.3, 99);
  REQUIRE(composed.entries.size() == standard.entries.size());
  for (std::size_t i = 0; i < composed.entries.size(); ++i) {
    CHECK(composed.entries[i].position == standard.entries[i].position);
    CHECK(composed.entries[i].action == standard.entries[i].action);
    CHECK(composed.entries[i].strategy == standard.entries[i].strategy);
  }
}

TEST_CASE("retrieval selection rate matches its probability") {
  // byte 0 planted every 16 positions; second-half plants are the only
  // candidates (second-half filler bytes never occur in the first half)
  const int n = 1600;
  std::vector<int> tokens(n);
  Rng filler(8);
  for (int i = 0; i < n; ++i) {
    bool first_half = i < n / 2;
    tokens[i] = first_half ? 1 + static_cast<int>(filler.below(127))
                           : 128 + static_cast<int>(filler.below(128));
    if (i % 16 == 0) tokens[i] = 0;
  }
  auto cands = copy_mask_candidates(tokens);
  REQUIRE(cands.size() == 50);

  RetrievalAwareParams params;
  params.p_mlm = 0.0;
  params.p_ra = 0.1;
  params.num_anchors = 0;
  params.min_distance = 8;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    MaskPlan plan = compose_retrieval_aware(tokens, params, seed);
    for (const MaskEntry& e : plan.entries) {
      CHECK(e.action == MaskAction::kMaskToken);
      CHECK(e.strategy == MaskStrategy::kCopy);
      CHECK(e.position >= n / 2);
    }
    total += static_cast<double>(plan.entries.size());
  }
  double mean = total / 1000.0;
  CHECK(mean > 4.0);
  CHECK(mean < 6.0);
}

TEST_CASE("retrieval entries win collisions with the standard plan") {
  auto tokens = random_bytes(512, 12, 16);
  RetrievalAwareParams params;
  params.p_mlm = 1.0;
  params.p_ra = 1.0;
  params.num_anchors = 2;
  params.min_distance = 8;
  MaskPlan plan = compose_retrieval_aware(tokens, params, 41);

  // recompute the eligible candidate set independently
  auto copy_c = copy_mask_candidates(tokens);
  auto anchor_c = anchor_mask_candidates(tokens, 2, 41);
  std::set<int> cands(copy_c.begin(), copy_c.end());
  cands.insert(anchor_c.begin(), anchor_c.end());
  std::vector<int> prev(tokens.size(), -1);
  {
    std::map<int, int> last;
    for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
      auto it = last.find(tokens[i]);
      if (it != last.end()) prev[i] = it->second;
      last[tokens[i]] = i;
    }
  }
  int eligible = 0;
  for (int pos : cands) {
    if (prev[pos] < 0 || pos - prev[pos] < params.min_distance) continue;
    ++eligible;
    const MaskEntry* e = plan.find(pos);
    // either kept as a retrieval mask or unmasked to protect later evidence
    if (e) CHECK(e->strategy != MaskStrategy::kMlm);
  }
  CHECK(eligible > 0);
}

TEST_CASE("every retrieval mask keeps one visible distant copy") {
  RetrievalAwareParams params;
  params.p_mlm = 0.3;
  params.p_ra = 0.3;
  params.num_anchors = 4;
  params.min_distance = 24;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto tokens = random_bytes(400, 1000 + seed, 12);
    MaskPlan plan = compose_retrieval_aware(tokens, params, seed);
    for (const MaskEntry& e : plan.entries) {
      if (e.strategy == MaskStrategy::kMlm) continue;
      bool visible = false;
      for (int q = 0; q <= e.position - params.min_distance; ++q) {
        if (tokens[q] != e.original_token) continue;
        const MaskEntry* at_q = plan.find(q);
        if (at_q == nullptr || at_q->action == MaskAction::kKeep) {
          visible = true;
          break;
        }
      }
      CHECK(visible);
    }
  }
}

TEST_CASE("applying a plan corrupts exactly the planned positions") {
  auto tokens = random_bytes(256, 14);
  MaskPlan plan = standard_mlm_mask(tokens, 0.4, 55);
  REQUIRE(!plan.entries.empty());
  Rng rng(123);
  std::vector<int> out = apply_mask_plan(tokens, plan, rng);
  REQUIRE(out.size() == tokens.size());
  for (int i = 0; i < 256; ++i) {
    const MaskEntry* e = plan.find(i);
    if (!e) {
      CHECK(out[i] == tokens[i]);
    } else if (e->action == MaskAction::kMaskToken) {
      CHECK(out[i] == tok::kMask);
    } else if (e->action == MaskAction::kRandomToken) {
      CHECK(out[i] >= 0);
      CHECK(out[i] < 256);
    } else {
      CHECK(out[i] == tokens[i]);
    }
  }
  // same rng seed -> same corruption
  Rng rng2(123);
  CHECK(apply_mask_plan(tokens, plan, rng2) == out);
}
