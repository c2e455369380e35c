#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cctype>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "doctest.h"
#include "lchd/early_exit.hpp"
#include "lchd/encoder.hpp"
#include "lchd/evalbench.hpp"
#include "lchd/tokenizer.hpp"

using namespace lchd;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.d_ffn = 16;
  cfg.rope.head_dim = 4;
  cfg.rope.orig_max_len = 128;
  return cfg;
}

// independent reading of the fact grammar used by the generated documents
std::map<int, int> parse_context_facts(const std::string& ctx) {
  std::map<int, int> facts;
  std::regex re("entity-(\\d\\d) has value-(\\d\\d)\\. ");
  for (auto it = std::sregex_iterator(ctx.begin(), ctx.end(), re);
       it != std::sregex_iterator(); ++it)
    facts[std::stoi((*it)[1])] = std::stoi((*it)[2]);
  return facts;
}

VerificationSample labeled_sample(int context_len, int a, int b) {
  VerificationSample s;
  for (int i = 0; i < context_len; ++i) s.context_tokens.push_back(65 + i % 26);
  s.query_tokens = {a};
  s.response_tokens = {a, b, a};
  s.gold_labels = {0, 1, 0};
  return s;
}

}  // namespace

TEST_CASE("corpus generation respects counts lengths and determinism") {
  CorpusParams cp;
  cp.num_docs = 10;
  cp.min_len = 64;
  cp.max_len = 96;
  auto docs = gen_corpus(cp, 7);
  REQUIRE(static_cast<int>(docs.size()) == 10);
  for (const auto& d : docs) {
    CHECK(static_cast<int>(d.size()) >= cp.min_len - 2);  // pair streams stop short of the target
    CHECK(static_cast<int>(d.size()) <= cp.max_len);
    for (int t : d) {
      CHECK(t >= 0);
      CHECK(t <= 255);
    }
  }
  auto again = gen_corpus(cp, 7);
  CHECK(docs == again);
  CHECK(gen_corpus(cp, 8) != docs);
}

TEST_CASE("corpus families are recognizable at the extremes") {
  CorpusParams cp;
  cp.num_docs = 6;
  cp.min_len = 60;
  cp.max_len = 60;
  cp.echo_fraction = 1.0;
  for (const auto& d : gen_corpus(cp, 3)) {
    // key value separator triplets
    for (std::size_t i = 2; i < d.size(); i += 3) CHECK(d[i] == 0x20);
    CHECK(d[0] >= 0xA0);
  }
  cp.echo_fraction = 0.0;
  for (const auto& d : gen_corpus(cp, 3))
    for (int t : d) CHECK(t < 128);  // plain text stays in ascii
}

TEST_CASE("corpus generation validates its parameters") {
  CorpusParams cp;
  cp.num_docs = 0;
  CHECK_THROWS(gen_corpus(cp, 1));
  cp = {};
  cp.min_len = 4;
  CHECK_THROWS(gen_corpus(cp, 1));
  cp = {};
  cp.max_len = cp.min_len - 1;
  CHECK_THROWS(gen_corpus(cp, 1));
  cp = {};
  cp.echo_fraction = 1.5;
  CHECK_THROWS(gen_corpus(cp, 1));
}

TEST_CASE("positional probes plant the pair exactly twice at the stated distance") {
  auto probes = gen_retrieval_probes(12, 64, {8, 20}, 99);
  REQUIRE(static_cast<int>(probes.size()) == 12);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const RetrievalProbe& p = probes[i];
    CHECK(p.distance == (i % 2 == 0 ? 8 : 20));  // round-robin over buckets
    REQUIRE(static_cast<int>(p.sequence.size()) == 64);
    CHECK(p.target_position - p.evidence_position == p.distance);
    CHECK(p.target_position > p.distance);
    CHECK(p.target_position < 64);
    int key = p.sequence[p.target_position - 1];
    int value = p.sequence[p.target_position];
    CHECK(p.sequence[p.evidence_position - 1] == key);
    CHECK(p.sequence[p.evidence_position] == value);
    CHECK(key != value);
    for (int pos = 0; pos < 64; ++pos) {
      if (pos == p.target_position || pos == p.evidence_position ||
          pos == p.target_position - 1 || pos == p.evidence_position - 1)
        continue;
      CHECK(p.sequence[pos] != key);
      CHECK(p.sequence[pos] != value);
    }
  }
  auto again = gen_retrieval_probes(12, 64, {8, 20}, 99);
  for (std::size_t i = 0; i < probes.size(); ++i)
    CHECK(probes[i].sequence == again[i].sequence);
}

TEST_CASE("probe generation reports which constraint failed") {
  CHECK_THROWS_WITH(gen_retrieval_probes(4, 64, {0}, 1),
                    "gen_retrieval_probes: distance 0 disallowed");
  CHECK_THROWS_WITH(gen_retrieval_probes(4, 64, {1}, 1),
                    "gen_retrieval_probes: distance below stamp width");
  CHECK_THROWS_WITH(gen_retrieval_probes(4, 64, {63}, 1),
                    "gen_retrieval_probes: distance 63 exceeds sequence length");
  CHECK_THROWS(gen_retrieval_probes(0, 64, {8}, 1));
  CHECK_THROWS(gen_retrieval_probes(4, 64, {}, 1));
}

TEST_CASE("retrieval curve pools probes by distance") {
  EncoderConfig cfg = tiny_config();
  ParamStore model = init_encoder(cfg, 11);
  auto probes = gen_retrieval_probes(9, 48, {6, 12, 24}, 5);
  auto curve = eval_retrieval_curve(model, cfg, probes);
  REQUIRE(static_cast<int>(curve.size()) == 3);
  CHECK(curve[0].distance == 6);
  CHECK(curve[1].distance == 12);
  CHECK(curve[2].distance == 24);
  int total = 0;
  for (const auto& pt : curve) {
    CHECK(pt.n == 3);
    CHECK(pt.accuracy >= 0.0);
    CHECK(pt.accuracy <= 1.0);
    total += pt.n;
  }
  CHECK(total == 9);
  CHECK_THROWS(eval_retrieval_curve(model, cfg, {}));
}

TEST_CASE("generated labels agree with an independent fact check") {
  SyntheticDocParams sp;
  sp.n_docs = 12;
  sp.min_len = 500;
  sp.max_len = 800;
  GeneratedBenchmark bench = gen_halluc_benchmark(sp, 21);
  REQUIRE(static_cast<int>(bench.docs.size()) == 12);

  for (const SyntheticDoc& doc : bench.docs) {
    std::string ctx = tok::decode(doc.sample.context_tokens);
    std::string resp = tok::decode(doc.sample.response_tokens);
    std::map<int, int> truth = parse_context_facts(ctx);

    // the response is a sequence of fixed-width fact sentences
    REQUIRE(resp.size() % 24 == 0);
    int n_facts = static_cast<int>(resp.size()) / 24;
    CHECK(n_facts == sp.n_restate);
    REQUIRE(doc.sample.gold_labels.size() == resp.size());
    REQUIRE(static_cast<int>(doc.perturbed.size()) == n_facts);
    REQUIRE(static_cast<int>(doc.evidence_depths.size()) == n_facts);

    std::vector<int> expect_labels(resp.size(), 0);
    bool any_wrong = false;
    for (int f = 0; f < n_facts; ++f) {
      std::string sent = resp.substr(24 * f, 24);
      std::smatch m;
      REQUIRE(std::regex_match(sent, m, std::regex("entity-(\\d\\d) has value-(\\d\\d)\\. ")));
      int entity = std::stoi(m[1]);
      int reported = std::stoi(m[2]);
      REQUIRE(truth.count(entity) == 1);
      bool wrong = reported != truth[entity];
      CHECK(doc.perturbed[f] == (wrong ? 1 : 0));
      if (wrong) {
        any_wrong = true;
        expect_labels[24 * f + 20] = 1;
        expect_labels[24 * f + 21] = 1;
      }
      CHECK(doc.evidence_depths[f] >= 0.0);
      CHECK(doc.evidence_depths[f] < 1.0);
    }
    CHECK(doc.sample.gold_labels == expect_labels);
    CHECK(doc.flagged == any_wrong);
    for (std::size_t i = 0; i < resp.size(); ++i)
      if (doc.sample.gold_labels[i] == 1) CHECK(std::isdigit(static_cast<unsigned char>(resp[i])));
  }

  int hist_total = 0;
  for (int c : bench.depth_histogram) hist_total += c;
  CHECK(hist_total == sp.n_docs * sp.n_restate);

  GeneratedBenchmark again = gen_halluc_benchmark(sp, 21);
  for (std::size_t i = 0; i < bench.docs.size(); ++i) {
    CHECK(bench.docs[i].sample.context_tokens == again.docs[i].sample.context_tokens);
    CHECK(bench.docs[i].sample.gold_labels == again.docs[i].sample.gold_labels);
  }
}

TEST_CASE("flag rate extremes behave") {
  SyntheticDocParams sp;
  sp.n_docs = 8;
  sp.min_len = 400;
  sp.max_len = 600;
  sp.halluc_rate = 0.0;
  GeneratedBenchmark clean = gen_halluc_benchmark(sp, 33);
  CHECK(clean.flagged_fraction == 0.0);
  CHECK(clean.token_positive_rate == 0.0);
  for (const auto& d : clean.docs)
    for (int l : d.sample.gold_labels) CHECK(l == 0);

  sp.halluc_rate = 1.0;
  GeneratedBenchmark dirty = gen_halluc_benchmark(sp, 33);
  CHECK(dirty.flagged_fraction == 1.0);
  CHECK(dirty.token_positive_rate > 0.0);
  for (const auto& d : dirty.docs) {
    CHECK(d.flagged);
    int positives = 0;
    for (int l : d.sample.gold_labels) positives += l;
    CHECK(positives >= 2);  // at least one fact, two digits
  }
  CHECK(static_cast<int>(benchmark_samples(dirty).size()) == sp.n_docs);
}

TEST_CASE("depth weighting shifts evidence toward the requested end") {
  SyntheticDocParams sp;
  sp.n_docs = 40;
  sp.min_len = 600;
  sp.max_len = 900;
  auto mean_depth = [&](DepthDist dist) {
    sp.depth = dist;
    GeneratedBenchmark b = gen_halluc_benchmark(sp, 44);
    double sum = 0.0;
    int n = 0;
    for (const auto& d : b.docs)
      for (double v : d.evidence_depths) {
        sum += v;
        ++n;
      }
    return sum / n;
  };
  double front = mean_depth(DepthDist::kFront);
  double mid = mean_depth(DepthDist::kUniform);
  double back = mean_depth(DepthDist::kBack);
  CHECK(front < mid - 0.05);
  CHECK(mid < back - 0.05);
}

TEST_CASE("benchmark generation validates its parameters") {
  SyntheticDocParams sp;
  sp.n_docs = 0;
  CHECK_THROWS(gen_halluc_benchmark(sp, 1));
  sp = {};
  sp.halluc_rate = 1.5;
  CHECK_THROWS(gen_halluc_benchmark(sp, 1));
  sp = {};
  sp.n_restate = 0;
  CHECK_THROWS(gen_halluc_benchmark(sp, 1));
  sp = {};
  sp.min_len = sp.n_restate * 24 - 1;
  CHECK_THROWS(gen_halluc_benchmark(sp, 1));
  sp = {};
  sp.max_len = sp.min_len - 1;
  CHECK_THROWS(gen_halluc_benchmark(sp, 1));
}

TEST_CASE("an oversized window leaves both evaluation arms identical") {
  EncoderConfig cfg = tiny_config();
  ParamStore model = init_encoder(cfg, 51);
  add_detection_head(model, cfg);
  std::vector<VerificationSample> docs = {labeled_sample(40, 70, 71),
                                          labeled_sample(30, 72, 73),
                                          labeled_sample(20, 74, 75)};
  TruncationResult res = truncation_eval(model, cfg, docs, 64);
  CHECK(res.fraction_truncated == 0.0);
  CHECK(res.window == 64);
  CHECK(res.full.token_tp == res.truncated.token_tp);
  CHECK(res.full.token_fp == res.truncated.token_fp);
  CHECK(res.full.token_fn == res.truncated.token_fn);
  CHECK(res.full.token_f1 == res.truncated.token_f1);
}

TEST_CASE("a tight window clips every long context") {
  EncoderConfig cfg = tiny_config();
  ParamStore model = init_encoder(cfg, 51);
  add_detection_head(model, cfg);
  std::vector<VerificationSample> docs = {labeled_sample(40, 70, 71),
                                          labeled_sample(30, 72, 73)};
  TruncationResult res = truncation_eval(model, cfg, docs, 8);
  CHECK(res.fraction_truncated == 1.0);
  // the intact arm matches a direct evaluation of the same documents
  std::vector<PredictResult> direct;
  for (const auto& d : docs) direct.push_back(predict(model, cfg, d));
  DetectionMetrics base = compute_metrics(direct, docs);
  CHECK(res.full.token_tp == base.token_tp);
  CHECK(res.full.token_fp == base.token_fp);
  CHECK(res.full.token_fn == base.token_fn);

  CHECK_THROWS(truncation_eval(model, cfg, docs, 0));
  CHECK_THROWS(truncation_eval(model, cfg, {}, 8));
}

TEST_CASE("latency grid covers the cross product with consistent readings") {
  EncoderConfig cfg = tiny_config();
  ParamStore model = init_encoder(cfg, 61);
  add_detection_head(model, cfg);
  add_adapter_params(model, cfg, {.exit_layer = 1, .bottleneck = 4}, 61);

  auto grid = bench_latency(model, cfg, {16, 32}, {1, 2}, {0, 1}, 3, 5);
  REQUIRE(static_cast<int>(grid.size()) == 8);
  std::size_t idx = 0;
  for (int n : {16, 32})
    for (int batch : {1, 2})
      for (int exit_layer : {0, 1}) {
        const LatencyRecord& r = grid[idx++];
        CHECK(r.seq_len == n);
        CHECK(r.batch_size == batch);
        CHECK(r.exit_layer == exit_layer);
        CHECK(r.ms_per_sample > 0.0);
        CHECK(r.samples_per_second > 0.0);
        CHECK(r.ms_per_sample * r.samples_per_second == doctest::Approx(1000.0).epsilon(1e-9));
      }
}

TEST_CASE("latency benchmarking validates its grid") {
  EncoderConfig cfg = tiny_config();
  ParamStore model = init_encoder(cfg, 61);
  CHECK_THROWS(bench_latency(model, cfg, {16}, {1}, {0}, 3, 5));  // no token head
  add_detection_head(model, cfg);
  CHECK_THROWS(bench_latency(model, cfg, {16}, {1}, {0}, 2, 5));
  CHECK_THROWS(bench_latency(model, cfg, {}, {1}, {0}, 3, 5));
  CHECK_THROWS(bench_latency(model, cfg, {16}, {}, {0}, 3, 5));
  CHECK_THROWS(bench_latency(model, cfg, {16}, {1}, {}, 3, 5));
  CHECK_THROWS(bench_latency(model, cfg, {cfg.max_len() + 1}, {1}, {0}, 3, 5));
  CHECK_THROWS(bench_latency(model, cfg, {16}, {0}, {0}, 3, 5));
  CHECK_THROWS(bench_latency(model, cfg, {16}, {1}, {1}, 3, 5));  // no adapter at layer 1
}
