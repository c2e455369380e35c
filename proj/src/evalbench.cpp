#include "lchd/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "lchd/early_exit.hpp"
#include "lchd/rng.hpp"
#include "lchd/tokenizer.hpp"

namespace lchd {

namespace {

constexpr int kAlphabetLo = 0xA0;
constexpr int kAlphabetHi = 0xFF;  // inclusive
constexpr int kAlphabetSize = kAlphabetHi - kAlphabetLo + 1;
constexpr int kPairSep = 0x20;

const char* kFillerWords[] = {"the",    "record", "was",    "reviewed", "and",   "filed",
                              "under",  "routine", "audit", "with",     "no",    "open",
                              "items",  "status", "remains", "stable",  "archive", "copy",
                              "kept",   "for",    "reference", "later", "review", "cycle"};

std::string filler_sentence(Rng& rng) {
  int words = rng.range_int(3, 6);
  std::string s;
  for (int i = 0; i < words; ++i) {
    if (i) s += ' ';
    s += kFillerWords[rng.below(std::size(kFillerWords))];
  }
  s += ". ";
  return s;
}

// Fixed-width fact sentence; the value digits sit at offsets 20 and 21.
constexpr int kFactLen = 24;
constexpr int kValueDigitOffset = 20;

std::string fact_sentence(int entity, int value) {
  return "entity-" + std::to_string(entity) + " has value-" + std::to_string(value) + ". ";
}

std::vector<int> echo_document(int target_len, const CorpusParams& cp, Rng& rng) {
  std::vector<int> doc;
  doc.reserve(target_len + 3);
  std::map<int, int> assoc;
  std::vector<int> used;
  std::vector<int> unused;
  for (int b = kAlphabetLo; b <= kAlphabetHi; ++b) unused.push_back(b);

  while (static_cast<int>(doc.size()) + 3 <= target_len) {
    int key;
    double u = rng.uniform_double();
    if (used.empty() || (u < cp.p_new_key && !unused.empty())) {
      std::size_t i = rng.below(unused.size());
      key = unused[i];
      unused.erase(unused.begin() + i);
      assoc[key] = kAlphabetLo + static_cast<int>(rng.below(kAlphabetSize));
      used.push_back(key);
    } else if (u < cp.p_new_key + cp.p_recent_key) {
      std::size_t window = std::min<std::size_t>(cp.recent_window, used.size());
      key = used[used.size() - 1 - rng.below(window)];
    } else {
      key = used[rng.below(used.size())];
    }
    doc.push_back(key);
    doc.push_back(assoc[key]);
    doc.push_back(kPairSep);
  }
  return doc;
}

std::vector<int> fact_document(int target_len, double fact_density, Rng& rng) {
  std::string text;
  std::vector<int> entities;
  for (int e = 10; e <= 99; ++e) entities.push_back(e);
  for (std::size_t i = entities.size(); i > 1; --i)
    std::swap(entities[i - 1], entities[rng.below(i)]);
  std::size_t next_entity = 0;
  while (static_cast<int>(text.size()) < target_len) {
    if (rng.bernoulli(fact_density) && next_entity < entities.size()) {
      text += fact_sentence(entities[next_entity++], rng.range_int(10, 99));
    } else {
      text += filler_sentence(rng);
    }
  }
  text.resize(target_len);
  return tok::encode(text);
}

}  // namespace

std::vector<std::vector<int>> gen_corpus(const CorpusParams& cp, std::uint64_t seed) {
  if (cp.num_docs < 1) throw std::invalid_argument("gen_corpus: num_docs must be positive");
  if (cp.min_len < 8 || cp.max_len < cp.min_len)
    throw std::invalid_argument("gen_corpus: bad length range");
  if (cp.echo_fraction < 0.0 || cp.echo_fraction > 1.0)
    throw std::invalid_argument("gen_corpus: echo_fraction outside [0, 1]");
  std::vector<std::vector<int>> docs;
  docs.reserve(cp.num_docs);
  for (int i = 0; i < cp.num_docs; ++i) {
    Rng rng(mix_seed(seed, 40000 + i));
    int target = rng.range_int(cp.min_len, cp.max_len);
    bool echo = rng.uniform_double() < cp.echo_fraction;
    docs.push_back(echo ? echo_document(target, cp, rng)
                        : fact_document(target, 0.45, rng));
  }
  return docs;
}

std::vector<RetrievalProbe> gen_retrieval_probes(int count, int length,
                                                 const std::vector<int>& distance_buckets,
                                                 std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("gen_retrieval_probes: count must be positive");
  if (distance_buckets.empty())
    throw std::invalid_argument("gen_retrieval_probes: no distance buckets");
  for (int d : distance_buckets) {
    if (d == 0) throw std::invalid_argument("gen_retrieval_probes: distance 0 disallowed");
    if (d < 2) throw std::invalid_argument("gen_retrieval_probes: distance below stamp width");
    if (d + 1 >= length)
      throw std::invalid_argument("gen_retrieval_probes: distance " + std::to_string(d) +
                                  " exceeds sequence length");
  }

  std::vector<RetrievalProbe> probes;
  probes.reserve(count);
  const int nb = static_cast<int>(distance_buckets.size());
  for (int i = 0; i < count; ++i) {
    int distance = distance_buckets[i % nb];
    Rng rng(mix_seed(seed, 50000 + i));
    int key = kAlphabetLo + static_cast<int>(rng.below(kAlphabetSize));
    int value = key;
    while (value == key) value = kAlphabetLo + static_cast<int>(rng.below(kAlphabetSize));

    RetrievalProbe p;
    p.distance = distance;
    p.target_position = rng.range_int(distance + 1, length - 1);
    p.evidence_position = p.target_position - distance;
    p.sequence.resize(length);
    for (int pos = 0; pos < length; ++pos) {
      int b = key;
      while (b == key || b == value)
        b = kAlphabetLo + static_cast<int>(rng.below(kAlphabetSize));
      p.sequence[pos] = b;
    }
    p.sequence[p.evidence_position - 1] = key;
    p.sequence[p.evidence_position] = value;
    p.sequence[p.target_position - 1] = key;
    p.sequence[p.target_position] = value;
    probes.push_back(std::move(p));
  }
  return probes;
}

std::vector<RetrievalCurvePoint> eval_retrieval_curve(const ParamStore& model,
                                                      const EncoderConfig& cfg,
                                                      const std::vector<RetrievalProbe>& probes) {
  if (probes.empty()) throw std::invalid_argument("eval_retrieval_curve: no probes");
  std::map<int, std::pair<int, int>> by_distance;  // distance -> (correct, total)
  for (const RetrievalProbe& p : probes) {
    std::vector<int> seq = p.sequence;
    int answer = seq[p.target_position];
    seq[p.target_position] = tok::kMask;
    HiddenStack hs = encoder_forward(seq, {}, model, cfg);
    Mat row = hs.states.back().row(p.target_position);
    Mat logits = head_forward(row, "mlm_head", model, cfg);
    Index argmax;
    logits.row(0).maxCoeff(&argmax);
    auto& cell = by_distance[p.distance];
    if (static_cast<int>(argmax) == answer) ++cell.first;
    ++cell.second;
  }
  std::vector<RetrievalCurvePoint> out;
  for (const auto& [d, cell] : by_distance)
    out.push_back({d, static_cast<double>(cell.first) / cell.second, cell.second});
  return out;
}

GeneratedBenchmark gen_halluc_benchmark(const SyntheticDocParams& sp, std::uint64_t seed) {
  if (sp.n_docs < 1) throw std::invalid_argument("gen_halluc_benchmark: n_docs must be positive");
  if (sp.halluc_rate < 0.0 || sp.halluc_rate > 1.0)
    throw std::invalid_argument("gen_halluc_benchmark: halluc_rate outside [0, 1]");
  if (sp.n_restate < 1)
    throw std::invalid_argument("gen_halluc_benchmark: n_restate must be positive");
  if (sp.min_len < sp.n_restate * kFactLen || sp.max_len < sp.min_len)
    throw std::invalid_argument("gen_halluc_benchmark: length range too small");

  GeneratedBenchmark bench;
  std::int64_t positive_tokens = 0, total_tokens = 0;

  for (int i = 0; i < sp.n_docs; ++i) {
    // retry with fresh substreams until the doc holds enough facts
    SyntheticDoc doc;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 100)
        throw std::runtime_error("gen_halluc_benchmark: failed to place facts");
      Rng rng(mix_seed(seed, 60000 + 101 * i + attempt));
      int target = rng.range_int(sp.min_len, sp.max_len);

      std::string context;
      struct Fact { int entity; int value; int char_start; };
      std::vector<Fact> facts;
      std::vector<int> entities;
      for (int e = 10; e <= 99; ++e) entities.push_back(e);
      for (std::size_t j = entities.size(); j > 1; --j)
        std::swap(entities[j - 1], entities[rng.below(j)]);
      std::size_t next_entity = 0;
      while (static_cast<int>(context.size()) + kFactLen <= target) {
        if (rng.bernoulli(sp.fact_density) && next_entity < entities.size()) {
          int e = entities[next_entity++];
          int v = rng.range_int(10, 99);
          facts.push_back({e, v, static_cast<int>(context.size())});
          context += fact_sentence(e, v);
        } else {
          context += filler_sentence(rng);
        }
      }
      if (static_cast<int>(facts.size()) < sp.n_restate) continue;

      // choose which facts the response restates, depth-weighted
      std::vector<int> chosen;
      while (static_cast<int>(chosen.size()) < sp.n_restate) {
        double u = rng.uniform_double();
        double f;
        switch (sp.depth) {
          case DepthDist::kFront: f = u * u; break;
          case DepthDist::kBack: f = 1.0 - u * u; break;
          default: f = u; break;
        }
        int idx = std::min(static_cast<int>(f * facts.size()),
                           static_cast<int>(facts.size()) - 1);
        if (std::find(chosen.begin(), chosen.end(), idx) == chosen.end()) chosen.push_back(idx);
      }
      for (std::size_t j = chosen.size(); j > 1; --j)
        std::swap(chosen[j - 1], chosen[rng.below(j)]);

      doc.flagged = rng.bernoulli(sp.halluc_rate);
      doc.perturbed.assign(chosen.size(), 0);
      if (doc.flagged) {
        for (std::size_t j = 0; j < chosen.size(); ++j)
          if (rng.bernoulli(sp.perturb_prob)) doc.perturbed[j] = 1;
        if (std::find(doc.perturbed.begin(), doc.perturbed.end(), 1) == doc.perturbed.end())
          doc.perturbed[rng.below(doc.perturbed.size())] = 1;
      }

      std::string response;
      std::vector<int> labels;
      doc.evidence_depths.clear();
      for (std::size_t j = 0; j < chosen.size(); ++j) {
        const Fact& f = facts[chosen[j]];
        int reported = f.value;
        if (doc.perturbed[j]) {
          while (reported == f.value) reported = rng.range_int(10, 99);
        }
        int start = static_cast<int>(response.size());
        response += fact_sentence(f.entity, reported);
        labels.resize(response.size(), 0);
        if (doc.perturbed[j]) {
          labels[start + kValueDigitOffset] = 1;
          labels[start + kValueDigitOffset + 1] = 1;
        }
        doc.evidence_depths.push_back(static_cast<double>(f.char_start) /
                                      static_cast<double>(context.size()));
      }

      doc.sample.context_tokens = tok::encode(context);
      doc.sample.query_tokens = tok::encode("state the recorded values.");
      doc.sample.response_tokens = tok::encode(response);
      doc.sample.gold_labels = labels;
      break;
    }

    if (doc.flagged) bench.flagged_fraction += 1.0;
    for (int l : doc.sample.gold_labels) {
      positive_tokens += l;
      ++total_tokens;
    }
    for (double d : doc.evidence_depths) {
      int bin = std::min(9, static_cast<int>(d * 10));
      ++bench.depth_histogram[bin];
    }
    bench.docs.push_back(std::move(doc));
  }
  bench.flagged_fraction /= sp.n_docs;
  bench.token_positive_rate =
      total_tokens > 0 ? static_cast<double>(positive_tokens) / total_tokens : 0.0;
  return bench;
}

std::vector<VerificationSample> benchmark_samples(const GeneratedBenchmark& bench) {
  std::vector<VerificationSample> out;
  out.reserve(bench.docs.size());
  for (const auto& d : bench.docs) out.push_back(d.sample);
  return out;
}

TruncationResult truncation_eval(const ParamStore& model, const EncoderConfig& cfg,
                                 const std::vector<VerificationSample>& docs, int window) {
  if (window < 1) throw std::invalid_argument("truncation_eval: window must be positive");
  if (docs.empty()) throw std::invalid_argument("truncation_eval: no documents");
  TruncationResult res;
  res.window = window;

  std::vector<PredictResult> full_preds, trunc_preds;
  int truncated_count = 0;
  for (const auto& doc : docs) {
    full_preds.push_back(predict(model, cfg, doc));
    VerificationSample clipped = doc;
    if (static_cast<int>(clipped.context_tokens.size()) > window) {
      clipped.context_tokens.resize(window);
      ++truncated_count;
    }
    trunc_preds.push_back(predict(model, cfg, clipped));
  }
  res.full = compute_metrics(full_preds, docs);
  res.truncated = compute_metrics(trunc_preds, docs);
  res.fraction_truncated = static_cast<double>(truncated_count) / docs.size();
  return res;
}

std::vector<LatencyRecord> bench_latency(const ParamStore& model, const EncoderConfig& cfg,
                                         const std::vector<int>& seq_lens,
                                         const std::vector<int>& batch_sizes,
                                         const std::vector<int>& exit_layers, int repetitions,
                                         std::uint64_t seed) {
  if (repetitions < 3)
    throw std::invalid_argument("bench_latency: need at least 3 repetitions");
  if (seq_lens.empty() || batch_sizes.empty() || exit_layers.empty())
    throw std::invalid_argument("bench_latency: empty grid axis");
  if (!model.contains("det_head.w"))
    throw std::invalid_argument("bench_latency: model has no token head");
  for (int n : seq_lens)
    if (n < 1 || n > cfg.max_len())
      throw std::invalid_argument("bench_latency: sequence length outside model window");

  using Clock = std::chrono::steady_clock;
  std::vector<LatencyRecord> grid;
  Rng rng(mix_seed(seed, 0xbe7c));

  for (int n : seq_lens) {
    std::vector<int> seq(n);
    for (int i = 0; i < n; ++i) seq[i] = static_cast<int>(rng.below(256));
    for (int batch : batch_sizes) {
      if (batch < 1) throw std::invalid_argument("bench_latency: batch size must be positive");
      for (int exit_layer : exit_layers) {
        auto run_once = [&]() {
          if (exit_layer == 0) {
            HiddenStack hs = encoder_forward(seq, {}, model, cfg);
            head_forward(hs.states.back(), "det_head", model, cfg);
          } else {
            ForwardOptions opts;
            opts.stop_layer = exit_layer;
            HiddenStack hs = encoder_forward(seq, {}, model, cfg, opts);
            adapter_forward(hs.states.back(), model, cfg, exit_layer);
          }
        };
        run_once();  // warmup
        std::vector<double> times_ms;
        for (int rep = 0; rep < repetitions; ++rep) {
          auto t0 = Clock::now();
          for (int b = 0; b < batch; ++b) run_once();
          auto t1 = Clock::now();
          times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(times_ms.begin(), times_ms.end());
        double median = times_ms[times_ms.size() / 2];
        if (times_ms.size() % 2 == 0)
          median = 0.5 * (median + times_ms[times_ms.size() / 2 - 1]);
        LatencyRecord rec;
        rec.seq_len = n;
        rec.batch_size = batch;
        rec.exit_layer = exit_layer;
        rec.ms_per_sample = median / batch;
        rec.samples_per_second = 1000.0 * batch / median;
        grid.push_back(rec);
      }
    }
  }
  return grid;
}

}  // namespace lchd
