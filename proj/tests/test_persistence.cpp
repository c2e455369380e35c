#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "lchd/checkpoint.hpp"
#include "lchd/encoder.hpp"
#include "lchd/evalbench.hpp"
#include "lchd/records.hpp"
#include "lchd/run_config.hpp"

using namespace lchd;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string tmp_path(const std::string& name) {
  static const std::filesystem::path dir = [] {
    auto d = std::filesystem::temp_directory_path() / "lchd_persist_tests";
    std::filesystem::create_directories(d);
    return d;
  }();
  return (dir / name).string();
}

void write_raw(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.d_ffn = 16;
  cfg.rope.head_dim = 4;
  cfg.rope.orig_max_len = 64;
  return cfg;
}

CheckpointHeader rich_header() {
  CheckpointHeader h;
  h.config = tiny_config();
  h.config.rope.scale_s = 4.0f;
  h.stage = Stage::kAdapters;
  h.ewc_lambda = 7.5;
  h.adapter_layers = {1};
  h.adapter_bottleneck = 16;
  h.seed_lineage = {{"pretrain", 42}, {"extend", 43}, {"train-detector", 44}};
  return h;
}

}  // namespace

TEST_CASE("stage names round-trip") {
  for (Stage s : {Stage::kPretrained, Stage::kExtended, Stage::kDetector, Stage::kAdapters})
    CHECK(stage_from_string(to_string(s)) == s);
  CHECK(to_string(Stage::kPretrained) == "pretrained");
  CHECK_THROWS(stage_from_string("frobnicated"));
}

TEST_CASE("checkpoint save load save reproduces the file byte for byte") {
  EncoderConfig cfg = tiny_config();
  ParamStore model = init_encoder(cfg, 7);
  add_detection_head(model, cfg);
  CheckpointHeader h = rich_header();

  std::string p1 = tmp_path("rt1.ckpt"), p2 = tmp_path("rt2.ckpt");
  save_checkpoint(p1, h, model);
  LoadedCheckpoint lc = load_checkpoint(p1);

  CHECK(lc.header.kind == "model");
  CHECK(lc.header.gelu_variant == "erf");
  CHECK(lc.header.stage == Stage::kAdapters);
  CHECK(lc.header.ewc_lambda == 7.5);
  CHECK(lc.header.adapter_layers == std::vector<int>{1});
  CHECK(lc.header.adapter_bottleneck == 16);
  REQUIRE(lc.header.seed_lineage.size() == 3);
  CHECK(lc.header.seed_lineage[1].first == "extend");
  CHECK(lc.header.seed_lineage[1].second == 43);
  CHECK(lc.header.config.num_layers == cfg.num_layers);
  CHECK(lc.header.config.rope.scale_s == 4.0f);
  CHECK(lc.header.config.rope.head_dim == cfg.rope.head_dim);

  REQUIRE(lc.params.names() == model.names());
  for (const auto& name : model.names())
    CHECK((lc.params.at(name).value - model.at(name).value).cwiseAbs().maxCoeff() == 0.0f);

  save_checkpoint(p2, lc.header, lc.params);
  CHECK(read_raw(p1) == read_raw(p2));
  CHECK(fnv1a_file_hex(p1) == fnv1a_file_hex(p2));
}

TEST_CASE("checkpoint loading reports what is wrong with a damaged file") {
  // build one healthy file, then derive broken variants from its pieces
  EncoderConfig cfg = tiny_config();
  ParamStore tiny;
  tiny.add("w", 2, 2).value << 1.0f, 2.0f, 3.0f, 4.0f;
  std::string good_path = tmp_path("good.ckpt");
  save_checkpoint(good_path, CheckpointHeader{.config = cfg}, tiny);
  std::string good = read_raw(good_path);
  std::string header_line = good.substr(6, good.find('\n', 6) - 6);

  auto expect_failure = [&](const std::string& name, const std::string& bytes,
                            const std::string& needle) {
    std::string p = tmp_path(name);
    write_raw(p, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains(needle.c_str()),
                         std::runtime_error);
  };

  expect_failure("badmagic.ckpt", "XXXX1\n" + good.substr(6), "bad magic");
  expect_failure("nohdr.ckpt", "LCHD1\n", "missing header");
  expect_failure("notable.ckpt", "LCHD1\n" + header_line + "\nNOPE\n", "missing tensor table");
  expect_failure("shorttable.ckpt", "LCHD1\n" + header_line + "\nTENS 2\nT w 2 2 2\n" +
                                        std::string(16, '\0') + "\n",
                 "truncated tensor table");
  expect_failure("badrank.ckpt", "LCHD1\n" + header_line + "\nTENS 1\nT w 3 2 2 2\n",
                 "bad tensor line");
  expect_failure("shortpay.ckpt",
                 "LCHD1\n" + header_line + "\nTENS 1\nT w 2 2 2\n" + std::string(8, '\0'),
                 "payload shorter than header claims");
  expect_failure("overrun.ckpt",
                 "LCHD1\n" + header_line + "\nTENS 1\nT w 2 2 2\n" + std::string(16, '\0') +
                     "Z\nEND\n",
                 "payload/shape disagreement");
  expect_failure("noend.ckpt",
                 "LCHD1\n" + header_line + "\nTENS 1\nT w 2 2 2\n" + std::string(16, '\0') + "\n",
                 "missing end marker");
  CHECK_THROWS(load_checkpoint(tmp_path("does_not_exist.ckpt")));
}

TEST_CASE("hash fingerprints are stable") {
  CHECK(fnv1a_bytes_hex("abc", 3) == "e71fa2190541574b");
  CHECK(fnv1a_bytes_hex("", 0) == "cbf29ce484222325");
  CHECK(fnv1a_bytes_hex("hello world", 11) == "779a65e7023cd2e7");
  std::string p = tmp_path("hash.bin");
  write_raw(p, "hello world");
  CHECK(fnv1a_file_hex(p) == "779a65e7023cd2e7");
}

TEST_CASE("verification samples survive the jsonl round trip") {
  std::vector<VerificationSample> samples(2);
  samples[0].context_tokens = {104, 105};  // "hi"
  samples[0].query_tokens = {63};          // "?"
  samples[0].response_tokens = {111, 107};
  samples[0].gold_labels = {0, 1};
  samples[1].context_tokens = {97};
  samples[1].query_tokens = {98};
  samples[1].response_tokens = {99};
  samples[1].gold_labels = {1};

  std::string p = tmp_path("samples.jsonl");
  save_samples_jsonl(p, samples);
  auto loaded = load_samples_jsonl(p);
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].context_tokens == samples[i].context_tokens);
    CHECK(loaded[i].query_tokens == samples[i].query_tokens);
    CHECK(loaded[i].response_tokens == samples[i].response_tokens);
    CHECK(loaded[i].gold_labels == samples[i].gold_labels);
  }

  VerificationSample high_byte;
  high_byte.context_tokens = {200};
  high_byte.response_tokens = {65};
  high_byte.gold_labels = {0};
  CHECK_THROWS(save_samples_jsonl(tmp_path("bad_samples.jsonl"), {high_byte}));

  std::string mism = tmp_path("mismatch.jsonl");
  write_raw(mism, "{\"context\":\"a\",\"query\":\"b\",\"response\":\"cd\",\"labels\":[1]}\n");
  CHECK_THROWS(load_samples_jsonl(mism));
  std::string empty = tmp_path("empty.jsonl");
  write_raw(empty, "");
  CHECK_THROWS(load_samples_jsonl(empty));
}

TEST_CASE("retrieval probes survive the jsonl round trip and are validated") {
  auto probes = gen_retrieval_probes(4, 32, {5, 9}, 3);
  std::string p = tmp_path("probes.jsonl");
  save_probes_jsonl(p, probes);
  auto loaded = load_probes_jsonl(p);
  REQUIRE(loaded.size() == probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    CHECK(loaded[i].sequence == probes[i].sequence);
    CHECK(loaded[i].target_position == probes[i].target_position);
    CHECK(loaded[i].evidence_position == probes[i].evidence_position);
    CHECK(loaded[i].distance == probes[i].distance);
  }

  std::string bad = tmp_path("bad_probe.jsonl");
  write_raw(bad,
            "{\"tokens\":[1,2,3],\"target_position\":2,\"evidence_position\":0,\"distance\":5}\n");
  CHECK_THROWS_WITH(load_probes_jsonl(bad), "probe record: distance does not match positions");
}

TEST_CASE("corpora load from both the jsonl and the plain text form") {
  std::vector<std::vector<int>> docs = {{0, 127, 255, 31}, {65, 66}};
  std::string pj = tmp_path("corpus.jsonl");
  save_corpus_jsonl(pj, docs);
  CHECK(load_corpus(pj) == docs);

  std::string pt = tmp_path("corpus.txt");
  write_raw(pt, "AB\nxyz\n");
  auto text_docs = load_corpus(pt);
  REQUIRE(text_docs.size() == 2);
  CHECK(text_docs[0] == std::vector<int>{65, 66});
  CHECK(text_docs[1] == std::vector<int>{120, 121, 122});

  std::string empty = tmp_path("empty_corpus.jsonl");
  write_raw(empty, "\n\n");
  CHECK_THROWS(load_corpus(empty));
}

TEST_CASE("training log records serialize one step per line") {
  TrainingLog log;
  log.steps.push_back({1, 5.5, 0.25, 1e-3});
  log.steps.push_back({2, 5.0, 0.125, 2e-3});
  std::string p = tmp_path("log.jsonl");
  save_training_log_jsonl(p, log);

  std::ifstream in(p);
  std::string line;
  REQUIRE(std::getline(in, line));
  ordered_json j = ordered_json::parse(line);
  CHECK(j.at("step") == 1);
  CHECK(j.at("mlm_loss") == 5.5);
  CHECK(j.at("ewc_penalty") == 0.25);
  CHECK(j.at("lr") == 1e-3);
  REQUIRE(std::getline(in, line));
  CHECK(ordered_json::parse(line).at("step") == 2);
  CHECK(!std::getline(in, line));
}

TEST_CASE("latency records serialize and the table marks the full-depth rows") {
  std::vector<LatencyRecord> grid = {{128, 1, 0, 1.5, 666.7}, {128, 2, 3, 0.75, 1333.3}};
  std::string p = tmp_path("latency.jsonl");
  save_latency_jsonl(p, grid);
  std::ifstream in(p);
  std::string line;
  REQUIRE(std::getline(in, line));
  ordered_json j = ordered_json::parse(line);
  CHECK(j.at("seq_len") == 128);
  CHECK(j.at("exit_layer") == 0);
  CHECK(j.at("ms_per_sample") == 1.5);

  std::string table = latency_table(grid);
  CHECK(table.find("seq_len") != std::string::npos);
  CHECK(table.find("full") != std::string::npos);  // exit 0 renders as the full head
  CHECK(table.find("   3") != std::string::npos);
  CHECK(table.find("128") != std::string::npos);
}

TEST_CASE("config parsing fills defaults and applies overrides") {
  ordered_json j = ordered_json::parse(R"({
    "model": {"num_layers": 4, "d_model": 32, "num_heads": 4, "scale_s": 4.0},
    "pretrain": {"epochs": 2, "learning_rate": 0.005},
    "extend": {"mask_mode": "standard", "lambda": 250.0},
    "detector": {"loss": "focal", "gamma": 1.5},
    "truncation": {"window": 777}
  })");
  RunConfig rc = run_config_from_json(j);
  CHECK(rc.model.num_layers == 4);
  CHECK(rc.model.d_model == 32);
  CHECK(rc.model.rope.head_dim == 8);  // derived from d_model / num_heads
  CHECK(rc.model.rope.scale_s == 4.0f);
  CHECK(rc.pretrain.epochs == 2);
  CHECK(rc.pretrain.learning_rate == 0.005);
  CHECK(rc.pretrain.batch_size == 16);  // untouched default
  CHECK(rc.extend.mask_mode == "standard");
  CHECK(rc.extend.lambda == 250.0);
  CHECK(rc.detector.loss == "focal");
  CHECK(rc.detector.gamma == 1.5);
  CHECK(rc.truncation_window == 777);
}

TEST_CASE("config parsing is strict about sections keys types and enums") {
  CHECK_THROWS_WITH(run_config_from_json(ordered_json::parse(R"({"modle": {}})")),
                    "unknown config section modle");
  CHECK_THROWS_WITH(run_config_from_json(ordered_json::parse(R"({"model": {"n_layers": 3}})")),
                    "unknown config key model.n_layers");
  CHECK_THROWS_WITH(
      run_config_from_json(ordered_json::parse(R"({"model": {"num_layers": "six"}})")),
      "config key model.num_layers has the wrong type");
  CHECK_THROWS(run_config_from_json(ordered_json::parse(R"({"model": 3})")));
  CHECK_THROWS(run_config_from_json(ordered_json::parse(R"([1, 2])")));
  CHECK_THROWS_WITH(
      run_config_from_json(ordered_json::parse(R"({"extend": {"mask_mode": "clever"}})")),
      "extend.mask_mode must be retrieval_aware or standard");
  CHECK_THROWS_WITH(run_config_from_json(ordered_json::parse(R"({"detector": {"loss": "mse"}})")),
                    "detector.loss must be ce, weighted or focal");
  CHECK_THROWS_WITH(
      run_config_from_json(ordered_json::parse(R"({"benchmark": {"depth": "middle"}})")),
      "benchmark.depth must be uniform, front or back");
}

TEST_CASE("config json round trip is lossless") {
  RunConfig rc;
  rc.model.num_layers = 5;
  rc.adapters.exit_layers = {1, 3};
  rc.benchmark.depth = DepthDist::kBack;
  rc.probes.distance_buckets = {10, 20};
  ordered_json j1 = run_config_to_json(rc);
  RunConfig back = run_config_from_json(j1);
  ordered_json j2 = run_config_to_json(back);
  CHECK(j1.dump() == j2.dump());

  std::string p = tmp_path("config.json");
  write_raw(p, j1.dump(2));
  RunConfig from_file = load_run_config(p);
  CHECK(run_config_to_json(from_file).dump() == j1.dump());
  CHECK_THROWS(load_run_config(tmp_path("missing_config.json")));
}

TEST_CASE("config converters hand the right knobs to each stage") {
  RunConfig rc;
  rc.pretrain.learning_rate = 0.007;
  rc.pretrain.epochs = 3;
  rc.extend.p_ra = 0.2;
  rc.extend.num_anchors = 9;
  rc.extend.min_distance = 77;
  rc.extend.lambda = 123.0;
  rc.extend.mask_mode = "standard";
  rc.detector.loss = "weighted";
  rc.detector.weight1 = 4.0;
  rc.adapters.temperature = 3.5;

  MlmTrainConfig pre = pretrain_train_config(rc, 11);
  CHECK(pre.learning_rate == 0.007);
  CHECK(pre.epochs == 3);
  CHECK(pre.mask_mode == MaskMode::kStandard);
  CHECK(pre.lambda == 0.0);
  CHECK(pre.seed == 11);

  MlmTrainConfig ext = extend_train_config(rc, 12);
  CHECK(ext.mask_mode == MaskMode::kStandard);
  CHECK(ext.ra.p_ra == 0.2);
  CHECK(ext.ra.num_anchors == 9);
  CHECK(ext.ra.min_distance == 77);
  CHECK(ext.lambda == 123.0);
  rc.extend.mask_mode = "retrieval_aware";
  CHECK(extend_train_config(rc, 12).mask_mode == MaskMode::kRetrievalAware);

  DetectorTrainConfig det = detector_train_config(rc, 13);
  CHECK(det.loss.kind == DetectionLossKind::kWeighted);
  CHECK(det.loss.weight1 == 4.0);
  rc.detector.loss = "focal";
  CHECK(detector_train_config(rc, 13).loss.kind == DetectionLossKind::kFocal);

  DistillConfig ad = adapter_train_config(rc, 14);
  CHECK(ad.temperature == 3.5);
  CHECK(ad.seed == 14);
}
