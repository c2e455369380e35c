#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "lchd/run_config.hpp"

namespace lchd {

// Stage runners shared by the command-line tool and the end-to-end tests.
// Each writes its outputs plus a manifest (out path + ".manifest.json")
// recording the effective config, the seed, input/output fingerprints and
// headline metrics, then returns the manifest.

nlohmann::ordered_json run_gen_data(const RunConfig& rc, const std::string& out_dir,
                                    std::uint64_t seed);

nlohmann::ordered_json run_pretrain(const RunConfig& rc, const std::string& corpus_path,
                                    const std::string& out_ckpt, std::uint64_t seed);

nlohmann::ordered_json run_fisher(const RunConfig& rc, const std::string& ckpt_path,
                                  const std::string& corpus_path, const std::string& out_path,
                                  std::uint64_t seed, bool force = false);

nlohmann::ordered_json run_extend(const RunConfig& rc, const std::string& ckpt_path,
                                  const std::string& corpus_path, const std::string& ewc_path,
                                  const std::string& out_ckpt, std::uint64_t seed,
                                  bool force = false);

nlohmann::ordered_json run_train_detector(const RunConfig& rc, const std::string& ckpt_path,
                                          const std::string& samples_path,
                                          const std::string& out_ckpt, std::uint64_t seed,
                                          bool force = false);

nlohmann::ordered_json run_train_adapters(const RunConfig& rc, const std::string& ckpt_path,
                                          const std::string& samples_path,
                                          const std::string& out_ckpt, std::uint64_t seed,
                                          bool force = false);

nlohmann::ordered_json run_probe(const RunConfig& rc, const std::string& ckpt_path,
                                 const std::string& samples_path, const std::string& out_json,
                                 std::uint64_t seed);

nlohmann::ordered_json run_eval_retrieval(const RunConfig& rc, const std::string& ckpt_path,
                                          const std::string& probes_path,
                                          const std::string& out_json);

nlohmann::ordered_json run_eval_detect(const RunConfig& rc, const std::string& ckpt_path,
                                       const std::string& samples_path,
                                       const std::string& out_json,
                                       std::optional<int> exit_layer);

nlohmann::ordered_json run_eval_truncation(const RunConfig& rc, const std::string& ckpt_path,
                                           const std::string& samples_path, int window,
                                           const std::string& out_json);

nlohmann::ordered_json run_bench_latency(const RunConfig& rc, const std::string& ckpt_path,
                                         const std::string& out_path, std::uint64_t seed);

// Maps a named speed profile onto an exit layer for this depth.
// "max" selects the deepest preset exit.
int profile_exit_layer(const std::string& profile, int num_layers);

}  // namespace lchd
