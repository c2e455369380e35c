#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lchd/encoder.hpp"
#include "lchd/tensor.hpp"

namespace lchd {

// Pipeline stages in order; loading enforces the expected predecessor unless
// forced.
enum class Stage { kPretrained, kExtended, kDetector, kAdapters };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

// What a checkpoint file holds besides tensors: the architecture needed to
// rebuild the model, the activation variant, where in the pipeline it was
// produced, and the seeds that led to it.
struct CheckpointHeader {
  EncoderConfig config;
  std::string gelu_variant = "erf";
  std::string kind = "model";  // "model" or "ewc_state"
  Stage stage = Stage::kPretrained;
  double ewc_lambda = 0.0;     // ewc_state files record their weight here
  std::vector<int> adapter_layers;
  int adapter_bottleneck = 0;
  std::vector<std::pair<std::string, std::uint64_t>> seed_lineage;
};

// Binary container: magic line, one-line JSON header, tensor table with raw
// little-endian float32 payloads. Writing the result of a load reproduces the
// original file byte for byte.
void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamStore& params);

struct LoadedCheckpoint {
  CheckpointHeader header;
  ParamStore params;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// 64-bit FNV-1a over a file's bytes, hex-encoded. Manifest fingerprints.
std::string fnv1a_file_hex(const std::string& path);
std::string fnv1a_bytes_hex(const void* data, std::size_t len);

}  // namespace lchd
