#include "lchd/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace lchd {

namespace {

constexpr const char* kMagic = "LCHD1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads assume a little-endian host");

using ordered_json = nlohmann::ordered_json;

ordered_json header_to_json(const CheckpointHeader& h) {
  ordered_json j;
  j["kind"] = h.kind;
  j["stage"] = to_string(h.stage);
  j["gelu"] = h.gelu_variant;
  ordered_json arch;
  arch["num_layers"] = h.config.num_layers;
  arch["d_model"] = h.config.d_model;
  arch["num_heads"] = h.config.num_heads;
  arch["d_ffn"] = h.config.d_ffn;
  arch["vocab_size"] = h.config.vocab_size;
  arch["ln_eps"] = static_cast<double>(h.config.ln_eps);
  j["arch"] = arch;
  ordered_json rope;
  rope["head_dim"] = h.config.rope.head_dim;
  rope["theta_base"] = static_cast<double>(h.config.rope.theta_base);
  rope["orig_max_len"] = h.config.rope.orig_max_len;
  rope["scale_s"] = static_cast<double>(h.config.rope.scale_s);
  rope["ramp_low"] = static_cast<double>(h.config.rope.ramp_low);
  rope["ramp_high"] = static_cast<double>(h.config.rope.ramp_high);
  j["rope"] = rope;
  j["ewc_lambda"] = h.ewc_lambda;
  j["adapter_layers"] = h.adapter_layers;
  j["adapter_bottleneck"] = h.adapter_bottleneck;
  ordered_json lineage = ordered_json::array();
  for (const auto& [stage, seed] : h.seed_lineage) {
    ordered_json e;
    e["stage"] = stage;
    e["seed"] = seed;
    lineage.push_back(e);
  }
  j["seed_lineage"] = lineage;
  return j;
}

CheckpointHeader header_from_json(const ordered_json& j) {
  CheckpointHeader h;
  h.kind = j.at("kind").get<std::string>();
  h.stage = stage_from_string(j.at("stage").get<std::string>());
  h.gelu_variant = j.at("gelu").get<std::string>();
  const auto& arch = j.at("arch");
  h.config.num_layers = arch.at("num_layers").get<int>();
  h.config.d_model = arch.at("d_model").get<int>();
  h.config.num_heads = arch.at("num_heads").get<int>();
  h.config.d_ffn = arch.at("d_ffn").get<int>();
  h.config.vocab_size = arch.at("vocab_size").get<int>();
  h.config.ln_eps = static_cast<Scalar>(arch.at("ln_eps").get<double>());
  const auto& rope = j.at("rope");
  h.config.rope.head_dim = rope.at("head_dim").get<int>();
  h.config.rope.theta_base = static_cast<Scalar>(rope.at("theta_base").get<double>());
  h.config.rope.orig_max_len = rope.at("orig_max_len").get<int>();
  h.config.rope.scale_s = static_cast<Scalar>(rope.at("scale_s").get<double>());
  h.config.rope.ramp_low = static_cast<Scalar>(rope.at("ramp_low").get<double>());
  h.config.rope.ramp_high = static_cast<Scalar>(rope.at("ramp_high").get<double>());
  h.ewc_lambda = j.at("ewc_lambda").get<double>();
  h.adapter_layers = j.at("adapter_layers").get<std::vector<int>>();
  h.adapter_bottleneck = j.at("adapter_bottleneck").get<int>();
  for (const auto& e : j.at("seed_lineage"))
    h.seed_lineage.emplace_back(e.at("stage").get<std::string>(),
                                e.at("seed").get<std::uint64_t>());
  return h;
}

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kPretrained: return "pretrained";
    case Stage::kExtended: return "extended";
    case Stage::kDetector: return "detector";
    case Stage::kAdapters: return "adapters";
  }
  throw std::invalid_argument("to_string: bad stage");
}

Stage stage_from_string(const std::string& s) {
  if (s == "pretrained") return Stage::kPretrained;
  if (s == "extended") return Stage::kExtended;
  if (s == "detector") return Stage::kDetector;
  if (s == "adapters") return Stage::kAdapters;
  throw std::invalid_argument("stage_from_string: unknown stage " + s);
}

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamStore& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << kMagic << "\n";
  out << header_to_json(header).dump() << "\n";
  out << "TENS " << params.size() << "\n";
  for (const auto& name : params.names()) {
    const Param& p = params.at(name);
    out << "T " << name << " " << p.rank();
    for (auto e : p.extents) out << " " << e;
    out << "\n";
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(Scalar)));
    out << "\n";
  }
  out << "END\n";
  if (!out) throw std::runtime_error("save_checkpoint: write failure on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  if (!std::getline(in, line)) throw std::runtime_error("load_checkpoint: missing header");

  LoadedCheckpoint lc;
  ordered_json j = ordered_json::parse(line, nullptr, true);
  lc.header = header_from_json(j);

  if (!std::getline(in, line) || line.rfind("TENS ", 0) != 0)
    throw std::runtime_error("load_checkpoint: missing tensor table");
  std::size_t count = std::stoull(line.substr(5));
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line) || line.rfind("T ", 0) != 0)
      throw std::runtime_error("load_checkpoint: truncated tensor table");
    std::istringstream ls(line.substr(2));
    std::string name;
    int rank;
    ls >> name >> rank;
    if (!ls || rank < 1 || rank > 2)
      throw std::runtime_error("load_checkpoint: bad tensor line for " + name);
    std::vector<std::int64_t> extents(rank);
    for (int r = 0; r < rank; ++r) ls >> extents[r];
    if (!ls) throw std::runtime_error("load_checkpoint: bad extents for " + name);
    Param& p = rank == 1 ? lc.params.add_vector(name, extents[0])
                         : lc.params.add(name, extents[0], extents[1]);
    std::streamsize bytes = static_cast<std::streamsize>(p.value.size() * sizeof(Scalar));
    in.read(reinterpret_cast<char*>(p.value.data()), bytes);
    if (in.gcount() != bytes)
      throw std::runtime_error("load_checkpoint: payload shorter than header claims for " + name);
    char nl;
    if (!in.get(nl) || nl != '\n')
      throw std::runtime_error("load_checkpoint: payload/shape disagreement at " + name);
  }
  if (!std::getline(in, line) || line != "END")
    throw std::runtime_error("load_checkpoint: missing end marker");
  return lc;
}

std::string fnv1a_bytes_hex(const void* data, std::size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fnv1a_file_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("fnv1a_file_hex: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace lchd
