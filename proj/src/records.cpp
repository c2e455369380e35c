#include "lchd/records.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "lchd/tokenizer.hpp"

namespace lchd {

namespace {

using ordered_json = nlohmann::ordered_json;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return in;
}

std::string tokens_to_text(const std::vector<int>& tokens, const std::string& what) {
  std::string s;
  s.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t > 127)
      throw std::invalid_argument(what + " holds non-ASCII tokens; text form unavailable");
    s += static_cast<char>(t);
  }
  return s;
}

ordered_json sample_to_json(const VerificationSample& s) {
  ordered_json j;
  j["context"] = tokens_to_text(s.context_tokens, "context");
  j["query"] = tokens_to_text(s.query_tokens, "query");
  j["response"] = tokens_to_text(s.response_tokens, "response");
  j["labels"] = s.gold_labels;
  return j;
}

VerificationSample sample_from_json(const ordered_json& j) {
  VerificationSample s;
  s.context_tokens = tok::encode(j.at("context").get<std::string>());
  s.query_tokens = tok::encode(j.at("query").get<std::string>());
  s.response_tokens = tok::encode(j.at("response").get<std::string>());
  s.gold_labels = j.at("labels").get<std::vector<int>>();
  if (s.gold_labels.size() != s.response_tokens.size())
    throw std::runtime_error("sample record: label count does not match response length");
  return s;
}

}  // namespace

void save_samples_jsonl(const std::string& path, const std::vector<VerificationSample>& samples) {
  auto out = open_out(path);
  for (const auto& s : samples) out << sample_to_json(s).dump() << "\n";
}

std::vector<VerificationSample> load_samples_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<VerificationSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(sample_from_json(ordered_json::parse(line)));
  }
  if (out.empty()) throw std::runtime_error("no sample records in " + path);
  return out;
}

void save_benchmark_jsonl(const std::string& path, const GeneratedBenchmark& bench) {
  auto out = open_out(path);
  for (const auto& d : bench.docs) {
    ordered_json j = sample_to_json(d.sample);
    j["flagged"] = d.flagged;
    j["perturbed"] = d.perturbed;
    j["evidence_depths"] = d.evidence_depths;
    out << j.dump() << "\n";
  }
}

void save_probes_jsonl(const std::string& path, const std::vector<RetrievalProbe>& probes) {
  auto out = open_out(path);
  for (const auto& p : probes) {
    ordered_json j;
    j["tokens"] = p.sequence;
    j["target_position"] = p.target_position;
    j["evidence_position"] = p.evidence_position;
    j["distance"] = p.distance;
    out << j.dump() << "\n";
  }
}

std::vector<RetrievalProbe> load_probes_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<RetrievalProbe> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line);
    RetrievalProbe p;
    p.sequence = j.at("tokens").get<std::vector<int>>();
    p.target_position = j.at("target_position").get<int>();
    p.evidence_position = j.at("evidence_position").get<int>();
    p.distance = j.at("distance").get<int>();
    if (p.target_position - p.evidence_position != p.distance)
      throw std::runtime_error("probe record: distance does not match positions");
    out.push_back(std::move(p));
  }
  if (out.empty()) throw std::runtime_error("no probe records in " + path);
  return out;
}

void save_corpus_jsonl(const std::string& path, const std::vector<std::vector<int>>& docs) {
  auto out = open_out(path);
  for (const auto& doc : docs) {
    ordered_json j;
    j["tokens"] = doc;
    out << j.dump() << "\n";
  }
}

std::vector<std::vector<int>> load_corpus(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::vector<int>> docs;
  std::string line;
  bool jsonl = path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (jsonl) {
      ordered_json j = ordered_json::parse(line);
      docs.push_back(j.at("tokens").get<std::vector<int>>());
    } else {
      docs.push_back(tok::encode(line));
    }
  }
  if (docs.empty()) throw std::runtime_error("no documents in " + path);
  return docs;
}

void save_training_log_jsonl(const std::string& path, const TrainingLog& log) {
  auto out = open_out(path);
  for (const auto& s : log.steps) {
    ordered_json j;
    j["step"] = s.step;
    j["mlm_loss"] = s.mlm_loss;
    j["ewc_penalty"] = s.ewc_penalty;
    j["lr"] = s.lr;
    out << j.dump() << "\n";
  }
}

void save_latency_jsonl(const std::string& path, const std::vector<LatencyRecord>& grid) {
  auto out = open_out(path);
  for (const auto& r : grid) {
    ordered_json j;
    j["seq_len"] = r.seq_len;
    j["batch_size"] = r.batch_size;
    j["exit_layer"] = r.exit_layer;
    j["ms_per_sample"] = r.ms_per_sample;
    j["samples_per_second"] = r.samples_per_second;
    out << j.dump() << "\n";
  }
}

std::string latency_table(const std::vector<LatencyRecord>& grid) {
  std::ostringstream os;
  os << "seq_len  batch  exit   ms/sample   samples/s\n";
  for (const auto& r : grid) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%7d  %5d  %4s  %10.3f  %10.2f\n", r.seq_len, r.batch_size,
                  r.exit_layer == 0 ? "full" : std::to_string(r.exit_layer).c_str(),
                  r.ms_per_sample, r.samples_per_second);
    os << buf;
  }
  return os.str();
}

}  // namespace lchd
