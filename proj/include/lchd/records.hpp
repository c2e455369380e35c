#pragma once

#include <string>
#include <vector>

#include "lchd/continual.hpp"
#include "lchd/detector.hpp"
#include "lchd/evalbench.hpp"

namespace lchd {

// Newline-delimited record formats. Text fields hold ASCII; token sequences
// that cover the full byte range are stored as integer arrays.

void save_samples_jsonl(const std::string& path, const std::vector<VerificationSample>& samples);
std::vector<VerificationSample> load_samples_jsonl(const std::string& path);

void save_benchmark_jsonl(const std::string& path, const GeneratedBenchmark& bench);

void save_probes_jsonl(const std::string& path, const std::vector<RetrievalProbe>& probes);
std::vector<RetrievalProbe> load_probes_jsonl(const std::string& path);

void save_corpus_jsonl(const std::string& path, const std::vector<std::vector<int>>& docs);
// .jsonl files carry {"tokens": [...]} records; .txt files are byte-encoded
// line by line.
std::vector<std::vector<int>> load_corpus(const std::string& path);

void save_training_log_jsonl(const std::string& path, const TrainingLog& log);

void save_latency_jsonl(const std::string& path, const std::vector<LatencyRecord>& grid);
std::string latency_table(const std::vector<LatencyRecord>& grid);

}  // namespace lchd
