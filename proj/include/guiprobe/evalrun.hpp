#pragma once

#include <map>
#include <string>
#include <vector>

#include "guiprobe/metrics.hpp"
#include "guiprobe/runconfig.hpp"

namespace guiprobe {

struct EvalSummary {
  nlohmann::json header;
  std::vector<EvalRecord> records;
  std::vector<ReportTable> tables;
  std::map<std::string, double> metrics;
  int errored = 0;
};

// Full evaluation campaign: every sample of the chosen split under every
// condition of the mode ("noise", "untargeted", "targeted"; clean always
// included). Writes records.jsonl and report.{csv,json,md} into out_dir.
// Output bytes are a pure function of the RunConfig, whatever the worker
// count.
EvalSummary run_eval(const std::string& mode, const RunConfig& rc);

// Merge record files from several runs into one comparison report under
// out_dir. Refuses to merge runs over different corpora.
EvalSummary merge_reports(const std::vector<std::string>& record_files,
                          const std::string& out_dir);

// FNV-1a over the file bytes, as 16 hex digits.
std::string file_hash_hex(const std::string& path);

std::uint64_t sample_seed(std::uint64_t master_seed, const std::string& id,
                          const std::string& condition);

}  // namespace guiprobe
