#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "guiprobe/grounder.hpp"
#include "guiprobe/image.hpp"

namespace guiprobe {

// One evaluated (sample, condition) pair.
struct EvalRecord {
  std::string id;
  std::string platform;
  std::string kind;       // "text" | "icon_widget"
  std::string condition;  // "clean", "noise:<spec>", "untargeted", "targeted"
  GroundingPrediction pred;
  Box gt;
  std::optional<Box> target_region;  // targeted condition only
  bool success = false;
  std::optional<bool> target_hit;  // present iff condition == "targeted"
  bool errored = false;  // attack aborted (non-finite gradient); excluded from metrics
  std::map<std::string, double> extras;  // e.g. attack objective values

  nlohmann::json to_json() const;
  static EvalRecord from_json(const nlohmann::json& j);
};

// Landing rule: invalid decode fails; a point must lie in gt (boundary
// inclusive); a predicted box is judged by its center.
bool success_of(const GroundingPrediction& pred, const Box& gt);
bool region_hit_of(const GroundingPrediction& pred, const Box& region);

// Mean success over non-errored records; throws DataError when none remain.
double sr(const std::vector<EvalRecord>& records);

// Relative SR decrease, floored at 0; undefined when sr_clean = 0.
struct AsrValue {
  bool defined = false;
  double value = 0.0;
};
AsrValue untargeted_asr(double sr_clean, double sr_attacked);

// Fraction of targeted records landing in their target region.
double targeted_asr(const std::vector<EvalRecord>& records);

// ---- report tables ----

struct TableCell {
  int n = 0;
  double value = 0.0;  // mean metric, fraction (rendered as percent)
};

struct TableRow {
  std::string label;
  std::map<std::string, TableCell> cells;  // key "platform/kind"
  TableCell avg;                           // sample-weighted over all records
};

struct ReportTable {
  std::string title;
  std::string metric;  // e.g. "SR %", "targeted ASR %"
  std::vector<std::string> columns;  // "platform/kind" keys, fixed order
  std::vector<TableRow> rows;

  nlohmann::json to_json() const;
};

std::vector<std::string> standard_columns();

// Per-(platform, kind) mean of success (or target_hit) plus weighted Avg.
TableRow breakdown_row(const std::string& label,
                       const std::vector<EvalRecord>& records,
                       bool use_target_hit);
ReportTable breakdown(const std::vector<EvalRecord>& records);

// Writes <stem>.csv / <stem>.json / <stem>.md under dir. Deterministic bytes.
void emit_report(const std::string& dir, const std::string& stem,
                 const nlohmann::json& header,
                 const std::vector<ReportTable>& tables,
                 const std::vector<std::string>& formats);

// record file helpers (JSONL with a leading header line {"type":"header",...})
void write_records(const std::string& path, const nlohmann::json& header,
                   const std::vector<EvalRecord>& records);
struct RecordFile {
  nlohmann::json header;
  std::vector<EvalRecord> records;
};
RecordFile read_records(const std::string& path);

}  // namespace guiprobe
