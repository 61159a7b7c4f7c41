#include "guiprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "guiprobe/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace guiprobe {

bool success_of(const GroundingPrediction& pred, const Box& gt) {
  if (!pred.valid) return false;
  return gt.contains(pred.px(), pred.py());
}

bool region_hit_of(const GroundingPrediction& pred, const Box& region) {
  if (!pred.valid) return false;
  return region.contains(pred.px(), pred.py());
}

double sr(const std::vector<EvalRecord>& records) {
  long n = 0, hits = 0;
  for (const auto& r : records) {
    if (r.errored) continue;
    ++n;
    if (r.success) ++hits;
  }
  if (n == 0) throw DataError("sr: no usable records");
  return static_cast<double>(hits) / n;
}

AsrValue untargeted_asr(double sr_clean, double sr_attacked) {
  if (sr_clean <= 0.0) return {};
  return {true, std::max(0.0, (sr_clean - sr_attacked) / sr_clean)};
}

double targeted_asr(const std::vector<EvalRecord>& records) {
  long n = 0, hits = 0;
  for (const auto& r : records) {
    if (r.errored) continue;
    if (r.condition != "targeted")
      throw DataError("targeted_asr: record with condition '" + r.condition + "'");
    if (!r.target_region)
      throw DataError("targeted_asr: record without target region");
    ++n;
    if (region_hit_of(r.pred, *r.target_region)) ++hits;
  }
  if (n == 0) throw DataError("targeted_asr: no usable records");
  return static_cast<double>(hits) / n;
}

std::vector<std::string> standard_columns() {
  return {"mobile/text",  "mobile/icon_widget", "desktop/text",
          "desktop/icon_widget", "web/text", "web/icon_widget"};
}

TableRow breakdown_row(const std::string& label,
                       const std::vector<EvalRecord>& records,
                       bool use_target_hit) {
  TableRow row;
  row.label = label;
  std::map<std::string, std::pair<long, long>> acc;  // key -> (n, hits)
  long n_all = 0, hit_all = 0;
  for (const auto& r : records) {
    if (r.errored) continue;
    const bool hit = use_target_hit ? r.target_hit.value_or(false) : r.success;
    auto& [n, h] = acc[r.platform + "/" + r.kind];
    ++n;
    ++n_all;
    if (hit) {
      ++h;
      ++hit_all;
    }
  }
  for (const auto& [key, nh] : acc)
    row.cells[key] = {static_cast<int>(nh.first),
                      static_cast<double>(nh.second) / nh.first};
  if (n_all > 0)
    row.avg = {static_cast<int>(n_all), static_cast<double>(hit_all) / n_all};
  return row;
}

ReportTable breakdown(const std::vector<EvalRecord>& records) {
  ReportTable t;
  t.title = "breakdown";
  t.metric = "SR %";
  t.columns = standard_columns();
  t.rows.push_back(breakdown_row("all", records, false));
  for (const auto& [key, cell] : t.rows[0].cells) {
    (void)cell;
    if (std::find(t.columns.begin(), t.columns.end(), key) == t.columns.end())
      t.columns.push_back(key);
  }
  return t;
}

// ---- serialization ----

namespace {

json box_to_json(const Box& b) {
  return json::array({b.x0, b.y0, b.x1, b.y1});
}

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("records: bad box array");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
             j[3].get<double>()};
}

json pred_to_json(const GroundingPrediction& p) {
  json j;
  j["raw_tokens"] = p.raw_tokens;
  j["valid"] = p.valid;
  if (p.valid) {
    if (p.is_box)
      j["box"] = json::array({p.bx0, p.by0, p.bx1, p.by1});
    else
      j["point"] = json::array({p.x, p.y});
  }
  return j;
}

GroundingPrediction pred_from_json(const json& j) {
  GroundingPrediction p;
  p.raw_tokens = j.at("raw_tokens").get<std::vector<int>>();
  p.valid = j.at("valid").get<bool>();
  if (p.valid) {
    if (j.contains("box")) {
      const auto& b = j.at("box");
      p.is_box = true;
      p.bx0 = b[0].get<int>();
      p.by0 = b[1].get<int>();
      p.bx1 = b[2].get<int>();
      p.by1 = b[3].get<int>();
    } else {
      const auto& q = j.at("point");
      p.x = q[0].get<int>();
      p.y = q[1].get<int>();
    }
  }
  return p;
}

}  // namespace

json EvalRecord::to_json() const {
  json j;
  j["type"] = "record";
  j["id"] = id;
  j["platform"] = platform;
  j["kind"] = kind;
  j["condition"] = condition;
  j["prediction"] = pred_to_json(pred);
  j["gt_bbox"] = box_to_json(gt);
  if (target_region) j["target_region"] = box_to_json(*target_region);
  j["success"] = success;
  if (target_hit) j["target_hit"] = *target_hit;
  j["errored"] = errored;
  if (!extras.empty()) j["extras"] = extras;
  return j;
}

EvalRecord EvalRecord::from_json(const json& j) {
  EvalRecord r;
  r.id = j.at("id").get<std::string>();
  r.platform = j.at("platform").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.condition = j.at("condition").get<std::string>();
  r.pred = pred_from_json(j.at("prediction"));
  r.gt = box_from_json(j.at("gt_bbox"));
  if (j.contains("target_region"))
    r.target_region = box_from_json(j.at("target_region"));
  r.success = j.at("success").get<bool>();
  if (j.contains("target_hit")) r.target_hit = j.at("target_hit").get<bool>();
  r.errored = j.at("errored").get<bool>();
  if (j.contains("extras"))
    r.extras = j.at("extras").get<std::map<std::string, double>>();
  return r;
}

json ReportTable::to_json() const {
  json rows_j = json::array();
  for (const auto& row : rows) {
    json cells;
    for (const auto& [key, cell] : row.cells)
      cells[key] = {{"n", cell.n}, {"value", cell.value}};
    rows_j.push_back({{"label", row.label},
                      {"cells", cells},
                      {"avg", {{"n", row.avg.n}, {"value", row.avg.value}}}});
  }
  return {{"title", title}, {"metric", metric}, {"columns", columns},
          {"rows", rows_j}};
}

namespace {

std::string pct(const TableCell& cell) {
  if (cell.n == 0) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * cell.value);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("report: cannot write '" + path.string() + "'");
  f << content;
  f.close();
  if (!f) throw DataError("report: write failure on '" + path.string() + "'");
}

std::string render_markdown(const json& header,
                            const std::vector<ReportTable>& tables) {
  std::string out = "# evaluation report\n\n## run configuration\n\n```json\n";
  out += header.dump(2);
  out += "\n```\n";
  for (const auto& t : tables) {
    out += "\n## " + t.title + " (" + t.metric + ")\n\n|  |";
    for (const auto& c : t.columns) out += " " + c + " |";
    out += " Avg |\n|---|";
    for (size_t i = 0; i < t.columns.size() + 1; ++i) out += "---|";
    out += "\n";
    for (const auto& row : t.rows) {
      out += "| " + row.label + " |";
      for (const auto& c : t.columns) {
        const auto it = row.cells.find(c);
        const std::string v = it == row.cells.end() ? "" : pct(it->second);
        out += " " + (v.empty() ? std::string("—") : v) + " |";
      }
      const std::string av = pct(row.avg);
      out += " " + (av.empty() ? std::string("—") : av) + " |\n";
    }
  }
  return out;
}

std::string render_csv(const json& header,
                       const std::vector<ReportTable>& tables) {
  std::string out = "# run configuration: " + header.dump() + "\n";
  for (const auto& t : tables) {
    out += "table," + t.title + "," + t.metric + "\n";
    out += "label";
    for (const auto& c : t.columns) out += "," + c;
    out += ",Avg\n";
    for (const auto& row : t.rows) {
      out += row.label;
      for (const auto& c : t.columns) {
        const auto it = row.cells.find(c);
        out += "," + (it == row.cells.end() ? std::string() : pct(it->second));
      }
      out += "," + pct(row.avg) + "\n";
    }
  }
  return out;
}

}  // namespace

void emit_report(const std::string& dir, const std::string& stem,
                 const json& header, const std::vector<ReportTable>& tables,
                 const std::vector<std::string>& formats) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("report: cannot create '" + dir + "': " + ec.message());
  for (const auto& fmt : formats) {
    if (fmt == "markdown") {
      write_file(fs::path(dir) / (stem + ".md"), render_markdown(header, tables));
    } else if (fmt == "csv") {
      write_file(fs::path(dir) / (stem + ".csv"), render_csv(header, tables));
    } else if (fmt == "json") {
      json j;
      j["header"] = header;
      json tj = json::array();
      for (const auto& t : tables) tj.push_back(t.to_json());
      j["tables"] = tj;
      write_file(fs::path(dir) / (stem + ".json"), j.dump(2) + "\n");
    } else {
      throw DataError("report: unknown format '" + fmt + "'");
    }
  }
}

void write_records(const std::string& path, const json& header,
                   const std::vector<EvalRecord>& records) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("records: cannot write '" + path + "'");
  json h = header;
  h["type"] = "header";
  f << h.dump() << "\n";
  for (const auto& r : records) f << r.to_json().dump() << "\n";
  f.close();
  if (!f) throw DataError("records: write failure on '" + path + "'");
}

RecordFile read_records(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("records: cannot read '" + path + "'");
  RecordFile rf;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("records: bad line: ") + e.what());
    }
    if (first) {
      first = false;
      if (j.value("type", "") != "header")
        throw DataError("records: first line must be the header");
      rf.header = j;
      continue;
    }
    rf.records.push_back(EvalRecord::from_json(j));
  }
  if (first) throw DataError("records: empty file '" + path + "'");
  return rf;
}

}  // namespace guiprobe
