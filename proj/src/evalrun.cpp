#include "guiprobe/evalrun.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "guiprobe/attack.hpp"
#include "guiprobe/errors.hpp"
#include "guiprobe/grounder.hpp"
#include "guiprobe/noise.hpp"
#include "guiprobe/rng.hpp"
#include "guiprobe/synthgui.hpp"

namespace guiprobe {

using nlohmann::json;

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for hashing: " + path);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
  char buf[65536];
  while (in.read(buf, sizeof buf), in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::uint64_t sample_seed(std::uint64_t master_seed, const std::string& id,
                          const std::string& condition) {
  return hash_str(hash_str(master_seed, id), condition);
}

namespace {

struct Condition {
  enum Kind { kClean, kNoise, kUntargeted, kTargeted };
  Kind kind = kClean;
  std::string label;
  NoiseSpec spec;  // kNoise only
};

// mean success over the non-errored slice; false when none remain
bool sr_of(const std::vector<EvalRecord>& records, const std::string& condition,
           double* out) {
  long n = 0, hits = 0;
  for (const auto& r : records) {
    if (r.condition != condition || r.errored) continue;
    ++n;
    if (r.success) ++hits;
  }
  if (n == 0) return false;
  *out = static_cast<double>(hits) / n;
  return true;
}

std::vector<EvalRecord> slice(const std::vector<EvalRecord>& records,
                              const std::string& condition) {
  std::vector<EvalRecord> out;
  for (const auto& r : records)
    if (r.condition == condition) out.push_back(r);
  return out;
}

void extend_columns(ReportTable* table) {
  for (const auto& row : table->rows)
    for (const auto& [key, cell] : row.cells) {
      (void)cell;
      if (std::find(table->columns.begin(), table->columns.end(), key) ==
          table->columns.end())
        table->columns.push_back(key);
    }
}

}  // namespace

EvalSummary run_eval(const std::string& mode, const RunConfig& rc) {
  if (mode != "noise" && mode != "untargeted" && mode != "targeted")
    throw DataError("eval: unknown mode '" + mode + "'");
  if (rc.workers < 1) throw DataError("eval: workers must be >= 1");

  const Corpus corpus = load_corpus(rc.corpus_dir);
  const Grounder model = Grounder::load(rc.checkpoint);

  std::vector<std::string> ids = corpus.split(rc.split);
  if (rc.max_samples >= 0 &&
      static_cast<long long>(ids.size()) > rc.max_samples)
    ids.resize(static_cast<size_t>(rc.max_samples));
  if (ids.empty()) throw DataError("eval: split '" + rc.split + "' is empty");

  // Resolve the conditions for this mode; clean is always first.
  AttackConfig acfg = rc.attack;
  TargetSpec tgt = rc.target;
  std::vector<NoiseSpec> specs;
  std::vector<Condition> conds;
  conds.push_back({Condition::kClean, "clean", {}});
  if (mode == "noise") {
    specs = rc.noise_specs.empty() ? default_noise_grid() : rc.noise_specs;
    for (long long b : rc.pixel_budgets) {
      NoiseSpec s;
      s.kind = "resize_budget";
      s.params["budget"] = static_cast<double>(b);
      specs.push_back(s);
    }
    for (const NoiseSpec& s : specs) {
      s.validate();
      conds.push_back({Condition::kNoise, "noise:" + s.label(), s});
    }
  } else if (mode == "untargeted") {
    acfg.objective = "untargeted_encoder";
    conds.push_back({Condition::kUntargeted, "untargeted", {}});
  } else {
    acfg.objective = "targeted_lm";
    if (tgt.target_tokens.empty())
      tgt.target_tokens =
          make_target_tokens(tgt.region, model.config().output_mode);
    tgt.validate(model.config().output_mode);
    conds.push_back({Condition::kTargeted, "targeted", {}});
  }
  acfg.validate();
  {
    std::set<std::string> seen;
    for (const Condition& c : conds)
      if (!seen.insert(c.label).second)
        throw DataError("eval: duplicate condition '" + c.label + "'");
  }

  // Per-sample work; results land in a pre-sized grid so the final record
  // order is (sample, condition) regardless of scheduling.
  std::vector<std::vector<EvalRecord>> grid(ids.size());
  auto eval_one = [&](size_t si) {
    const CorpusRecord& rec = corpus.record(ids[si]);
    const Image base = quantize8(corpus.load_image(rec));
    std::vector<EvalRecord>& out = grid[si];
    out.reserve(conds.size());
    for (const Condition& c : conds) {
      EvalRecord r;
      r.id = rec.id;
      r.platform = rec.platform;
      r.kind = rec.kind;
      r.condition = c.label;
      r.gt = rec.target_bbox;
      const std::uint64_t seed = sample_seed(rc.master_seed, rec.id, c.label);
      if (c.kind == Condition::kClean) {
        r.pred = model.generate(base, rec.instruction_tokens);
      } else if (c.kind == Condition::kNoise) {
        const Image noisy = quantize8(apply_noise(base, c.spec, seed));
        r.pred = model.generate(noisy, rec.instruction_tokens);
      } else {
        const bool targeted = c.kind == Condition::kTargeted;
        try {
          const AttackTrace t = pgd(model, base, rec.instruction_tokens, acfg,
                                    targeted ? &tgt : nullptr, seed);
          r.pred = model.generate(t.adversarial, rec.instruction_tokens);
          r.extras["objective_initial"] = t.objective.front();
          r.extras["objective_final"] = t.objective.back();
          r.extras["objective_best"] = t.best_so_far.back();
          if (acfg.quantize_output) {
            r.extras["pre_quant_objective"] = t.pre_quant_objective;
            r.extras["post_quant_objective"] = t.post_quant_objective;
          }
        } catch (const NumericalError&) {
          // attack-level failure: recorded and counted, excluded from metrics
          r.errored = true;
          r.extras.clear();
        }
        if (targeted && !r.errored) {
          r.target_region = tgt.region;
          r.target_hit = region_hit_of(r.pred, tgt.region);
        }
      }
      if (!r.errored) r.success = success_of(r.pred, r.gt);
      out.push_back(std::move(r));
    }
  };

  const int workers =
      std::max(1, std::min<int>(rc.workers, static_cast<int>(ids.size())));
  if (workers == 1) {
    for (size_t i = 0; i < ids.size(); ++i) eval_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto work = [&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= ids.size()) return;
        try {
          eval_one(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          next.store(ids.size());  // drain the queue
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  EvalSummary summary;
  summary.records.reserve(ids.size() * conds.size());
  for (auto& v : grid)
    for (auto& r : v) summary.records.push_back(std::move(r));
  for (const auto& r : summary.records)
    if (r.errored) ++summary.errored;

  // ---- tables ----
  ReportTable sr_table;
  sr_table.title = "success rate";
  sr_table.metric = "SR %";
  sr_table.columns = standard_columns();
  for (const Condition& c : conds)
    sr_table.rows.push_back(
        breakdown_row(c.label, slice(summary.records, c.label), false));
  extend_columns(&sr_table);
  summary.tables.push_back(sr_table);

  double sr_clean = 0.0;
  const bool have_clean = sr_of(summary.records, "clean", &sr_clean);
  if (have_clean) summary.metrics["sr_clean"] = sr_clean;

  if (mode == "noise") {
    for (const Condition& c : conds) {
      if (c.kind != Condition::kNoise) continue;
      double v = 0.0;
      if (sr_of(summary.records, c.label, &v))
        summary.metrics["sr:" + c.label.substr(6)] = v;  // strip "noise:"
    }
  } else if (mode == "untargeted") {
    double sr_atk = 0.0;
    const bool have_atk = sr_of(summary.records, "untargeted", &sr_atk);
    if (have_atk) summary.metrics["sr_attacked"] = sr_atk;
    if (have_clean && have_atk) {
      const AsrValue asr = untargeted_asr(sr_clean, sr_atk);
      if (asr.defined) summary.metrics["untargeted_asr"] = asr.value;
      summary.metrics["sr_drop_absolute"] = std::max(0.0, sr_clean - sr_atk);
    }

    // Relative ASR per cell, derived from the SR rows above; cells missing
    // either side (or with zero clean SR, where the ratio is undefined)
    // stay empty.
    ReportTable asr_table;
    asr_table.title = "untargeted attack success rate";
    asr_table.metric = "ASR %";
    asr_table.columns = sr_table.columns;
    const TableRow& clean_row = sr_table.rows[0];
    const TableRow& atk_row = sr_table.rows[1];
    TableRow rel{"untargeted ASR (relative)", {}, {}};
    TableRow drop{"SR drop (absolute)", {}, {}};
    auto combine = [&](const TableCell& c, const TableCell& a, TableRow* rrel,
                       TableRow* rdrop, const std::string& key) {
      if (c.n == 0 || a.n == 0) return;
      TableCell d{a.n, std::max(0.0, c.value - a.value)};
      if (key.empty())
        rdrop->avg = d;
      else
        rdrop->cells[key] = d;
      if (c.value > 0.0) {
        TableCell v{a.n, std::max(0.0, (c.value - a.value) / c.value)};
        if (key.empty())
          rrel->avg = v;
        else
          rrel->cells[key] = v;
      }
    };
    for (const std::string& key : asr_table.columns) {
      const auto ci = clean_row.cells.find(key);
      const auto ai = atk_row.cells.find(key);
      if (ci == clean_row.cells.end() || ai == atk_row.cells.end()) continue;
      combine(ci->second, ai->second, &rel, &drop, key);
    }
    combine(clean_row.avg, atk_row.avg, &rel, &drop, "");
    asr_table.rows.push_back(rel);
    asr_table.rows.push_back(drop);
    summary.tables.push_back(asr_table);
  } else {
    double sr_atk = 0.0;
    if (sr_of(summary.records, "targeted", &sr_atk))
      summary.metrics["sr_under_attack"] = sr_atk;
    const std::vector<EvalRecord> trecs = slice(summary.records, "targeted");
    long usable = 0;
    for (const auto& r : trecs)
      if (!r.errored) ++usable;
    if (usable > 0) summary.metrics["targeted_asr"] = targeted_asr(trecs);

    ReportTable t_table;
    t_table.title = "targeted attack success rate";
    t_table.metric = "targeted ASR %";
    t_table.columns = sr_table.columns;
    t_table.rows.push_back(breakdown_row("targeted ASR", trecs, true));
    summary.tables.push_back(t_table);
  }
  if (summary.errored > 0)
    summary.metrics["errored"] = static_cast<double>(summary.errored);

  // ---- header ----
  // The embedded config is the resolved one actually used (default grids
  // and derived target tokens filled in). `workers` and `out_dir` are
  // dropped: they steer scheduling and destination, never results, and the
  // output bytes must not depend on them.
  RunConfig resolved = rc;
  resolved.attack = acfg;
  resolved.target = tgt;
  if (mode == "noise") {
    resolved.noise_specs = specs;
    resolved.pixel_budgets.clear();  // folded into noise_specs above
  }
  json rcj = resolved.to_json();
  rcj.erase("workers");
  rcj.erase("out_dir");

  json header;
  header["mode"] = mode;
  header["run_config"] = rcj;
  header["checkpoint_hash"] = file_hash_hex(rc.checkpoint);
  header["corpus_hash"] =
      file_hash_hex(rc.corpus_dir + "/manifest.json");
  header["run_label"] =
      std::filesystem::path(rc.out_dir).filename().string();
  header["n_samples"] = ids.size();
  {
    json labels = json::array();
    for (const Condition& c : conds) labels.push_back(c.label);
    header["conditions"] = labels;
  }
  if (mode != "noise") header["attack_init"] = resolved_init(acfg);
  header["errored"] = summary.errored;
  header["metrics"] = json(summary.metrics);
  summary.header = header;

  // ---- artifacts ----
  std::filesystem::create_directories(rc.out_dir);
  write_records((std::filesystem::path(rc.out_dir) / "records.jsonl").string(),
                header, summary.records);
  emit_report(rc.out_dir, "report", header, summary.tables,
              {"csv", "json", "markdown"});
  return summary;
}

EvalSummary merge_reports(const std::vector<std::string>& record_files,
                          const std::string& out_dir) {
  if (record_files.empty()) throw DataError("report: no record files given");

  struct Run {
    std::string label;
    RecordFile file;
  };
  std::vector<Run> runs;
  std::string corpus_hash;
  std::set<std::string> labels_seen;
  for (const std::string& path : record_files) {
    Run run;
    run.file = read_records(path);
    const json& h = run.file.header;
    if (!h.contains("corpus_hash"))
      throw DataError("report: " + path + " has no corpus hash");
    const std::string ch = h.at("corpus_hash").get<std::string>();
    if (corpus_hash.empty())
      corpus_hash = ch;
    else if (ch != corpus_hash)
      throw DataError("report: refusing to merge records from different "
                      "corpora (" + path + ")");
    run.label = h.value("run_label", std::string());
    if (run.label.empty())
      run.label = std::filesystem::path(path).parent_path().filename().string();
    if (run.label.empty()) run.label = "run";
    std::string unique = run.label;
    for (int k = 2; labels_seen.count(unique); ++k)
      unique = run.label + "#" + std::to_string(k);
    labels_seen.insert(unique);
    run.label = unique;
    runs.push_back(std::move(run));
  }

  EvalSummary summary;

  // One SR row per (run, condition), conditions in first-seen order per run.
  ReportTable sr_table;
  sr_table.title = "success rate (merged)";
  sr_table.metric = "SR %";
  sr_table.columns = standard_columns();
  ReportTable t_table;
  t_table.title = "targeted attack success rate (merged)";
  t_table.metric = "targeted ASR %";
  t_table.columns = standard_columns();

  for (const Run& run : runs) {
    std::vector<std::string> order;
    std::set<std::string> seen;
    for (const auto& r : run.file.records)
      if (seen.insert(r.condition).second) order.push_back(r.condition);
    for (const std::string& cond : order) {
      const std::vector<EvalRecord> recs = slice(run.file.records, cond);
      sr_table.rows.push_back(
          breakdown_row(run.label + " | " + cond, recs, false));
      if (cond == "targeted")
        t_table.rows.push_back(
            breakdown_row(run.label + " | targeted ASR", recs, true));
      double v = 0.0;
      if (sr_of(run.file.records, cond, &v))
        summary.metrics["sr:" + run.label + ":" + cond] = v;
    }
    for (const auto& r : run.file.records)
      if (r.errored) ++summary.errored;
    summary.records.insert(summary.records.end(), run.file.records.begin(),
                           run.file.records.end());
  }
  extend_columns(&sr_table);
  extend_columns(&t_table);
  summary.tables.push_back(sr_table);
  if (!t_table.rows.empty()) summary.tables.push_back(t_table);

  json header;
  header["mode"] = "report";
  header["corpus_hash"] = corpus_hash;
  {
    json sources = json::array();
    for (const Run& run : runs) {
      json s;
      s["label"] = run.label;
      s["header"] = run.file.header;
      sources.push_back(s);
    }
    header["sources"] = sources;
  }
  header["metrics"] = json(summary.metrics);
  summary.header = header;

  std::filesystem::create_directories(out_dir);
  emit_report(out_dir, "merged", header, summary.tables,
              {"csv", "json", "markdown"});
  return summary;
}

}  // namespace guiprobe
