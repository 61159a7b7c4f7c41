// Command-line front end: corpus generation, training, evaluation
// campaigns and report merging, all driven by a config file plus flag
// overrides. Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "guiprobe/errors.hpp"
#include "guiprobe/evalrun.hpp"
#include "guiprobe/grounder.hpp"
#include "guiprobe/runconfig.hpp"
#include "guiprobe/synthgui.hpp"
#include "guiprobe/trainer.hpp"

namespace {

using namespace guiprobe;
namespace fs = std::filesystem;

void cmd_corpus(int n, std::uint64_t seed,
                const std::vector<std::string>& preset_names,
                const std::string& out) {
  CorpusParams params;
  params.n = n;
  params.master_seed = seed;
  for (const std::string& name : preset_names)
    params.presets.push_back(PlatformPreset::by_name(name));
  make_corpus(params, out);
  const Corpus corpus = load_corpus(out);
  std::printf("corpus: %d samples under %s\n", n, out.c_str());
  std::printf("  presets:");
  for (const auto& p : corpus.presets) std::printf(" %s", p.name.c_str());
  std::printf("\n  splits: train=%zu val=%zu test=%zu\n",
              corpus.split_train.size(), corpus.split_val.size(),
              corpus.split_test.size());
}

void cmd_train(const std::string& corpus_dir, const std::string& out,
               std::uint64_t seed, int steps, double lr,
               const std::string& output_mode, int val_max) {
  const Corpus corpus = load_corpus(corpus_dir);
  ModelConfig mc;
  mc.output_mode = output_mode;
  mc.validate();
  TrainConfig tc;
  tc.seed = seed;
  tc.steps = steps;
  tc.lr = lr;
  tc.val_max_samples = val_max;

  Grounder model = Grounder::init(mc, Vocabulary::standard(), seed);
  std::printf("train: %ld parameters, %d steps on %zu samples\n",
              model.param_count(), tc.steps, corpus.split_train.size());
  const TrainResult result = train_grounder(model, corpus, tc);

  fs::create_directories(out);
  const std::string ckpt = (fs::path(out) / "checkpoint.bin").string();
  model.save(ckpt);
  write_loss_curve((fs::path(out) / "loss_curve.csv").string(),
                   result.loss_curve);
  std::printf("train: final loss %.4f, val SR %.4f\n", result.final_loss,
              result.val_sr);
  std::printf("train: checkpoint at %s\n", ckpt.c_str());
}

// flag overrides for `eval`; presence tracked via CLI11 counts
struct EvalFlags {
  std::string config, corpus, checkpoint, split, out;
  std::uint64_t seed = 0;
  int workers = 1, max_samples = -1, steps = 0;
  double epsilon = 0.0, alpha = 0.0;
  std::string init;
  bool no_quantize = false;
  std::vector<long long> budgets;
};

void cmd_eval(const std::string& mode, const CLI::App* sub, EvalFlags& f) {
  RunConfig rc;
  if (!f.config.empty()) rc = RunConfig::from_file(f.config);
  if (sub->count("--corpus")) rc.corpus_dir = f.corpus;
  if (sub->count("--checkpoint")) rc.checkpoint = f.checkpoint;
  if (sub->count("--split")) rc.split = f.split;
  if (sub->count("--out")) rc.out_dir = f.out;
  if (sub->count("--seed")) rc.master_seed = f.seed;
  if (sub->count("--workers")) rc.workers = f.workers;
  if (sub->count("--max-samples")) rc.max_samples = f.max_samples;
  if (sub->count("--epsilon")) rc.attack.epsilon = f.epsilon;
  if (sub->count("--alpha")) rc.attack.alpha = f.alpha;
  if (sub->count("--steps")) rc.attack.steps = f.steps;
  if (sub->count("--init")) rc.attack.init = f.init;
  if (sub->count("--no-quantize")) rc.attack.quantize_output = false;
  if (sub->count("--budgets")) rc.pixel_budgets = f.budgets;
  if (rc.corpus_dir.empty())
    throw DataError("eval: no corpus (set --corpus or the config file)");
  if (rc.checkpoint.empty())
    throw DataError("eval: no checkpoint (set --checkpoint or the config file)");

  const EvalSummary summary = run_eval(mode, rc);
  std::printf("eval %s: %zu records, %d errored\n", mode.c_str(),
              summary.records.size(), summary.errored);
  for (const auto& [key, value] : summary.metrics)
    std::printf("  %s = %.4f\n", key.c_str(), value);
  std::printf("eval: artifacts under %s\n", rc.out_dir.c_str());
}

void cmd_report(const std::vector<std::string>& record_files,
                const std::string& out) {
  const EvalSummary summary = merge_reports(record_files, out);
  std::printf("report: merged %zu files, %zu records\n", record_files.size(),
              summary.records.size());
  for (const auto& table : summary.tables)
    std::printf("  table: %s (%zu rows)\n", table.title.c_str(),
                table.rows.size());
  std::printf("report: artifacts under %s\n", out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robustness evaluation for GUI grounding models"};
  app.require_subcommand(1);

  // corpus
  auto* corpus_cmd =
      app.add_subcommand("corpus", "generate a synthetic screen corpus");
  int corpus_n = 1000;
  std::uint64_t corpus_seed = 7;
  std::vector<std::string> corpus_presets = {"mobile", "desktop", "web"};
  std::string corpus_out;
  corpus_cmd->add_option("--n", corpus_n, "number of screens");
  corpus_cmd->add_option("--seed", corpus_seed, "master seed");
  corpus_cmd->add_option("--presets", corpus_presets,
                         "platform presets (space separated)");
  corpus_cmd->add_option("--out", corpus_out, "output directory")->required();
  corpus_cmd->callback(
      [&] { cmd_corpus(corpus_n, corpus_seed, corpus_presets, corpus_out); });

  // train
  auto* train_cmd =
      app.add_subcommand("train", "train a grounding model on a corpus");
  std::string train_corpus, train_out, train_mode = "point";
  std::uint64_t train_seed = 7;
  TrainConfig train_defaults;
  int train_steps = train_defaults.steps;
  int train_val_max = train_defaults.val_max_samples;
  double train_lr = train_defaults.lr;
  train_cmd->add_option("--corpus", train_corpus, "corpus directory")
      ->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--seed", train_seed, "training seed");
  train_cmd->add_option("--steps", train_steps, "sample steps");
  train_cmd->add_option("--lr", train_lr, "peak learning rate");
  train_cmd->add_option("--output-mode", train_mode, "point | bbox");
  train_cmd->add_option("--val-max", train_val_max,
                        "validation sample cap (-1 = all)");
  train_cmd->callback([&] {
    cmd_train(train_corpus, train_out, train_seed, train_steps, train_lr,
              train_mode, train_val_max);
  });

  // eval
  auto* eval_cmd = app.add_subcommand(
      "eval", "run an evaluation campaign (noise | untargeted | targeted)");
  std::string eval_mode;
  EvalFlags ef;
  eval_cmd->add_option("mode", eval_mode, "noise | untargeted | targeted")
      ->required();
  eval_cmd->add_option("--config", ef.config, "run configuration file");
  eval_cmd->add_option("--corpus", ef.corpus, "corpus directory");
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "model checkpoint");
  eval_cmd->add_option("--split", ef.split, "corpus split (train|val|test|all)");
  eval_cmd->add_option("--out", ef.out, "output directory");
  eval_cmd->add_option("--seed", ef.seed, "master seed");
  eval_cmd->add_option("--workers", ef.workers, "worker thread count");
  eval_cmd->add_option("--max-samples", ef.max_samples,
                       "cap on evaluated samples (-1 = whole split)");
  eval_cmd->add_option("--epsilon", ef.epsilon, "attack budget (l-inf)");
  eval_cmd->add_option("--alpha", ef.alpha, "attack step size");
  eval_cmd->add_option("--steps", ef.steps, "attack step count");
  eval_cmd->add_option("--init", ef.init, "attack init (auto|zero|random_uniform)");
  eval_cmd->add_flag("--no-quantize", ef.no_quantize,
                     "skip 8-bit quantization of adversarial images");
  eval_cmd->add_option("--budgets", ef.budgets,
                       "pixel budgets for resolution sweeps (noise mode)");
  eval_cmd->callback([&] { cmd_eval(eval_mode, eval_cmd, ef); });

  // report
  auto* report_cmd =
      app.add_subcommand("report", "merge record files into one report");
  std::vector<std::string> report_files;
  std::string report_out;
  report_cmd->add_option("records", report_files, "records.jsonl files")
      ->required();
  report_cmd->add_option("--out", report_out, "output directory")->required();
  report_cmd->callback([&] { cmd_report(report_files, report_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  }
  return 0;
}
