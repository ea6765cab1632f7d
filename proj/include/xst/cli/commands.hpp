// Subcommands of the xstnet tool. run_cli is the whole command line
// (without the program name) so it can be driven from tests.

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "xst/cli/run_config.hpp"
#include "xst/data/corpus.hpp"
#include "xst/data/vocab.hpp"
#include "xst/train/trainer.hpp"

namespace xst {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ExperimentData {
  Corpus corpus;
  Vocabulary vocab;
  TrainingData data;
};

// Loads config.data when set, otherwise generates the corpus from
// config.corpus. The vocabulary is read from <data>/vocab.tsv if present.
ExperimentData prepare_data(const RunConfig& config);
ExperimentData prepare_data(Corpus corpus);

struct RunScores {
  double test_st_bleu = 0.0;
  double dev_mt_bleu = 0.0;
  double dev_wer = 0.0;
};

RunScores score_model(const XstNetModel<float>& model, const ExperimentData& data, const DecodeOptions& decode);

struct AblationRow {
  std::string recipe;
  std::string seed;  // a number, or "mean"
  RunScores scores;
  std::vector<LogRow> log;  // empty for mean rows
};

// One row per (recipe, seed) followed by a mean row per recipe. When
// `out_dir` is set, ablation.csv is rewritten after every run and each
// run's metrics log is kept under logs/.
std::vector<AblationRow> run_ablation(const RunConfig& config, const ExperimentData& data,
                                      const std::filesystem::path& out_dir, std::ostream& progress);
std::string format_ablation_csv(const std::vector<AblationRow>& rows);

struct SweepRow {
  std::size_t ext_size = 0;
  double mt_bleu = 0.0;  // dev MT BLEU after pre-training
  double st_bleu = 0.0;  // test ST BLEU of the final averaged model
};

// EXP_I once per external-data size; the triples and vocabulary are shared
// and each size uses a prefix of the external pairs. Size 0 skips
// pre-training and fine-tunes on ST, ASR and MT.
std::vector<SweepRow> run_sweep(const RunConfig& config, std::ostream& progress);
std::string format_sweep_csv(const std::vector<SweepRow>& rows);

// Dev metric at every evaluation step of either log, joined on step:
// step,<a>_metric,<a>_value,<b>_metric,<b>_value (blank where absent).
std::string convergence_report(const std::string& name_a, const std::vector<LogRow>& a, const std::string& name_b,
                               const std::vector<LogRow>& b);

}  // namespace xst
