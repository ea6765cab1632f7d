// Staged multi-task training: each step samples a task, draws the next
// batch from that task's stream and applies one Adam update. Every stage
// starts a fresh optimizer (and so a fresh warm-up); parameters carry over.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xst/data/dataset.hpp"
#include "xst/data/vocab.hpp"
#include "xst/infer/decode.hpp"
#include "xst/metrics/metrics.hpp"
#include "xst/model/model.hpp"
#include "xst/train/checkpoint.hpp"
#include "xst/train/optimizer.hpp"
#include "xst/train/recipe.hpp"

namespace xst {

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::uint64_t step) : std::runtime_error(what), step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

// Per-task training sets and dev sets. There is no separate external dev
// set: MT_EXT is evaluated on the MT dev pairs.
struct TrainingData {
  TaskDataset st, asr, mt, mt_ext;
  TaskDataset dev_st, dev_asr, dev_mt;

  const TaskDataset& train(Task task) const;
  const TaskDataset& dev(Task task) const;
};

TrainingData make_training_data(const Corpus& corpus, const Vocabulary& vocab);

struct LogRow {
  std::uint64_t step = 0;  // global, counted across stages
  std::string stage;
  Task task = Task::kST;
  double loss = 0.0;
  std::optional<DevMetric> dev_metric;  // set on evaluation steps
  double dev_value = 0.0;
};

// CSV with header step,stage,task,loss,dev_metric_name,dev_metric_value.
std::string format_log_csv(const std::vector<LogRow>& rows);
void write_log_csv(const std::vector<LogRow>& rows, const std::filesystem::path& path);

struct TrainOptions {
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;
  double label_smoothing = 0.1;
  AdamConfig adam;
  std::uint64_t eval_interval = 200;
  // Checkpoints of the final stage averaged into the reported model.
  std::size_t average_last = 10;
  // Caps the dev examples used for evaluation (0 = all).
  std::size_t dev_limit = 0;
  // When set, every evaluation checkpoint plus final/best/averaged models
  // and metrics.csv are written here.
  std::filesystem::path output_dir;
  // Called after every logged row (progress reporting).
  std::function<void(const LogRow&)> on_row;

  void validate() const;
};

struct StageSummary {
  std::string name;
  DevMetric dev_metric = DevMetric::kLoss;
  std::uint64_t steps = 0;
  bool early_stopped = false;
  std::optional<double> best_dev;
  std::uint64_t best_step = 0;  // global step of the best evaluation
  // Batches drawn per task; every batch is checked to come from its task's
  // training set.
  std::map<Task, std::uint64_t> batches;
};

struct RecipeResult {
  XstNetModel<float> final_model;
  XstNetModel<float> averaged_model;  // mean of the final stage's last checkpoints
  XstNetModel<float> best_model;      // best dev evaluation of the final stage
  std::vector<LogRow> log;
  std::vector<StageSummary> stages;
};

// Runs the recipe from a fresh model initialized with options.seed.
RecipeResult run_recipe(const TrainingRecipe& recipe, const TrainingData& data, const Vocabulary& vocab,
                        const ModelConfig& config, const TrainOptions& options);
// Runs the recipe starting from `initial`.
RecipeResult run_recipe(const TrainingRecipe& recipe, const TrainingData& data, const Vocabulary& vocab,
                        XstNetModel<float> initial, const TrainOptions& options);

// Corpus BLEU (ST, MT, MT_EXT) or WER (ASR) of decoded outputs against the
// dataset targets. `limit` caps the examples scored (0 = all).
ScoreReport evaluate(const XstNetModel<float>& model, const TaskDataset& data, const Vocabulary& vocab,
                     const DecodeOptions& options, std::size_t limit = 0);
// Token-level mean NLL (no smoothing) over the dataset.
double evaluate_loss(const XstNetModel<float>& model, const TaskDataset& data, std::size_t batch_size = 64,
                     std::size_t limit = 0);

// Stream seed for a given run seed and stream id.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace xst
