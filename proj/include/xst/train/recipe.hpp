// Training stages and the named progressive recipes built from them.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "xst/data/task.hpp"

namespace xst {

// Which dev number drives early stopping and best-checkpoint selection.
enum class DevMetric { kStBleu, kMtBleu, kLoss };

std::string dev_metric_name(DevMetric metric);
bool higher_is_better(DevMetric metric);
// ST BLEU when the stage trains ST, MT BLEU when it trains MT or MT_EXT,
// dev loss otherwise.
DevMetric default_dev_metric(const std::vector<Task>& tasks);

struct Stage {
  std::string name;
  std::vector<Task> tasks;
  std::vector<double> weights;  // empty means uniform
  std::uint64_t max_steps = 1;
  std::size_t patience = 5;     // evaluations without improvement; 0 disables
  DevMetric dev_metric = DevMetric::kLoss;

  // Throws std::invalid_argument on an empty or repeated task set, a weight
  // count mismatch, non-positive weights or max_steps of 0.
  void validate() const;
  // Normalized sampling weights (uniform when none are given).
  std::vector<double> probabilities() const;
  bool uses(Task task) const;
};

struct TrainingRecipe {
  std::string name;
  std::vector<Stage> stages;

  void validate() const;
};

// Step budgets for the presets: every pre-training stage runs
// `pretrain_steps`, the final fine-tuning stage `finetune_steps`.
struct StageBudget {
  std::uint64_t pretrain_steps = 1000;
  std::uint64_t finetune_steps = 4000;
  std::size_t patience = 5;
};

// EXP_I .. EXP_VI, XSTNET_BASE, W_TRANSF (case-insensitive).
TrainingRecipe preset_recipe(std::string_view name, const StageBudget& budget = {});
const std::vector<std::string>& preset_names();

// Categorical draw of one of `tasks`; uniform when `weights` is empty.
Task sample_task(const std::vector<Task>& tasks, const std::vector<double>& weights, std::mt19937_64& rng);

}  // namespace xst
