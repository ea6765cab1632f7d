#include "xst/train/recipe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xst {

std::string dev_metric_name(DevMetric metric) {
  switch (metric) {
    case DevMetric::kStBleu: return "dev_st_bleu";
    case DevMetric::kMtBleu: return "dev_mt_bleu";
    case DevMetric::kLoss: return "dev_loss";
  }
  return "?";
}

bool higher_is_better(DevMetric metric) { return metric != DevMetric::kLoss; }

DevMetric default_dev_metric(const std::vector<Task>& tasks) {
  auto has = [&](Task t) { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); };
  if (has(Task::kST)) return DevMetric::kStBleu;
  if (has(Task::kMT) || has(Task::kMTExt)) return DevMetric::kMtBleu;
  return DevMetric::kLoss;
}

void Stage::validate() const {
  if (tasks.empty()) throw std::invalid_argument("stage '" + name + "' has an empty task set");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < tasks.size(); ++j) {
      if (tasks[i] == tasks[j]) throw std::invalid_argument("stage '" + name + "' repeats task " + task_name(tasks[i]));
    }
  }
  if (!weights.empty()) {
    if (weights.size() != tasks.size()) throw std::invalid_argument("stage '" + name + "' needs one weight per task");
    for (double w : weights) {
      if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("stage '" + name + "' has a non-positive weight");
    }
  }
  if (max_steps == 0) throw std::invalid_argument("stage '" + name + "' needs max_steps >= 1");
}

std::vector<double> Stage::probabilities() const {
  if (weights.empty()) return std::vector<double>(tasks.size(), 1.0 / static_cast<double>(tasks.size()));
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<double> p;
  for (double w : weights) p.push_back(w / total);
  return p;
}

bool Stage::uses(Task task) const { return std::find(tasks.begin(), tasks.end(), task) != tasks.end(); }

void TrainingRecipe::validate() const {
  for (const auto& s : stages) s.validate();
}

namespace {

Stage make_stage(std::string name, std::vector<Task> tasks, std::uint64_t steps, std::size_t patience) {
  Stage s;
  s.name = std::move(name);
  s.dev_metric = default_dev_metric(tasks);
  s.tasks = std::move(tasks);
  s.max_steps = steps;
  s.patience = patience;
  return s;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"EXP_I", "EXP_II", "EXP_III", "EXP_IV",
                                                 "EXP_V", "EXP_VI", "XSTNET_BASE", "W_TRANSF"};
  return names;
}

TrainingRecipe preset_recipe(std::string_view name, const StageBudget& b) {
  std::string key(name);
  for (char& c : key) c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  // Accept arabic numbering too: exp1, exp_4.
  static const char* const kRoman[] = {"I", "II", "III", "IV", "V", "VI"};
  const auto digits = key.rfind("EXP_", 0) == 0 ? key.substr(4) : key.rfind("EXP", 0) == 0 ? key.substr(3) : "";
  if (digits.size() == 1 && digits[0] >= '1' && digits[0] <= '6') key = std::string("EXP_") + kRoman[digits[0] - '1'];
  const Task st = Task::kST, asr = Task::kASR, mt = Task::kMT, ext = Task::kMTExt;
  const auto pre = b.pretrain_steps, fine = b.finetune_steps;
  const auto pat = b.patience;
  TrainingRecipe r;
  r.name = key;
  if (key == "EXP_I") {
    r.stages = {make_stage("pretrain", {ext}, pre, pat), make_stage("finetune", {st, asr, mt, ext}, fine, pat)};
  } else if (key == "EXP_II") {
    r.stages = {make_stage("pretrain", {ext}, pre, pat), make_stage("finetune", {st, asr, mt}, fine, pat)};
  } else if (key == "EXP_III") {
    r.stages = {make_stage("finetune", {st, asr, mt, ext}, fine, pat)};
  } else if (key == "EXP_IV") {
    r.stages = {make_stage("pretrain1", {ext}, pre, pat), make_stage("pretrain2", {asr, mt, ext}, pre, pat),
                make_stage("finetune", {st}, fine, pat)};
  } else if (key == "EXP_V") {
    r.stages = {make_stage("pretrain1", {ext}, pre, pat), make_stage("pretrain2", {asr, mt}, pre, pat),
                make_stage("finetune", {st}, fine, pat)};
  } else if (key == "EXP_VI") {
    r.stages = {make_stage("pretrain1", {ext, mt}, pre, pat), make_stage("pretrain2", {asr}, pre, pat),
                make_stage("finetune", {st}, fine, pat)};
  } else if (key == "XSTNET_BASE") {
    r.stages = {make_stage("finetune", {st, asr, mt}, fine, pat)};
  } else if (key == "W_TRANSF") {
    r.stages = {make_stage("finetune", {st}, fine, pat)};
  } else {
    throw std::invalid_argument("unknown recipe '" + std::string(name) + "'");
  }
  r.validate();
  return r;
}

Task sample_task(const std::vector<Task>& tasks, const std::vector<double>& weights, std::mt19937_64& rng) {
  if (tasks.empty()) throw std::invalid_argument("sample_task: empty task set");
  if (!weights.empty() && weights.size() != tasks.size()) {
    throw std::invalid_argument("sample_task: one weight per task required");
  }
  if (tasks.size() == 1) return tasks[0];
  // Draw u in [0, 1) from the raw engine so results do not depend on the
  // standard library's distribution implementations.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double total = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("sample_task: weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_task: weights sum to zero");
  double acc = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    acc += w / total;
    if (u < acc && w > 0.0) return tasks[i];
  }
  for (std::size_t i = tasks.size(); i-- > 0;) {
    if (weights.empty() || weights[i] > 0.0) return tasks[i];
  }
  return tasks.back();
}

}  // namespace xst
