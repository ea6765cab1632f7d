#include "xst/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

namespace xst {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

TaskDataset head(const TaskDataset& data, std::size_t limit) {
  if (limit == 0 || limit >= data.size()) return data;
  TaskDataset out{data.task, data.frame_dim, {}};
  out.examples.assign(data.examples.begin(), data.examples.begin() + static_cast<std::ptrdiff_t>(limit));
  return out;
}

XstNetModel<float> model_with(const XstNetModel<float>& like, const Checkpoint& ckpt) {
  auto m = like.clone();
  apply_checkpoint(ckpt, m);
  return m;
}

std::string checkpoint_name(std::uint64_t step) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "step-%08llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

// Mutable state threaded through the stages of one run.
struct RunState {
  const TrainingData& data;
  const Vocabulary& vocab;
  const TrainOptions& options;
  XstNetModel<float>& model;
  std::mt19937_64 task_rng;
  std::mt19937_64 dropout_rng;
  std::map<Task, std::unique_ptr<BatchStream>> streams;
  std::uint64_t global_step = 0;
  std::vector<LogRow> log;

  BatchStream& stream(Task task) {
    auto& s = streams[task];
    if (!s) {
      const auto& d = data.train(task);
      if (d.size() == 0) throw std::invalid_argument("no training data for task " + task_name(task));
      s = std::make_unique<BatchStream>(d, options.batch_size,
                                        derive_seed(options.seed, 200 + static_cast<std::uint64_t>(task)));
    }
    return *s;
  }
};

double dev_value(const RunState& st, const Stage& stage) {
  DecodeOptions greedy;
  greedy.greedy = true;
  switch (stage.dev_metric) {
    case DevMetric::kStBleu:
      return evaluate(st.model, st.data.dev_st, st.vocab, greedy, st.options.dev_limit).value;
    case DevMetric::kMtBleu:
      return evaluate(st.model, st.data.dev_mt, st.vocab, greedy, st.options.dev_limit).value;
    case DevMetric::kLoss: {
      double total = 0.0;
      for (Task t : stage.tasks) total += evaluate_loss(st.model, st.data.dev(t), 64, st.options.dev_limit);
      return total / static_cast<double>(stage.tasks.size());
    }
  }
  return 0.0;
}

struct StageOutcome {
  StageSummary summary;
  std::deque<Checkpoint> trailing;
  std::optional<Checkpoint> best;
};

StageOutcome run_stage(RunState& st, const Stage& stage) {
  stage.validate();
  for (Task t : stage.tasks) st.stream(t);  // fail early on a missing dataset
  StageOutcome out;
  out.summary.name = stage.name;
  out.summary.dev_metric = stage.dev_metric;
  const auto probs = stage.probabilities();
  const std::size_t window = std::max<std::size_t>(st.options.average_last, 1);
  Adam adam(st.options.adam, st.model.parameters());
  std::size_t evals_without_gain = 0;

  for (std::uint64_t step = 1; step <= stage.max_steps; ++step) {
    const Task task = sample_task(stage.tasks, probs, st.task_rng);
    auto& stream = st.stream(task);
    if (&stream.dataset() != &st.data.train(task) || stream.dataset().task != task) {
      throw std::logic_error("batch for task " + task_name(task) + " drawn from another dataset");
    }
    const Seq2SeqBatch batch = stream.next();
    if (batch.task != task) throw std::logic_error("batch task does not match sampled task");
    ++out.summary.batches[task];

    double loss_value = 0.0;
    {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      ForwardContext ctx;
      ctx.training = true;
      ctx.rng = &st.dropout_rng;
      auto loss = st.model.forward_loss(batch, st.options.label_smoothing, ctx);
      loss_value = loss.item();
      ++st.global_step;
      if (!std::isfinite(loss_value)) {
        throw TrainingDiverged("non-finite loss at step " + std::to_string(st.global_step) + " (stage " + stage.name +
                                   ", task " + task_name(task) + ")",
                               st.global_step);
      }
      backward(tape, loss);
    }
    adam.step();
    out.summary.steps = step;

    LogRow row{st.global_step, stage.name, task, loss_value, std::nullopt, 0.0};
    const bool eval_now = step % st.options.eval_interval == 0 || step == stage.max_steps;
    bool stop = false;
    if (eval_now) {
      row.dev_metric = stage.dev_metric;
      row.dev_value = dev_value(st, stage);
      auto ckpt = make_checkpoint(st.model, st.global_step, {{"stage", stage.name}});
      const bool better = !out.summary.best_dev || (higher_is_better(stage.dev_metric)
                                                        ? row.dev_value > *out.summary.best_dev
                                                        : row.dev_value < *out.summary.best_dev);
      if (better) {
        out.summary.best_dev = row.dev_value;
        out.summary.best_step = st.global_step;
        out.best = ckpt;
        evals_without_gain = 0;
      } else if (stage.patience > 0 && ++evals_without_gain >= stage.patience) {
        stop = step < stage.max_steps;
      }
      if (!st.options.output_dir.empty()) save_checkpoint(ckpt, st.options.output_dir / checkpoint_name(st.global_step));
      out.trailing.push_back(std::move(ckpt));
      if (out.trailing.size() > window) out.trailing.pop_front();
    }
    st.log.push_back(row);
    if (st.options.on_row) st.options.on_row(row);
    if (stop) {
      out.summary.early_stopped = true;
      break;
    }
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x7853u};
  std::mt19937_64 rng(seq);
  return rng();
}

const TaskDataset& TrainingData::train(Task task) const {
  switch (task) {
    case Task::kST: return st;
    case Task::kASR: return asr;
    case Task::kMT: return mt;
    case Task::kMTExt: return mt_ext;
  }
  throw std::invalid_argument("unknown task");
}

const TaskDataset& TrainingData::dev(Task task) const {
  switch (task) {
    case Task::kST: return dev_st;
    case Task::kASR: return dev_asr;
    case Task::kMT:
    case Task::kMTExt: return dev_mt;
  }
  throw std::invalid_argument("unknown task");
}

TrainingData make_training_data(const Corpus& corpus, const Vocabulary& vocab) {
  TrainingData d;
  d.st = project(corpus.train, Task::kST, vocab);
  d.asr = project(corpus.train, Task::kASR, vocab);
  d.mt = project(corpus.train, Task::kMT, vocab);
  d.mt_ext = project_pairs(corpus.ext, vocab);
  d.dev_st = project(corpus.dev, Task::kST, vocab);
  d.dev_asr = project(corpus.dev, Task::kASR, vocab);
  d.dev_mt = project(corpus.dev, Task::kMT, vocab);
  return d;
}

std::string format_log_csv(const std::vector<LogRow>& rows) {
  std::string out = "step,stage,task,loss,dev_metric_name,dev_metric_value\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + r.stage + "," + task_name(r.task) + "," + fixed(r.loss, 6) + ",";
    if (r.dev_metric) out += dev_metric_name(*r.dev_metric) + "," + fixed(r.dev_value, 4);
    else out += ",";
    out += "\n";
  }
  return out;
}

void write_log_csv(const std::vector<LogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_log_csv(rows);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void TrainOptions::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw std::invalid_argument("label_smoothing must be in [0, 1)");
  if (eval_interval == 0) throw std::invalid_argument("eval_interval must be at least 1");
  if (average_last == 0) throw std::invalid_argument("average_last must be at least 1");
  adam.validate();
}

RecipeResult run_recipe(const TrainingRecipe& recipe, const TrainingData& data, const Vocabulary& vocab,
                        const ModelConfig& config, const TrainOptions& options) {
  return run_recipe(recipe, data, vocab, XstNetModel<float>(config, options.seed), options);
}

RecipeResult run_recipe(const TrainingRecipe& recipe, const TrainingData& data, const Vocabulary& vocab,
                        XstNetModel<float> initial, const TrainOptions& options) {
  options.validate();
  recipe.validate();
  if (!options.output_dir.empty()) std::filesystem::create_directories(options.output_dir);
  XstNetModel<float> model = std::move(initial);
  RunState st{data, vocab, options, model, std::mt19937_64(derive_seed(options.seed, 101)),
              std::mt19937_64(derive_seed(options.seed, 102)), {}, 0, {}};

  std::vector<StageSummary> summaries;
  std::optional<StageOutcome> last;
  for (const auto& stage : recipe.stages) {
    last = run_stage(st, stage);
    summaries.push_back(last->summary);
  }

  std::optional<XstNetModel<float>> averaged, best;
  if (last && !last->trailing.empty()) {
    averaged = model_with(model, average_checkpoints({last->trailing.begin(), last->trailing.end()}));
    best = model_with(model, *last->best);
  }
  RecipeResult result{model.clone(), averaged ? std::move(*averaged) : model.clone(),
                      best ? std::move(*best) : model.clone(), std::move(st.log), std::move(summaries)};
  if (!options.output_dir.empty()) {
    const auto& dir = options.output_dir;
    const std::map<std::string, std::string> meta{{"recipe", recipe.name}, {"seed", std::to_string(options.seed)}};
    save_checkpoint(make_checkpoint(result.final_model, st.global_step, meta), dir / "final.ckpt");
    save_checkpoint(make_checkpoint(result.averaged_model, st.global_step, meta), dir / "averaged.ckpt");
    save_checkpoint(make_checkpoint(result.best_model, last ? last->summary.best_step : 0, meta), dir / "best.ckpt");
    write_log_csv(result.log, dir / "metrics.csv");
  }
  return result;
}

ScoreReport evaluate(const XstNetModel<float>& model, const TaskDataset& data, const Vocabulary& vocab,
                     const DecodeOptions& options, std::size_t limit) {
  const auto subset = head(data, limit);
  if (subset.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const auto hyps = decode_dataset(model, subset, options);
  std::vector<std::string> hyp_text, ref_text;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    hyp_text.push_back(hypothesis_text(hyps[i], vocab));
    ref_text.push_back(decode_text(subset.examples[i].target, vocab));
  }
  return data.task == Task::kASR ? wer(hyp_text, ref_text) : corpus_bleu(hyp_text, ref_text);
}

double evaluate_loss(const XstNetModel<float>& model, const TaskDataset& data, std::size_t batch_size,
                     std::size_t limit) {
  const auto subset = head(data, limit);
  if (subset.size() == 0) throw std::invalid_argument("evaluate_loss: empty dataset");
  NoGradScope<float> no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < subset.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(subset.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = collate(subset, idx);
    std::size_t n = 0;
    for (const auto& t : batch.targets) n += t.size();
    total += static_cast<double>(model.forward_loss(batch, 0.0, {}).item()) * static_cast<double>(n);
    tokens += n;
  }
  return total / static_cast<double>(tokens);
}

}  // namespace xst
