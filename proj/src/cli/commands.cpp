#include "xst/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "xst/data/manifest.hpp"
#include "xst/infer/decode.hpp"
#include "xst/metrics/metrics.hpp"
#include "xst/train/checkpoint.hpp"

namespace xst {

namespace fs = std::filesystem;

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// Options shared by the commands that read a run configuration.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add_to(CLI::App& app, bool with_seed = true) {
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--set", sets, "override one key (KEY=VALUE), repeatable");
    if (with_seed) app.add_option("--seed", seed, "random seed");
    app.add_option("--out", out, "output directory");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
      apply_config_text(c, s);
    }
    if (!out.empty()) c.out = out;
    return c;
  }
};

fs::path require_out(const RunConfig& c) {
  if (c.out.empty()) throw ConfigError("an output directory is required (--out or 'out' key)");
  fs::create_directories(c.out);
  return c.out;
}

TrainingRecipe capped(TrainingRecipe recipe, std::optional<std::uint64_t> max_steps) {
  if (!max_steps) return recipe;
  if (*max_steps == 0) {
    recipe.stages.clear();
    return recipe;
  }
  for (auto& s : recipe.stages) s.max_steps = std::min(s.max_steps, *max_steps);
  return recipe;
}

std::function<void(const LogRow&)> eval_printer(std::ostream& progress, const std::string& prefix) {
  return [&progress, prefix](const LogRow& row) {
    if (!row.dev_metric) return;
    progress << prefix << "step " << row.step << " [" << row.stage << "] loss " << fixed4(row.loss) << " "
             << dev_metric_name(*row.dev_metric) << " " << fixed4(row.dev_value) << "\n";
    progress.flush();
  };
}

std::string references_for(const TripleExample& t, Task task) {
  return join_words(task == Task::kASR ? t.transcript : t.translation);
}

int cmd_gen_data(const ConfigFlags& flags, std::ostream& out) {
  RunConfig c = flags.resolve();
  if (flags.seed) c.corpus.seed = *flags.seed;
  if (c.corpus.n_triples == 0) throw std::runtime_error("empty corpus: n_triples must be at least 1");
  const auto dir = require_out(c);
  const auto corpus = generate_corpus(c.corpus);
  save_corpus(dir, corpus);
  build_vocab(corpus).save(dir / "vocab.tsv");
  write_text(dir / "config.resolved", c.render());
  out << "train " << corpus.train.size() << "\ndev " << corpus.dev.size() << "\ntest " << corpus.test.size()
      << "\next " << corpus.ext.size() << "\n";
  return kExitOk;
}

struct TrainFlags {
  std::string recipe;
  std::vector<std::string> stages;
  std::string data;
  std::optional<std::uint64_t> max_steps;
};

int cmd_train(const ConfigFlags& flags, const TrainFlags& tf, std::ostream& out, std::ostream& err) {
  RunConfig c = flags.resolve();
  if (flags.seed) c.train.seed = *flags.seed;
  if (!tf.recipe.empty()) c.set("train.recipe", tf.recipe);
  if (!tf.stages.empty()) {
    std::string joined;
    for (const auto& s : tf.stages) joined += s + ";";
    c.set("train.stages", joined);
  }
  if (!tf.data.empty()) c.data = tf.data;
  const auto dir = require_out(c);
  write_text(dir / "config.resolved", c.render());
  const auto ex = prepare_data(c);
  ex.vocab.save(dir / "vocab.tsv");
  const auto recipe = capped(c.training_recipe(), tf.max_steps);
  TrainOptions opts = c.train;
  opts.output_dir = dir;
  opts.on_row = eval_printer(err, "");
  const auto model_config = c.model_for(ex.vocab, ex.corpus.train.front().frame_dim);
  auto result = run_recipe(recipe, ex.data, ex.vocab, model_config, opts);
  for (const auto& s : result.stages) {
    out << "stage " << s.name << ": " << s.steps << " steps" << (s.early_stopped ? " (early stop)" : "");
    if (s.best_dev) out << ", best " << dev_metric_name(s.dev_metric) << " " << fixed4(*s.best_dev) << " at step " << s.best_step;
    out << "\n";
  }
  const auto scores = score_model(result.averaged_model, ex, c.decode);
  write_text(dir / "scores.csv", "test_st_bleu,dev_mt_bleu,dev_wer\n" + fixed4(scores.test_st_bleu) + "," +
                                     fixed4(scores.dev_mt_bleu) + "," + fixed4(scores.dev_wer) + "\n");
  out << "test ST BLEU " << fixed4(scores.test_st_bleu) << ", dev MT BLEU " << fixed4(scores.dev_mt_bleu)
      << ", dev WER " << fixed4(scores.dev_wer) << "\n";
  return kExitOk;
}

struct DecodeFlags {
  std::string checkpoint, manifest, task, vocab, out;
  std::optional<std::size_t> beam, max_len;
  bool greedy = false;
  double length_penalty = 1.0;
};

int cmd_decode(const DecodeFlags& f, std::ostream& out) {
  const auto ckpt = load_checkpoint(f.checkpoint);
  const auto model = model_from_checkpoint(ckpt);
  const fs::path vocab_path = f.vocab.empty() ? fs::path(f.checkpoint).parent_path() / "vocab.tsv" : fs::path(f.vocab);
  const auto vocab = Vocabulary::load(vocab_path);
  DecodeOptions opts;
  if (f.beam) opts.beam_size = *f.beam;
  opts.greedy = f.greedy;
  opts.max_len = f.max_len;
  opts.length_penalty = f.length_penalty;
  const auto lines = batch_translate(model, f.manifest, parse_task(f.task), vocab, opts, f.out);
  out << "decoded " << lines.size() << " lines to " << f.out << "\n";
  return kExitOk;
}

struct ScoreFlags {
  std::string hyp, ref, manifest, task = "ST", out;
};

int cmd_score(const ScoreFlags& f, std::ostream& out) {
  const Task task = parse_task(f.task);
  const auto hyps = read_lines(f.hyp);
  std::vector<std::string> refs;
  if (!f.ref.empty() == !f.manifest.empty()) throw ConfigError("score needs exactly one of --ref and --manifest");
  if (!f.ref.empty()) {
    refs = read_lines(f.ref);
  } else {
    for (const auto& t : read_manifest(f.manifest)) refs.push_back(references_for(t, task));
  }
  const auto report = task == Task::kASR ? wer(hyps, refs) : corpus_bleu(hyps, refs);
  if (f.out.empty()) out << format_report_csv({report});
  else emit_report({report}, f.out);
  return kExitOk;
}

struct AverageFlags {
  std::vector<std::string> inputs;
  std::size_t k = 10;
  std::string out;
};

int cmd_average(const AverageFlags& f, std::ostream& out, std::ostream& err) {
  if (f.k == 0) throw ConfigError("-k must be at least 1");
  std::vector<fs::path> files;
  for (const auto& in : f.inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        const auto name = e.path().filename().string();
        if (name.rfind("step-", 0) == 0 && e.path().extension() == ".ckpt") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  if (files.empty()) throw std::runtime_error("no checkpoints found");
  std::vector<Checkpoint> ckpts;
  for (const auto& p : files) ckpts.push_back(load_checkpoint(p));
  std::vector<std::size_t> order(ckpts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ckpts[a].step() < ckpts[b].step(); });
  if (ckpts.size() < f.k) {
    err << "warning: only " << ckpts.size() << " checkpoints available, averaging all of them\n";
  }
  const std::size_t take = std::min(f.k, ckpts.size());
  std::vector<Checkpoint> chosen;
  for (std::size_t i = order.size() - take; i < order.size(); ++i) chosen.push_back(ckpts[order[i]]);
  save_checkpoint(average_checkpoints(chosen), f.out);
  out << "averaged " << take << " checkpoints (steps";
  for (const auto& c : chosen) out << " " << c.step();
  out << ") into " << f.out << "\n";
  return kExitOk;
}

struct AblateFlags {
  std::string data, convergence, seeds, recipes;
  std::optional<std::uint64_t> max_steps;
};

int cmd_ablate(const ConfigFlags& flags, const AblateFlags& af, std::ostream& out, std::ostream& err) {
  RunConfig c = flags.resolve();
  if (flags.seed) c.ablate_seeds = {*flags.seed};
  if (!af.seeds.empty()) c.set("ablate.seeds", af.seeds);
  if (!af.recipes.empty()) c.set("ablate.recipes", af.recipes);
  if (!af.data.empty()) c.data = af.data;
  if (af.max_steps) {
    c.budget.pretrain_steps = std::min(c.budget.pretrain_steps, *af.max_steps);
    c.budget.finetune_steps = std::min(c.budget.finetune_steps, *af.max_steps);
    if (*af.max_steps == 0) throw ConfigError("ablate needs --max-steps >= 1");
  }
  std::vector<std::string> recipes = c.ablate_recipes.empty() ? preset_names() : c.ablate_recipes;
  auto has = [&](const std::string& r) { return std::find(recipes.begin(), recipes.end(), r) != recipes.end(); };
  if (!af.convergence.empty() && !(has("EXP_I") && has("EXP_III"))) {
    throw ConfigError("--convergence-report needs EXP_I and EXP_III among the ablated recipes");
  }
  const auto dir = require_out(c);
  write_text(dir / "config.resolved", c.render());
  const auto ex = prepare_data(c);
  const auto rows = run_ablation(c, ex, dir, err);
  out << format_ablation_csv(rows);
  if (!af.convergence.empty()) {
    const std::string first = std::to_string(c.ablate_seeds.front());
    const std::vector<LogRow>*one = nullptr, *three = nullptr;
    for (const auto& r : rows) {
      if (r.seed != first) continue;
      if (r.recipe == "EXP_I") one = &r.log;
      if (r.recipe == "EXP_III") three = &r.log;
    }
    write_text(af.convergence, convergence_report("EXP_I", *one, "EXP_III", *three));
  }
  return kExitOk;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& sizes, std::ostream& out, std::ostream& err) {
  RunConfig c = flags.resolve();
  if (flags.seed) c.train.seed = *flags.seed;
  if (!sizes.empty()) c.set("sweep.sizes", sizes);
  const auto dir = require_out(c);
  write_text(dir / "config.resolved", c.render());
  const auto rows = run_sweep(c, err);
  write_text(dir / "sweep.csv", format_sweep_csv(rows));
  out << format_sweep_csv(rows);
  return kExitOk;
}

}  // namespace

ExperimentData prepare_data(Corpus corpus) {
  if (corpus.train.empty()) throw std::runtime_error("empty corpus: no training triples");
  auto vocab = build_vocab(corpus);
  auto data = make_training_data(corpus, vocab);
  return {std::move(corpus), std::move(vocab), std::move(data)};
}

ExperimentData prepare_data(const RunConfig& config) {
  if (config.data.empty()) {
    if (config.corpus.n_triples == 0) throw std::runtime_error("empty corpus: n_triples must be at least 1");
    return prepare_data(generate_corpus(config.corpus));
  }
  auto corpus = load_corpus(config.data);
  if (corpus.train.empty()) throw std::runtime_error("empty corpus in " + config.data.string());
  if (!fs::exists(config.data / "vocab.tsv")) return prepare_data(std::move(corpus));
  auto vocab = Vocabulary::load(config.data / "vocab.tsv");
  auto data = make_training_data(corpus, vocab);
  return {std::move(corpus), std::move(vocab), std::move(data)};
}

RunScores score_model(const XstNetModel<float>& model, const ExperimentData& ex, const DecodeOptions& decode) {
  RunScores s;
  s.test_st_bleu = evaluate(model, project(ex.corpus.test, Task::kST, ex.vocab), ex.vocab, decode).value;
  s.dev_mt_bleu = evaluate(model, ex.data.dev_mt, ex.vocab, decode).value;
  s.dev_wer = evaluate(model, ex.data.dev_asr, ex.vocab, decode).value;
  return s;
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "recipe,seed,test_st_bleu,dev_mt_bleu,dev_wer\n";
  for (const auto& r : rows) {
    out += r.recipe + "," + r.seed + "," + fixed4(r.scores.test_st_bleu) + "," + fixed4(r.scores.dev_mt_bleu) + "," +
           fixed4(r.scores.dev_wer) + "\n";
  }
  return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const ExperimentData& ex, const fs::path& out_dir,
                                      std::ostream& progress) {
  const auto recipes = config.ablate_recipes.empty() ? preset_names() : config.ablate_recipes;
  const auto model_config = config.model_for(ex.vocab, ex.corpus.train.front().frame_dim);
  if (!out_dir.empty()) fs::create_directories(out_dir / "logs");
  std::vector<AblationRow> rows;
  for (const auto& name : recipes) {
    const auto recipe = preset_recipe(name, config.budget);
    RunScores sum;
    for (auto seed : config.ablate_seeds) {
      TrainOptions opts = config.train;
      opts.seed = seed;
      const std::string tag = name + "-seed" + std::to_string(seed);
      opts.on_row = eval_printer(progress, tag + " ");
      auto result = run_recipe(recipe, ex.data, ex.vocab, model_config, opts);
      AblationRow row{name, std::to_string(seed), score_model(result.averaged_model, ex, config.decode), {}};
      row.log = std::move(result.log);
      sum.test_st_bleu += row.scores.test_st_bleu;
      sum.dev_mt_bleu += row.scores.dev_mt_bleu;
      sum.dev_wer += row.scores.dev_wer;
      if (!out_dir.empty()) write_log_csv(row.log, out_dir / "logs" / (tag + ".csv"));
      rows.push_back(std::move(row));
      if (!out_dir.empty()) write_text(out_dir / "ablation.csv", format_ablation_csv(rows));
    }
    const double n = static_cast<double>(config.ablate_seeds.size());
    rows.push_back({name, "mean", {sum.test_st_bleu / n, sum.dev_mt_bleu / n, sum.dev_wer / n}, {}});
    if (!out_dir.empty()) write_text(out_dir / "ablation.csv", format_ablation_csv(rows));
  }
  return rows;
}

std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "ext_size,mt_bleu,st_bleu\n";
  for (const auto& r : rows) out += std::to_string(r.ext_size) + "," + fixed4(r.mt_bleu) + "," + fixed4(r.st_bleu) + "\n";
  return out;
}

std::vector<SweepRow> run_sweep(const RunConfig& config, std::ostream& progress) {
  if (config.sweep_sizes.empty()) throw ConfigError("sweep.sizes is empty");
  SynthSpec spec = config.corpus;
  spec.n_ext_pairs = std::max<std::size_t>(1, config.sweep_sizes.back());
  const auto full = config.data.empty() ? prepare_data(generate_corpus(spec)) : prepare_data(config);
  if (full.corpus.ext.size() < config.sweep_sizes.back()) {
    throw std::runtime_error("corpus has only " + std::to_string(full.corpus.ext.size()) + " external pairs");
  }
  const auto model_config = config.model_for(full.vocab, full.corpus.train.front().frame_dim);
  std::vector<SweepRow> rows;
  for (std::size_t size : config.sweep_sizes) {
    Corpus corpus = full.corpus;
    corpus.ext.resize(size);
    ExperimentData ex{std::move(corpus), full.vocab, {}};
    ex.data = make_training_data(ex.corpus, ex.vocab);
    TrainOptions opts = config.train;
    opts.on_row = eval_printer(progress, "ext=" + std::to_string(size) + " ");
    TrainingRecipe recipe = size == 0 ? preset_recipe("XSTNET_BASE", config.budget) : preset_recipe("EXP_I", config.budget);
    auto result = run_recipe(recipe, ex.data, ex.vocab, model_config, opts);
    SweepRow row;
    row.ext_size = size;
    if (size == 0) {
      DecodeOptions greedy;
      greedy.greedy = true;
      row.mt_bleu = evaluate(XstNetModel<float>(model_config, opts.seed), ex.data.dev_mt, ex.vocab, greedy,
                             opts.dev_limit).value;
    } else {
      const std::string pre = recipe.stages.front().name;
      for (const auto& r : result.log)
        if (r.stage == pre && r.dev_metric) row.mt_bleu = r.dev_value;
    }
    row.st_bleu = evaluate(result.averaged_model, project(ex.corpus.test, Task::kST, ex.vocab), ex.vocab, config.decode).value;
    rows.push_back(row);
  }
  return rows;
}

std::string convergence_report(const std::string& name_a, const std::vector<LogRow>& a, const std::string& name_b,
                               const std::vector<LogRow>& b) {
  std::map<std::uint64_t, std::pair<const LogRow*, const LogRow*>> joined;
  for (const auto& r : a)
    if (r.dev_metric) joined[r.step].first = &r;
  for (const auto& r : b)
    if (r.dev_metric) joined[r.step].second = &r;
  auto cells = [](const LogRow* r) {
    return r ? dev_metric_name(*r->dev_metric) + "," + fixed4(r->dev_value) : std::string(",");
  };
  std::string out = "step," + name_a + "_metric," + name_a + "_value," + name_b + "_metric," + name_b + "_value\n";
  for (const auto& [step, rows] : joined) out += std::to_string(step) + "," + cells(rows.first) + "," + cells(rows.second) + "\n";
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bimodal speech/text translation toolkit", "xstnet"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, ablate_flags, sweep_flags;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus and vocabulary");
  gen_flags.add_to(*gen);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train a model with a recipe");
  train_flags.add_to(*train);
  train->add_option("--recipe", tf.recipe, "EXP_I..EXP_VI, XSTNET_BASE or W_TRANSF");
  train->add_option("--stage", tf.stages, "inline stage TASK[+TASK...]:STEPS, repeatable (replaces the recipe)");
  train->add_option("--data", tf.data, "corpus directory written by gen-data");
  train->add_option("--max-steps", tf.max_steps, "cap every stage at this many steps (0 = no training)");

  DecodeFlags df;
  auto* decode = app.add_subcommand("decode", "translate or transcribe a manifest");
  decode->add_option("--checkpoint", df.checkpoint, "checkpoint file")->required();
  decode->add_option("--manifest", df.manifest, "manifest to decode")->required();
  decode->add_option("--task", df.task, "ST, ASR or MT")->required();
  decode->add_option("--vocab", df.vocab, "vocabulary file (default: next to the checkpoint)");
  decode->add_option("--beam", df.beam, "beam size (default 10)");
  decode->add_flag("--greedy", df.greedy, "greedy decoding");
  decode->add_option("--max-len", df.max_len, "maximum output length including the tag");
  decode->add_option("--length-penalty", df.length_penalty, "length normalization exponent");
  decode->add_option("--out", df.out, "hypothesis file")->required();

  ScoreFlags sf;
  auto* score = app.add_subcommand("score", "BLEU (ST/MT) or WER (ASR) of hypotheses");
  score->add_option("--hyp", sf.hyp, "hypothesis file")->required();
  score->add_option("--ref", sf.ref, "reference file, one line per hypothesis");
  score->add_option("--manifest", sf.manifest, "take references from a manifest");
  score->add_option("--task", sf.task, "ST, ASR or MT (ASR selects WER)");
  score->add_option("--out", sf.out, "report CSV (default: stdout)");

  AverageFlags avf;
  auto* average = app.add_subcommand("average", "average the most recent checkpoints");
  average->add_option("inputs", avf.inputs, "checkpoint files or directories")->required();
  average->add_option("-k,--last", avf.k, "number of most recent checkpoints (default 10)");
  average->add_option("--out", avf.out, "output checkpoint")->required();

  AblateFlags af;
  auto* ablate = app.add_subcommand("ablate", "run every recipe over several seeds");
  ablate_flags.add_to(*ablate);
  ablate->add_option("--seeds", af.seeds, "comma-separated seeds (default 17,18,19)");
  ablate->add_option("--recipes", af.recipes, "comma-separated recipes (default: all)");
  ablate->add_option("--data", af.data, "corpus directory written by gen-data");
  ablate->add_option("--max-steps", af.max_steps, "cap the per-stage step budgets");
  ablate->add_option("--convergence-report", af.convergence,
                     "write EXP_I and EXP_III dev curves (first seed) joined on step");

  std::string sizes;
  auto* sweep = app.add_subcommand("sweep-ext", "EXP_I across external-data sizes");
  sweep_flags.add_to(*sweep);
  sweep->add_option("--sizes", sizes, "comma-separated ascending sizes (default 2000,5000,10000,20000)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_flags, out);
    if (*train) return cmd_train(train_flags, tf, out, err);
    if (*decode) return cmd_decode(df, out);
    if (*score) return cmd_score(sf, out);
    if (*average) return cmd_average(avf, out, err);
    if (*ablate) return cmd_ablate(ablate_flags, af, out, err);
    if (*sweep) return cmd_sweep(sweep_flags, sizes, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace xst
