// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned here.
// Training criteria write their logs and score tables under --work.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "xst/cli/commands.hpp"
#include "xst/data/manifest.hpp"
#include "xst/infer/decode.hpp"
#include "xst/metrics/metrics.hpp"
#include "xst/numerics/gradcheck.hpp"
#include "xst/numerics/ops.hpp"
#include "xst/train/checkpoint.hpp"

using namespace xst;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr int kGradPoints = 100;
constexpr double kGradSeconds = 120.0;
constexpr double kPadTolerance = 1e-5;
constexpr double kBleuHand = 60.65, kBleuHandTolerance = 0.01;
constexpr double kLearningFloor = 90.0;
constexpr double kMultiTaskGain = 1.0;
constexpr double kProgressiveSlack = 0.5;
constexpr double kSweepBand = 1.0;
constexpr double kAverageRelative = 1e-7;

constexpr std::uint64_t kSeeds[] = {17, 18, 19};
constexpr std::size_t kLowResourceTriples = 300;
constexpr std::uint64_t kLowResourceSteps = 3000;
constexpr std::uint64_t kPretrainSteps = 1000, kFinetuneSteps = 4000;
constexpr std::uint64_t kSweepPretrainSteps = 2000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

template <typename T>
bool same_bits(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// ---------------------------------------------------------------- criterion 1

using TD = Tensor<double>;

TD random_tensor(Shape shape, std::mt19937_64& rng, double spread = 1.0) {
  std::normal_distribution<double> n(0.0, spread);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = n(rng);
  return TD(std::move(shape), std::move(v));
}

TD probe(const TD& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 * static_cast<double>(i) + 0.1);
  return sum(mul(y, TD(y.shape(), w)));
}

struct GradCase {
  std::string name;
  std::function<std::vector<TD>(std::mt19937_64&)> make;
  std::function<TD(const std::vector<TD>&)> f;
};

std::vector<GradCase> grad_cases() {
  auto one = [](Shape s, double spread = 1.0) {
    return [s, spread](std::mt19937_64& r) { return std::vector<TD>{random_tensor(s, r, spread)}; };
  };
  auto two = [](Shape a, Shape b) {
    return [a, b](std::mt19937_64& r) { return std::vector<TD>{random_tensor(a, r), random_tensor(b, r)}; };
  };
  return {
      {"add", two({3, 4}, {4}), [](auto& in) { return probe(add(in[0], in[1])); }},
      {"sub", two({2, 3, 1}, {2, 1, 4}), [](auto& in) { return probe(sub(in[0], in[1])); }},
      {"mul", two({2, 3, 4}, {2, 3, 1}), [](auto& in) { return probe(mul(in[0], in[1])); }},
      {"scale", one({5}), [](auto& in) { return probe(scale(in[0], -1.7)); }},
      {"matmul", two({2, 3, 4}, {4, 5}), [](auto& in) { return probe(matmul(in[0], in[1])); }},
      {"bmm", two({2, 3, 4}, {2, 4, 2}), [](auto& in) { return probe(matmul(in[0], in[1])); }},
      {"transpose", one({2, 3, 4}), [](auto& in) { return probe(transpose(in[0])); }},
      {"permute", one({2, 3, 4, 2}), [](auto& in) { return probe(permute(in[0], {2, 0, 3, 1})); }},
      {"reshape", one({2, 6}), [](auto& in) { return probe(reshape(in[0], {3, 4})); }},
      {"concat", two({2, 1, 3}, {2, 4, 3}), [](auto& in) { return probe(concat<double>({in[0], in[1]}, 1)); }},
      {"gelu", one({6}, 2.0), [](auto& in) { return probe(gelu(in[0])); }},
      {"relu", one({6}), [](auto& in) { return probe(relu(in[0])); }},
      {"softmax", one({3, 4, 2}), [](auto& in) { return probe(softmax(in[0], 1)); }},
      {"layer_norm",
       [](std::mt19937_64& r) {
         return std::vector<TD>{random_tensor({3, 5}, r), random_tensor({5}, r), random_tensor({5}, r)};
       },
       [](auto& in) { return probe(layer_norm(in[0], in[1], in[2])); }},
      {"conv1d",
       [](std::mt19937_64& r) {
         return std::vector<TD>{random_tensor({2, 7, 3}, r), random_tensor({5, 3, 2}, r), random_tensor({2}, r)};
       },
       [](auto& in) { return probe(conv1d(in[0], in[1], in[2], 2, 2)); }},
      {"embedding_lookup", one({4, 3}),
       [](auto& in) {
         const int ids[] = {3, 0, 3, 1};
         return probe(embedding_lookup(in[0], ids));
       }},
      {"nll_loss", one({4, 5}, 2.0), [](auto& in) { return nll_loss(in[0], std::vector<int>{1, 0, 4, 2}, 0); }},
      {"nll_loss/smoothed", one({3, 6}, 2.0),
       [](auto& in) { return nll_loss(in[0], std::vector<int>{5, 2, 1}, -1, 0.1); }},
      {"dropout", one({10}),
       [](auto& in) {
         std::mt19937_64 mask_rng(99);
         return probe(dropout(in[0], 0.3, mask_rng));
       }},
      {"mean", one({2, 3}), [](auto& in) { return mean(mul(in[0], in[0])); }},
  };
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 16;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.dropout_rate = 0.0;
  c.max_positions = 32;
  c.acoustic.frame_dim = 3;
  c.acoustic.kernel = 3;
  c.subsampler.kernel = 3;
  c.vocab_size = 9;
  return c;
}

std::vector<float> random_frames(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> f(n * dim);
  for (float& v : f) v = g(rng);
  return f;
}

constexpr int kSrcTag = tokens::kFirstLanguage;
constexpr int kTgtTag = tokens::kFirstLanguage + 1;

Seq2SeqBatch audio_batch(const std::vector<std::vector<float>>& frames, std::size_t dim,
                         const std::vector<std::vector<int>>& targets, Task task) {
  Seq2SeqBatch b;
  b.task = task;
  b.frame_dim = dim;
  b.frames = frames;
  b.targets = targets;
  b.bos_tags.assign(targets.size(), task == Task::kASR ? kSrcTag : kTgtTag);
  return b;
}

Seq2SeqBatch text_batch(const std::vector<std::vector<int>>& sources, const std::vector<std::vector<int>>& targets,
                        Task task = Task::kMT) {
  Seq2SeqBatch b;
  b.task = task;
  b.source_tokens = sources;
  b.source_tags.assign(sources.size(), kSrcTag);
  b.targets = targets;
  b.bos_tags.assign(targets.size(), kTgtTag);
  return b;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (const auto& c : grad_cases()) {
    std::mt19937_64 rng(1234);
    for (int p = 0; p < kGradPoints; ++p) {
      auto inputs = c.make(rng);
      GradCheckOptions opts;
      opts.tolerance = kGradTolerance;
      auto r = finite_difference_check([&] { return c.f(inputs); }, inputs, opts);
      ++checked;
      if (r.max_error > worst) worst = r.max_error, worst_name = c.name;
    }
  }

  const ModelConfig mc = tiny_model_config();
  std::mt19937_64 rng(15);
  XstNetModel<double> model(mc, 15);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& p : model.parameters())
    for (double& v : p.tensor.mutable_data()) v += jitter(rng);
  std::vector<TD> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  std::vector<Seq2SeqBatch> batches = {
      audio_batch({random_frames(7, 3, rng), random_frames(4, 3, rng)}, 3, {{6, 7, 1}, {8, 1}}, Task::kST),
      audio_batch({random_frames(6, 3, rng)}, 3, {{6, 1}}, Task::kASR),
      text_batch({{6, 7}, {8}}, {{7, 1}, {6, 8, 1}}),
      text_batch({{6, 7, 8}}, {{8, 7, 1}}, Task::kMTExt),
  };
  for (const auto& batch : batches) {
    GradCheckOptions opts;
    opts.tolerance = kGradTolerance;
    opts.max_coordinates = 400;
    opts.seed = static_cast<std::uint64_t>(batch.task);
    auto r = finite_difference_check([&] { return model.forward_loss(batch, 0.1, {}); }, params, opts);
    ++checked;
    if (r.max_error > worst) worst = r.max_error, worst_name = "model/" + task_name(batch.task);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = worst <= kGradTolerance && secs < kGradSeconds;
  return {pass, std::to_string(grad_cases().size()) + " ops x " + std::to_string(kGradPoints) +
                    " points + 4 task losses, max rel err " + sci(worst) + " (" + worst_name + ") <= " +
                    sci(kGradTolerance) + ", " + fmt(secs, 1) + " s < " + fmt(kGradSeconds, 0) + " s"};
}

// ---------------------------------------------------------------- criterion 2

template <typename T>
std::vector<T> row_of(const Tensor<T>& x, std::size_t b, std::size_t t) {
  const std::size_t d = x.dim(2);
  auto data = x.data();
  auto start = data.begin() + static_cast<std::ptrdiff_t>((b * x.dim(1) + t) * d);
  return std::vector<T>(start, start + static_cast<std::ptrdiff_t>(d));
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

Outcome structural_invariants() {
  ModelConfig mc = ModelConfig::desk(20);
  mc.dropout_rate = 0.0;
  std::vector<std::string> failures;

  // Subsampler length law, exhaustively through the model.
  {
    XstNetModel<float> model(mc, 3);
    std::mt19937_64 rng(2);
    std::size_t bad = 0;
    for (std::size_t t = 1; t <= 512; ++t) {
      std::vector<std::size_t> lengths;
      auto frames = XstNetModel<float>::pack_frames({random_frames(t, mc.acoustic.frame_dim, rng)},
                                                    mc.acoustic.frame_dim, lengths);
      auto sub = model.subsample(model.encode_acoustic(frames, lengths, {}));
      if (sub.values.dim(1) != (t + 3) / 4 || sub.lengths[0] != (t + 3) / 4) ++bad;
    }
    if (bad) failures.push_back(std::to_string(bad) + " lengths violate ceil(T/4)");
  }

  // Tag tokens sit at position 0 with the sinusoid at zero.
  {
    XstNetModel<double> model(mc, 4);
    const std::size_t d = mc.d_model;
    auto table = model.parameter("embed.tokens").data();
    SequenceBatch<double> audio{Tensor<double>::full({1, 5, d}, 0.5), {5}};
    auto a = row_of(model.embed_audio(audio, {}).values, 0, 0);
    auto text = model.embed_text({{6, 7}}, {kTgtTag}, {});
    auto t = row_of(text.values, 0, 0);
    double err = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double pe = i % 2 == 0 ? 0.0 : 1.0;
      err = std::max(err, std::abs(a[i] - (table[tokens::kAudio * d + i] + pe)));
      err = std::max(err, std::abs(t[i] - (std::sqrt(static_cast<double>(d)) * table[kTgtTag * d + i] + pe)));
    }
    if (err > 1e-12) failures.push_back("tag embedding off by " + sci(err));
  }

  // Decoder causality: changing token j leaves positions < j bit-identical.
  {
    XstNetModel<double> model(mc, 8);
    auto memory = model.encode_source(text_batch({{6, 7, 8}}, {{1}}), {});
    const std::vector<int> base_in = {kTgtTag, 9, 10, 11, 12, 13, 14};
    auto base = model.decode({base_in}, memory, {});
    for (std::size_t j = 1; j < base_in.size(); ++j) {
      auto changed = base_in;
      changed[j] = 15;
      auto other = model.decode({changed}, memory, {});
      for (std::size_t i = 0; i < j; ++i)
        if (row_of(base, 0, i) != row_of(other, 0, i)) failures.push_back("decoder leaks position " + std::to_string(j));
      if (row_of(base, 0, j) == row_of(other, 0, j)) failures.push_back("decoder ignores position " + std::to_string(j));
    }
  }

  // Pad invariance for audio and text sources, and for decoder outputs.
  double pad_err = 0.0;
  {
    XstNetModel<float> model(mc, 5);
    std::mt19937_64 rng(5);
    const std::size_t dim = mc.acoustic.frame_dim;
    auto short_f = random_frames(9, dim, rng), long_f = random_frames(37, dim, rng);
    auto a = model.encode_source(audio_batch({short_f}, dim, {{6, 1}}, Task::kST), {});
    auto b = model.encode_source(audio_batch({short_f, long_f}, dim, {{6, 1}, {7, 1}}, Task::kST), {});
    for (std::size_t t = 0; t < a.lengths[0]; ++t) pad_err = std::max(pad_err, max_abs_diff(row_of(a.values, 0, t), row_of(b.values, 0, t)));
    auto ta = model.encode_source(text_batch({{6, 7}}, {{8, 1}}), {});
    auto tb = model.encode_source(text_batch({{6, 7}, {8, 9, 10, 11, 12}}, {{8, 1}, {8, 1}}), {});
    for (std::size_t t = 0; t < 3; ++t) pad_err = std::max(pad_err, max_abs_diff(row_of(ta.values, 0, t), row_of(tb.values, 0, t)));
    auto da = model.decode({{kTgtTag, 6}}, ta, {});
    auto db = model.decode({{kTgtTag, 6}, {kTgtTag, 7, 8, 9}}, tb, {});
    for (std::size_t t = 0; t < 2; ++t) pad_err = std::max(pad_err, max_abs_diff(row_of(da, 0, t), row_of(db, 0, t)));
  }
  if (pad_err >= kPadTolerance) failures.push_back("pad invariance error " + sci(pad_err));

  if (!failures.empty()) return {false, failures.front() + (failures.size() > 1 ? " (+" + std::to_string(failures.size() - 1) + " more)" : "")};
  return {true, "ceil(T/4) for T=1..512, tag position 0 exact, decoder causal bit-exact, pad error " + sci(pad_err) +
                    " < " + sci(kPadTolerance)};
}

// ---------------------------------------------------------------- criterion 3

class ToyScorer : public StepScorer {
 public:
  explicit ToyScorer(std::uint64_t seed) : seed_(seed) {}
  std::size_t vocab_size() const override { return 3; }
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) out.push_back(table(p));
    return out;
  }
  std::vector<double> table(const std::vector<int>& prefix) {
    if (auto it = cache_.find(prefix); it != cache_.end()) return it->second;
    std::uint64_t h = seed_;
    for (int t : prefix) h = h * 1000003u + static_cast<std::uint64_t>(t + 1);
    std::mt19937_64 rng(h);
    std::normal_distribution<double> n(0.0, 2.0);
    std::vector<double> logits(3);
    for (double& l : logits) l = n(rng);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    for (double& l : logits) l = l - m - std::log(z);
    return cache_[prefix] = logits;
  }

 private:
  std::uint64_t seed_;
  std::map<std::vector<int>, std::vector<double>> cache_;
};

void exhaustive(ToyScorer& s, std::vector<int>& prefix, double score, std::size_t max_len,
                std::pair<std::vector<int>, double>& best) {
  auto consider = [&](const std::vector<int>& t, double sc) {
    if (sc > best.second || (sc == best.second && t < best.first)) best = {t, sc};
  };
  if (prefix.size() == max_len) return consider(prefix, score);
  const auto lp = s.table(prefix);
  for (int v = 0; v < 3; ++v) {
    if (v == tokens::kEos) {
      consider(prefix, score + lp[v]);
    } else {
      prefix.push_back(v);
      exhaustive(s, prefix, score + lp[v], max_len, best);
      prefix.pop_back();
    }
  }
}

Outcome decoding_oracle() {
  constexpr std::size_t kMaxLen = 4;
  std::size_t beam_mismatch = 0, greedy_mismatch = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ToyScorer scorer(seed);
    std::pair<std::vector<int>, double> best{{}, -INFINITY};
    std::vector<int> prefix{0};
    exhaustive(scorer, prefix, 0.0, kMaxLen, best);
    auto hyps = beam_decode(scorer, 0, 81, kMaxLen, 0.0);
    if (hyps.empty() || hyps.front().tokens != best.first || std::abs(hyps.front().score - best.second) > 1e-12)
      ++beam_mismatch;
  }
  for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
    ToyScorer a(seed), b(seed);
    const std::size_t max_len = 1 + seed % 9;
    auto g = greedy_decode(a, 0, max_len);
    auto beam = beam_decode(b, 0, 1, max_len, 1.0);
    if (beam.size() != 1 || beam.front().tokens != g) ++greedy_mismatch;
  }
  return {beam_mismatch == 0 && greedy_mismatch == 0,
          "beam vs exhaustive (|V|=3, max_len=4): " + std::to_string(50 - beam_mismatch) +
              "/50 agree; beam=1 vs greedy: " + std::to_string(100 - greedy_mismatch) + "/100 agree"};
}

// ---------------------------------------------------------------- criterion 4

std::size_t recursive_distance(const std::vector<std::string>& a, std::size_t i, const std::vector<std::string>& b,
                               std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  if (a[i] == b[j]) return recursive_distance(a, i + 1, b, j + 1);
  return 1 + std::min({recursive_distance(a, i + 1, b, j + 1), recursive_distance(a, i + 1, b, j),
                       recursive_distance(a, i, b, j + 1)});
}

Outcome metrics_oracle() {
  auto r = corpus_bleu({"a b c d"}, {"a b c d e f"});
  bool precisions = true;
  for (std::size_t n = 1; n <= 4; ++n) precisions = precisions && r.precision(n) == 1.0;
  const bool bp = std::abs(r.brevity_penalty - std::exp(-0.5)) < 1e-12;
  const bool bleu_ok = precisions && bp && std::abs(r.value - kBleuHand) <= kBleuHandTolerance;

  // All sequences of length <= 6 over a two-word alphabet, pairwise, as
  // single-sentence corpora: WER = distance / reference length.
  std::vector<std::vector<std::string>> all{{}};
  for (std::size_t len = 1; len <= 6; ++len)
    for (std::size_t mask = 0; mask < (1u << len); ++mask) {
      std::vector<std::string> s;
      for (std::size_t i = 0; i < len; ++i) s.push_back((mask >> i) & 1 ? "x" : "y");
      all.push_back(s);
    }
  std::size_t pairs = 0, bad = 0;
  for (const auto& h : all)
    for (const auto& ref : all) {
      if (ref.empty()) continue;
      const double expect = static_cast<double>(recursive_distance(h, 0, ref, 0)) / static_cast<double>(ref.size());
      ++pairs;
      if (std::abs(wer({join_words(h)}, {join_words(ref)}).value - expect) > 1e-12) ++bad;
    }
  return {bleu_ok && bad == 0, "hand BLEU " + fmt(r.value, 4) + " (target " + fmt(kBleuHand) + " +/- " +
                                   fmt(kBleuHandTolerance) + "); WER vs brute force on " + std::to_string(pairs) +
                                   " pairs: " + std::to_string(bad) + " mismatches"};
}

// ------------------------------------------------------- training criteria

struct RunRecord {
  RunScores scores;
  std::vector<LogRow> log;
};

class Lab {
 public:
  explicit Lab(fs::path work) : work_(std::move(work)) { fs::create_directories(work_ / "logs"); }

  const fs::path& work() const { return work_; }

  static SynthSpec default_corpus() { return SynthSpec{}; }
  static SynthSpec low_resource_corpus() {
    SynthSpec s;
    s.n_triples = kLowResourceTriples;
    return s;
  }

  // Trains `recipe` with the default configuration and scores the averaged
  // model; results are memoized per (corpus, recipe, budget, seed).
  const RunRecord& run(const std::string& corpus_name, const SynthSpec& spec, const std::string& recipe,
                       const StageBudget& budget, std::uint64_t seed) {
    const std::string key = corpus_name + "-" + recipe + "-" + std::to_string(budget.pretrain_steps) + "+" +
                            std::to_string(budget.finetune_steps) + "-seed" + std::to_string(seed);
    if (auto it = runs_.find(key); it != runs_.end()) return it->second;
    auto& ex = data(corpus_name, spec);
    RunConfig config;
    config.corpus = spec;
    TrainOptions opts = config.train;
    opts.seed = seed;
    opts.on_row = [&](const LogRow& r) {
      if (r.dev_metric)
        std::cerr << "  [" << key << "] step " << r.step << " " << dev_metric_name(*r.dev_metric) << " "
                  << fmt(r.dev_value) << "\n";
    };
    const auto t0 = std::chrono::steady_clock::now();
    auto result = run_recipe(preset_recipe(recipe, budget), ex.data, ex.vocab,
                             config.model_for(ex.vocab, ex.corpus.train.front().frame_dim), opts);
    RunRecord rec{score_model(result.averaged_model, ex, config.decode), std::move(result.log)};
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_log_csv(rec.log, work_ / "logs" / (key + ".csv"));
    std::ofstream(work_ / "runs.csv", std::ios::app)
        << key << "," << fmt(rec.scores.test_st_bleu, 4) << "," << fmt(rec.scores.dev_mt_bleu, 4) << ","
        << fmt(rec.scores.dev_wer, 4) << "," << fmt(secs, 1) << "\n";
    std::cerr << "  [" << key << "] test ST BLEU " << fmt(rec.scores.test_st_bleu) << " (" << fmt(secs, 0) << " s)\n";
    return runs_.emplace(key, std::move(rec)).first->second;
  }

 private:
  ExperimentData& data(const std::string& name, const SynthSpec& spec) {
    if (auto it = data_.find(name); it != data_.end()) return it->second;
    return data_.emplace(name, prepare_data(generate_corpus(spec))).first->second;
  }

  fs::path work_;
  std::map<std::string, ExperimentData> data_;
  std::map<std::string, RunRecord> runs_;
};

StageBudget standard_budget() {
  StageBudget b;
  b.pretrain_steps = kPretrainSteps;
  b.finetune_steps = kFinetuneSteps;
  return b;
}

// Same total step count as EXP_I in its single stage.
StageBudget single_stage_budget(std::uint64_t steps) {
  StageBudget b;
  b.pretrain_steps = 0;
  b.finetune_steps = steps;
  return b;
}

Outcome learning_floor(Lab& lab) {
  const auto& r = lab.run("default", Lab::default_corpus(), "EXP_I", standard_budget(), 17);
  return {r.scores.test_st_bleu >= kLearningFloor,
          "EXP_I seed 17, " + std::to_string(kPretrainSteps + kFinetuneSteps) + " steps: test ST BLEU " +
              fmt(r.scores.test_st_bleu) + " >= " + fmt(kLearningFloor)};
}

Outcome multi_task_gain(Lab& lab) {
  double base = 0.0, single = 0.0;
  std::string per_seed;
  for (auto seed : kSeeds) {
    const auto budget = single_stage_budget(kLowResourceSteps);
    const double b = lab.run("low", Lab::low_resource_corpus(), "XSTNET_BASE", budget, seed).scores.test_st_bleu;
    const double w = lab.run("low", Lab::low_resource_corpus(), "W_TRANSF", budget, seed).scores.test_st_bleu;
    base += b / 3.0;
    single += w / 3.0;
    per_seed += " " + fmt(b) + "/" + fmt(w);
  }
  return {base - single >= kMultiTaskGain,
          std::to_string(kLowResourceTriples) + " triples, " + std::to_string(kLowResourceSteps) +
              " steps: XSTNET_BASE " + fmt(base) + " - W_TRANSF " + fmt(single) + " = " + fmt(base - single) +
              " >= " + fmt(kMultiTaskGain) + " (per seed:" + per_seed + ")"};
}

std::optional<std::pair<std::string, double>> dev_at_or_before(const std::vector<LogRow>& log, std::uint64_t step) {
  std::optional<std::pair<std::string, double>> out;
  for (const auto& r : log)
    if (r.dev_metric && r.step <= step) out = {dev_metric_name(*r.dev_metric), r.dev_value};
  return out;
}

Outcome progressive_ordering(Lab& lab) {
  const std::uint64_t total = kPretrainSteps + kFinetuneSteps, half = total / 2;
  double e1 = 0.0, e3 = 0.0, d1 = 0.0, d3 = 0.0;
  bool metrics_match = true;
  for (auto seed : kSeeds) {
    const auto& a = lab.run("default", Lab::default_corpus(), "EXP_I", standard_budget(), seed);
    const auto& b = lab.run("default", Lab::default_corpus(), "EXP_III", single_stage_budget(total), seed);
    e1 += a.scores.test_st_bleu / 3.0;
    e3 += b.scores.test_st_bleu / 3.0;
    auto da = dev_at_or_before(a.log, half), db = dev_at_or_before(b.log, half);
    if (!da || !db || da->first != "dev_st_bleu" || db->first != "dev_st_bleu") metrics_match = false;
    d1 += (da ? da->second : 0.0) / 3.0;
    d3 += (db ? db->second : 0.0) / 3.0;
  }
  const bool final_ok = e1 >= e3 - kProgressiveSlack;
  const bool speed_ok = metrics_match && d1 >= d3;
  return {final_ok && speed_ok, "test ST BLEU EXP_I " + fmt(e1) + " >= EXP_III " + fmt(e3) + " - " +
                                    fmt(kProgressiveSlack) + "; dev ST BLEU at step <= " + std::to_string(half) +
                                    ": EXP_I " + fmt(d1) + " >= EXP_III " + fmt(d3) +
                                    (metrics_match ? "" : " (dev metric missing)") + "; " + std::to_string(total) +
                                    " steps each, 3 seeds"};
}

// The sweep pre-trains for 2,000 steps so the recorded MT BLEU belongs to a
// converged pre-training stage; runs stay at 5,000 steps in total.
Outcome scaling_trend(Lab& lab) {
  std::vector<SweepRow> mean;
  for (auto seed : kSeeds) {
    RunConfig config;
    config.train.seed = seed;
    config.budget.pretrain_steps = kSweepPretrainSteps;
    config.budget.finetune_steps = kPretrainSteps + kFinetuneSteps - kSweepPretrainSteps;
    auto rows = run_sweep(config, std::cerr);
    std::ofstream(lab.work() / ("sweep-seed" + std::to_string(seed) + ".csv"), std::ios::binary)
        << format_sweep_csv(rows);
    if (mean.empty()) mean.assign(rows.size(), SweepRow{});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      mean[i].ext_size = rows[i].ext_size;
      mean[i].mt_bleu += rows[i].mt_bleu / 3.0;
      mean[i].st_bleu += rows[i].st_bleu / 3.0;
    }
  }
  std::ofstream(lab.work() / "sweep-mean.csv", std::ios::binary) << format_sweep_csv(mean);
  bool mt_ok = true;
  std::string cells;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (i && mean[i].mt_bleu < mean[i - 1].mt_bleu - kSweepBand) mt_ok = false;
    cells += (i ? " " : "") + std::to_string(mean[i].ext_size) + ":" + fmt(mean[i].mt_bleu) + "/" + fmt(mean[i].st_bleu);
  }
  const bool st_ok = mean.back().st_bleu >= mean.front().st_bleu;
  return {mt_ok && st_ok, "mean over 3 seeds, ext_size:mt/st " + cells +
                              "; st last >= first, mt non-decreasing within " + fmt(kSweepBand)};
}

// ---------------------------------------------------------------- criterion 9

const char* kReproConfig = R"(corpus.n_triples = 40
corpus.n_ext_pairs = 60
corpus.n_dev = 8
corpus.n_test = 8
corpus.src_vocab_size = 8
corpus.len_min = 2
corpus.len_max = 4
corpus.ext_extra_len = 1
corpus.frame_dim = 4
model.d_model = 16
model.n_heads = 2
model.d_ffn = 32
model.n_enc_layers = 1
model.n_dec_layers = 1
train.pretrain_steps = 8
train.finetune_steps = 12
train.eval_interval = 5
train.batch_size = 8
train.average_last = 3
decode.beam = 3
ablate.seeds = 5, 6
sweep.sizes = 0, 20, 60
)";

// Runs every subcommand into `dir` and returns (artifact name, bytes).
std::map<std::string, std::string> run_all_commands(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.conf") << kReproConfig;
  const auto conf = (dir / "run.conf").string();
  std::map<std::string, std::string> out;
  auto cli = [&](const std::string& name, std::vector<std::string> args) {
    std::ostringstream o, e;
    const int code = run_cli(args, o, e);
    if (code != kExitOk) throw std::runtime_error(name + " exited with " + std::to_string(code) + ": " + e.str());
    out[name + ".stdout"] = o.str();
  };
  auto d = [&](const char* p) { return (dir / p).string(); };
  cli("gen-data", {"gen-data", "--config", conf, "--out", d("data")});
  cli("train", {"train", "--config", conf, "--data", d("data"), "--recipe", "EXP_I", "--out", d("train")});
  cli("decode", {"decode", "--checkpoint", d("train/averaged.ckpt"), "--manifest", d("data/test.tsv"), "--task", "ST",
                 "--out", d("hyp.txt")});
  cli("score", {"score", "--hyp", d("hyp.txt"), "--manifest", d("data/test.tsv"), "--task", "ST", "--out",
                d("score.csv")});
  cli("average", {"average", d("train"), "-k", "2", "--out", d("avg.ckpt")});
  cli("ablate", {"ablate", "--config", conf, "--data", d("data"), "--convergence-report", d("conv.csv"), "--out",
                 d("ablate")});
  cli("sweep-ext", {"sweep-ext", "--config", conf, "--out", d("sweep")});
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".csv" || ext == ".txt" || ext == ".tsv" || ext == ".resolved" || ext == ".ckpt" || ext == ".frames")
      out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return out;
}

Outcome reproducibility(Lab& lab) {
  auto a = run_all_commands(lab.work() / "repro" / "a");
  auto b = run_all_commands(lab.work() / "repro" / "b");
  std::size_t csvs = 0;
  std::vector<std::string> differing;
  for (const auto& [name, bytes] : a) {
    if (name.ends_with(".csv")) ++csvs;
    auto it = b.find(name);
    // stdout of gen-data/train/decode/average names the output directory.
    const bool path_bearing = name == "decode.stdout" || name == "average.stdout" || name.ends_with("config.resolved");
    if (it == b.end() || (!path_bearing && it->second != bytes)) differing.push_back(name);
  }
  if (a.size() != b.size()) differing.push_back("artifact sets differ");
  const std::string detail = std::to_string(a.size()) + " artifacts from all 7 subcommands (" + std::to_string(csvs) +
                       " CSVs) compared byte for byte: " +
                       (differing.empty() ? "identical" : differing.front() + " differs");
  return {differing.empty(), detail};
}

// --------------------------------------------------------------- criterion 10

Outcome round_trips(Lab& lab) {
  const auto dir = lab.work() / "roundtrip";
  fs::remove_all(dir);
  std::vector<std::string> failures;

  SynthSpec spec;
  spec.n_triples = 60;
  spec.n_ext_pairs = 50;
  spec.n_dev = 10;
  spec.n_test = 10;
  const Corpus corpus = generate_corpus(spec);
  save_corpus(dir / "corpus", corpus);
  const Corpus loaded = load_corpus(dir / "corpus");
  bool frames_exact = loaded.train.size() == corpus.train.size();
  for (std::size_t i = 0; frames_exact && i < corpus.train.size(); ++i)
    frames_exact = same_bits(corpus.train[i].frames, loaded.train[i].frames);
  if (!(loaded == corpus) || !frames_exact) failures.push_back("corpus/manifest/frames");

  const Vocabulary vocab = build_vocab(corpus);
  vocab.save(dir / "vocab.tsv");
  if (!(Vocabulary::load(dir / "vocab.tsv") == vocab)) failures.push_back("vocab");

  ModelConfig mc = ModelConfig::desk(vocab.size(), vocab.n_languages());
  mc.acoustic.frame_dim = spec.frame_dim;
  XstNetModel<float> model(mc, 7);
  Adam adam(AdamConfig{}, model.parameters());
  for (auto& p : model.parameters()) p.tensor.mutable_grad()[0] = 0.25f;
  adam.step();
  const auto ckpt = make_checkpoint(model, 123, {{"note", "round trip"}}, &adam);
  save_checkpoint(ckpt, dir / "model.ckpt");
  const auto back = load_checkpoint(dir / "model.ckpt");
  bool ckpt_exact = back == ckpt && back.parameters.size() == ckpt.parameters.size();
  for (std::size_t i = 0; ckpt_exact && i < ckpt.parameters.size(); ++i)
    ckpt_exact = same_bits(ckpt.parameters[i].data, back.parameters[i].data);
  const auto rebuilt = model_from_checkpoint(back);
  for (std::size_t i = 0; ckpt_exact && i < model.parameters().size(); ++i) {
    auto x = model.parameters()[i].tensor.data(), y = rebuilt.parameters()[i].tensor.data();
    ckpt_exact = std::vector<float>(x.begin(), x.end()) == std::vector<float>(y.begin(), y.end());
  }
  if (!ckpt_exact) failures.push_back("checkpoint");

  // Averaging against an independent long-double sum in reverse order.
  std::mt19937_64 rng(9);
  std::normal_distribution<float> g(0.0f, 3.0f);
  std::vector<Checkpoint> ckpts(10, make_checkpoint(model, 1));
  for (auto& c : ckpts)
    for (auto& t : c.parameters)
      for (float& v : t.data) v = g(rng);
  const auto avg = average_checkpoints(ckpts);
  double worst = 0.0;
  for (std::size_t i = 0; i < avg.parameters.size(); ++i)
    for (std::size_t e = 0; e < avg.parameters[i].data.size(); ++e) {
      long double s = 0;
      for (std::size_t c = ckpts.size(); c-- > 0;) s += ckpts[c].parameters[i].data[e];
      const double oracle = static_cast<double>(s / ckpts.size());
      const double diff = std::abs(avg.parameters[i].data[e] - oracle);
      worst = std::max(worst, oracle == 0.0 ? diff : diff / std::abs(oracle));
    }
  if (worst > kAverageRelative) failures.push_back("averaging");
  return {failures.empty(), "corpus/manifest/frames, vocab, checkpoint (with optimizer state) bit-exact" +
                                std::string(failures.empty() ? "" : " FAILED: " + failures.front()) +
                                "; averaging of 10 checkpoints max rel err " + sci(worst) + " <= " +
                                sci(kAverageRelative)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance criteria 1-10");
  std::vector<int> only, known;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 10));
  app.add_option("--known-failure", known, "criteria allowed to fail without failing the run")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "directory for logs and score tables");
  CLI11_PARSE(app, argc, argv);

  Lab lab(work);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"structural invariants", structural_invariants},
      {"decoding oracle", decoding_oracle},
      {"metrics oracle", metrics_oracle},
      {"learning floor", [&] { return learning_floor(lab); }},
      {"multi-task gain", [&] { return multi_task_gain(lab); }},
      {"progressive ordering", [&] { return progressive_ordering(lab); }},
      {"scaling trend", [&] { return scaling_trend(lab); }},
      {"reproducibility", [&] { return reproducibility(lab); }},
      {"round trips", [&] { return round_trips(lab); }},
  };
  const std::set<int> selected(only.begin(), only.end()), allowed(known.begin(), known.end());
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::string note;
    if (!o.pass && allowed.count(n)) note = " [known failure]";
    if (!o.pass && !allowed.count(n)) ++unexpected;
    std::cout << "criterion " << n << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << note << std::endl;
  }
  return unexpected == 0 ? 0 : 1;
}
