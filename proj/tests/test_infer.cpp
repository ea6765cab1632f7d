#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>

#include "xst/data/manifest.hpp"
#include "xst/infer/decode.hpp"
#include "xst/metrics/metrics.hpp"

using namespace xst;

namespace {

// |V| = 3 scorer whose next-token distribution is a fixed random function
// of the prefix.
class ToyScorer : public StepScorer {
 public:
  explicit ToyScorer(std::uint64_t seed, double spread = 2.0) : seed_(seed), spread_(spread) {}
  std::size_t vocab_size() const override { return 3; }
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) out.push_back(table(p));
    return out;
  }
  std::vector<double> table(const std::vector<int>& prefix) {
    auto it = cache_.find(prefix);
    if (it != cache_.end()) return it->second;
    std::uint64_t h = seed_;
    for (int t : prefix) h = h * 1000003u + static_cast<std::uint64_t>(t + 1);
    std::mt19937_64 rng(h);
    std::normal_distribution<double> n(0.0, spread_);
    std::vector<double> logits(3);
    for (double& l : logits) l = n(rng);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    for (double& l : logits) l = l - m - std::log(z);
    cache_[prefix] = logits;
    return logits;
  }

 private:
  std::uint64_t seed_;
  double spread_;
  std::map<std::vector<int>, std::vector<double>> cache_;
};

struct Best {
  std::vector<int> tokens;
  double score = -1e300;
};

// Exhaustive search over every output the decoder could produce.
void enumerate(ToyScorer& s, std::vector<int>& prefix, double score, std::size_t max_len, Best& best) {
  auto consider = [&](const std::vector<int>& tokens, double sc) {
    if (sc > best.score || (sc == best.score && tokens < best.tokens)) best = {tokens, sc};
  };
  if (prefix.size() == max_len) {
    consider(prefix, score);
    return;
  }
  const auto lp = s.table(prefix);
  for (int v = 0; v < 3; ++v) {
    if (v == tokens::kEos) {
      consider(prefix, score + lp[v]);
    } else {
      prefix.push_back(v);
      enumerate(s, prefix, score + lp[v], max_len, best);
      prefix.pop_back();
    }
  }
}

ModelConfig tiny_model(std::size_t vocab) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.dropout_rate = 0.0;
  c.max_positions = 64;
  c.acoustic.frame_dim = 4;
  c.vocab_size = vocab;
  return c;
}

Seq2SeqBatch random_source(std::mt19937_64& rng, std::size_t vocab, bool audio, std::size_t n = 1) {
  Seq2SeqBatch b;
  std::uniform_int_distribution<int> tok(6, static_cast<int>(vocab) - 1), len(1, 6);
  std::normal_distribution<float> g;
  for (std::size_t i = 0; i < n; ++i) {
    if (audio) {
      b.task = Task::kST;
      b.frame_dim = 4;
      std::vector<float> f(static_cast<std::size_t>(len(rng) * 3 * 4));
      for (float& x : f) x = g(rng);
      b.frames.push_back(f);
    } else {
      b.task = Task::kMT;
      std::vector<int> s(static_cast<std::size_t>(len(rng)));
      for (int& t : s) t = tok(rng);
      b.source_tokens.push_back(s);
      b.source_tags.push_back(4);
    }
    b.targets.push_back({1});
    b.bos_tags.push_back(5);
  }
  return b;
}

}  // namespace

TEST_CASE("beam search matches exhaustive search on toy models") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ToyScorer scorer(seed);
    Best best;
    std::vector<int> prefix{0};
    enumerate(scorer, prefix, 0.0, 4, best);
    auto hyps = beam_decode(scorer, 0, 81, 4, 0.0);
    REQUIRE(!hyps.empty());
    CHECK(hyps.front().tokens == best.tokens);
    CHECK(hyps.front().score == doctest::Approx(best.score).epsilon(1e-12));
  }
}

TEST_CASE("beam of one is greedy on toy models") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ToyScorer a(seed), b(seed);
    for (std::size_t max_len : {1u, 2u, 5u, 9u}) {
      auto g = greedy_decode(a, 0, max_len);
      auto beam = beam_decode(b, 0, 1, max_len, 1.0);
      REQUIRE(beam.size() == 1);
      CHECK(beam.front().tokens == g);
    }
  }
}

TEST_CASE("n-best list is ordered and capped") {
  ToyScorer s(7);
  auto hyps = beam_decode(s, 0, 5, 6, 1.0);
  CHECK(hyps.size() <= 5);
  for (std::size_t i = 1; i < hyps.size(); ++i) CHECK(hyps[i - 1].normalized >= hyps[i].normalized);
  for (const auto& h : hyps) {
    CHECK(h.tokens.front() == 0);
    CHECK(std::find(h.tokens.begin(), h.tokens.end(), tokens::kEos) == h.tokens.end());
  }
  CHECK_THROWS_AS(beam_decode(s, 0, 0, 6, 1.0), std::invalid_argument);
}

TEST_CASE("model decoding: tags, reductions and determinism") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t vocab = 12;
    XstNetModel<float> model(tiny_model(vocab), static_cast<std::uint64_t>(trial));
    const bool audio = trial % 2 == 0;
    auto src = random_source(rng, vocab, audio);
    ModelScorer scorer(model, src);
    const std::size_t max_len = 1 + static_cast<std::size_t>(trial % 12);
    auto g = greedy_decode(scorer, 5, max_len);
    auto beam = beam_decode(scorer, 5, 1, max_len, 1.0);
    CHECK(beam.front().tokens == g);
    CHECK(greedy_decode_batch(model, src, max_len).front() == g);
    CHECK(g.front() == 5);
    CHECK(g.size() <= max_len);
    for (std::size_t i = 1; i < g.size(); ++i) {
      CHECK(g[i] != tokens::kPad);
      CHECK(g[i] != tokens::kAudio);
      CHECK(!model.is_language_tag(g[i]));
      CHECK(g[i] != tokens::kEos);
    }
    CHECK(greedy_decode(scorer, 5, max_len) == g);
  }
}

TEST_CASE("wider beams never score worse without length normalization") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    XstNetModel<float> model(tiny_model(10), static_cast<std::uint64_t>(100 + trial));
    auto src = random_source(rng, 10, trial % 2 == 0);
    ModelScorer scorer(model, src);
    auto narrow = beam_decode(scorer, 5, 1, 8, 0.0);
    auto wide = beam_decode(scorer, 5, 10, 8, 0.0);
    CHECK(wide.front().normalized >= narrow.front().normalized - 1e-12);
  }
}

TEST_CASE("max_len of one yields only the tag") {
  std::mt19937_64 rng(6);
  XstNetModel<float> model(tiny_model(10), 1);
  auto src = random_source(rng, 10, true);
  ModelScorer scorer(model, src);
  CHECK(greedy_decode(scorer, 4, 1) == std::vector<int>{4});
  CHECK(beam_decode(scorer, 4, 10, 1, 1.0).front().tokens == std::vector<int>{4});
  CHECK(greedy_decode_batch(model, src, 1).front() == std::vector<int>{5});
}

TEST_CASE("batched greedy decoding is independent of batch mates") {
  std::mt19937_64 rng(7);
  XstNetModel<float> model(tiny_model(12), 3);
  for (bool audio : {true, false}) {
    auto batch = random_source(rng, 12, audio, 6);
    auto together = greedy_decode_batch(model, batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Seq2SeqBatch one;
      one.task = batch.task;
      one.frame_dim = batch.frame_dim;
      if (audio) {
        one.frames = {batch.frames[i]};
      } else {
        one.source_tokens = {batch.source_tokens[i]};
        one.source_tags = {batch.source_tags[i]};
      }
      one.targets = {batch.targets[i]};
      one.bos_tags = {batch.bos_tags[i]};
      CHECK(greedy_decode_batch(model, one).front() == together[i]);
      ModelScorer scorer(model, one);
      CHECK(greedy_decode(scorer, 5, default_max_len(scorer.source_length())) == together[i]);
    }
  }
}

TEST_CASE("manifest translation") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "xst_test_infer";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SynthSpec spec;
  spec.n_triples = 20;
  spec.n_ext_pairs = 10;
  spec.n_dev = 6;
  spec.n_test = 6;
  spec.src_vocab_size = 8;
  spec.frame_dim = 4;
  auto corpus = generate_corpus(spec);
  auto vocab = build_vocab(corpus);
  XstNetModel<float> model(tiny_model(vocab.size()), 2);

  write_manifest(dir / "empty.tsv", {});
  DecodeOptions greedy;
  greedy.greedy = true;
  greedy.max_len = 6;
  CHECK(batch_translate(model, dir / "empty.tsv", Task::kST, vocab, greedy, dir / "empty.hyp").empty());
  CHECK(fs::file_size(dir / "empty.hyp") == 0);

  write_manifest(dir / "dev.tsv", corpus.dev);
  auto reversed = corpus.dev;
  std::reverse(reversed.begin(), reversed.end());
  write_manifest(dir / "rev.tsv", reversed);
  for (Task task : {Task::kST, Task::kASR, Task::kMT}) {
    auto fwd = batch_translate(model, dir / "dev.tsv", task, vocab, greedy, dir / "fwd.hyp");
    auto rev = batch_translate(model, dir / "rev.tsv", task, vocab, greedy, dir / "rev.hyp");
    std::reverse(rev.begin(), rev.end());
    CHECK(fwd == rev);
    CHECK(read_lines(dir / "fwd.hyp") == fwd);
    for (const auto& line : fwd) CHECK(line.find('[') == std::string::npos);
  }

  DecodeOptions beam;
  beam.beam_size = 1;
  beam.max_len = 6;
  CHECK(batch_translate(model, dir / "dev.tsv", Task::kST, vocab, beam, dir / "b1.hyp") ==
        batch_translate(model, dir / "dev.tsv", Task::kST, vocab, greedy, dir / "g.hyp"));
}

TEST_CASE("ST and ASR decoding differ only in the decoder tag") {
  SynthSpec spec;
  spec.n_triples = 8;
  spec.n_ext_pairs = 10;
  spec.n_dev = 2;
  spec.n_test = 2;
  spec.src_vocab_size = 8;
  spec.frame_dim = 4;
  auto corpus = generate_corpus(spec);
  auto vocab = build_vocab(corpus);
  XstNetModel<float> model(tiny_model(vocab.size()), 2);
  auto st = project(corpus.train, Task::kST, vocab);
  auto asr = project(corpus.train, Task::kASR, vocab);
  std::vector<std::size_t> all(st.size());
  std::iota(all.begin(), all.end(), 0);
  ForwardTrace st_trace, asr_trace;
  greedy_decode_batch(model, collate(st, all), 3, &st_trace);
  greedy_decode_batch(model, collate(asr, all), 3, &asr_trace);
  CHECK(st_trace.encoder_input == asr_trace.encoder_input);
  REQUIRE(st_trace.decoder_inputs.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(st_trace.decoder_inputs[i].front() == vocab.language_tag("fr"));
    CHECK(asr_trace.decoder_inputs[i].front() == vocab.language_tag("en"));
  }
}
