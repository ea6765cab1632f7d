#include "xst/infer/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "xst/data/manifest.hpp"
#include "xst/metrics/metrics.hpp"

namespace xst {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool proposable(const XstNetModel<float>& model, int id) {
  return id != tokens::kPad && id != tokens::kAudio && !model.is_language_tag(id);
}

// Log-softmax over the proposable entries of one logits row.
std::vector<double> masked_log_softmax(const XstNetModel<float>& model, const float* logits, std::size_t vocab) {
  double max = kNegInf;
  for (std::size_t v = 0; v < vocab; ++v) {
    if (proposable(model, static_cast<int>(v))) max = std::max(max, static_cast<double>(logits[v]));
  }
  double total = 0.0;
  for (std::size_t v = 0; v < vocab; ++v) {
    if (proposable(model, static_cast<int>(v))) total += std::exp(static_cast<double>(logits[v]) - max);
  }
  const double lse = max + std::log(total);
  std::vector<double> out(vocab, kNegInf);
  for (std::size_t v = 0; v < vocab; ++v) {
    if (proposable(model, static_cast<int>(v))) out[v] = static_cast<double>(logits[v]) - lse;
  }
  return out;
}

SequenceBatch<float> tile_memory(const SequenceBatch<float>& memory, std::size_t copies) {
  if (copies == 1) return memory;
  const auto& shape = memory.values.shape();
  auto src = memory.values.data();
  std::vector<float> data;
  data.reserve(src.size() * copies);
  for (std::size_t c = 0; c < copies; ++c) data.insert(data.end(), src.begin(), src.end());
  return {Tensor<float>(Shape{copies, shape[1], shape[2]}, std::move(data)),
          std::vector<std::size_t>(copies, memory.lengths[0])};
}

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double normalize(double score, std::size_t length, double alpha) {
  return alpha == 0.0 ? score : score / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), alpha);
}

}  // namespace

ModelScorer::ModelScorer(const XstNetModel<float>& model, const Seq2SeqBatch& source, ForwardTrace* trace)
    : model_(model), trace_(trace) {
  if (source.size() != 1) throw std::invalid_argument("ModelScorer needs a single-example batch");
  NoGradScope<float> no_grad;
  ForwardContext ctx;
  ctx.trace = trace_;
  memory_ = model_.encode_source(source, ctx);
}

std::vector<std::vector<double>> ModelScorer::next_log_probs(const std::vector<std::vector<int>>& prefixes) {
  NoGradScope<float> no_grad;
  ForwardContext ctx;
  ctx.trace = trace_;
  auto logits = model_.decode(prefixes, tile_memory(memory_, prefixes.size()), ctx);
  const std::size_t len = logits.dim(1);
  const std::size_t vocab = logits.dim(2);
  auto data = logits.data();
  std::vector<std::vector<double>> out;
  out.reserve(prefixes.size());
  for (std::size_t b = 0; b < prefixes.size(); ++b) {
    const float* row = data.data() + (b * len + prefixes[b].size() - 1) * vocab;
    out.push_back(masked_log_softmax(model_, row, vocab));
  }
  return out;
}

void DecodeOptions::validate() const {
  if (beam_size == 0) throw std::invalid_argument("beam size must be at least 1");
  if (max_len && *max_len == 0) throw std::invalid_argument("max_len must be at least 1");
  if (!(length_penalty >= 0.0)) throw std::invalid_argument("length penalty must be >= 0");
}

std::size_t default_max_len(std::size_t source_length) { return 2 * source_length + 10; }

std::vector<int> greedy_decode(StepScorer& scorer, int bos, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("max_len must be at least 1");
  std::vector<int> out{bos};
  while (out.size() < max_len) {
    const auto lp = scorer.next_log_probs({out})[0];
    const int next = static_cast<int>(argmax_lowest(lp));
    if (next == tokens::kEos) break;
    out.push_back(next);
  }
  return out;
}

std::vector<Hypothesis> beam_decode(StepScorer& scorer, int bos, std::size_t beam_size, std::size_t max_len,
                                    double length_penalty) {
  if (beam_size == 0) throw std::invalid_argument("beam size must be at least 1");
  if (max_len == 0) throw std::invalid_argument("max_len must be at least 1");

  struct Candidate {
    std::vector<int> tokens;
    double score;
    bool eos;
  };
  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tokens != b.tokens) return a.tokens < b.tokens;
    return false;
  };

  std::vector<Candidate> alive{{{bos}, 0.0, false}};
  std::vector<Hypothesis> finished;
  while (!alive.empty() && finished.size() < beam_size && alive.front().tokens.size() < max_len) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& c : alive) prefixes.push_back(c.tokens);
    const auto lps = scorer.next_log_probs(prefixes);
    std::vector<Candidate> expanded;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      for (std::size_t v = 0; v < lps[h].size(); ++v) {
        if (lps[h][v] == kNegInf) continue;
        // [eos] stays on the token list while ranking so ties break by id
        // exactly as in greedy decoding.
        Candidate c{alive[h].tokens, alive[h].score + lps[h][v], static_cast<int>(v) == tokens::kEos};
        c.tokens.push_back(static_cast<int>(v));
        expanded.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(beam_size, expanded.size());
    std::partial_sort(expanded.begin(), expanded.begin() + static_cast<std::ptrdiff_t>(keep), expanded.end(), better);
    alive.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = expanded[i];
      if (c.eos) {
        c.tokens.pop_back();
        const std::size_t len = c.tokens.size();  // generated tokens plus [eos]
        finished.push_back({std::move(c.tokens), c.score, normalize(c.score, len, length_penalty), true});
      } else {
        alive.push_back(std::move(c));
      }
    }
  }
  for (auto& c : alive) {
    const std::size_t len = c.tokens.size() - 1;
    finished.push_back({std::move(c.tokens), c.score, normalize(c.score, len, length_penalty), false});
  }
  std::sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.normalized != b.normalized) return a.normalized > b.normalized;
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
  if (finished.size() > beam_size) finished.resize(beam_size);
  return finished;
}

std::vector<std::vector<int>> greedy_decode_batch(const XstNetModel<float>& model, const Seq2SeqBatch& batch,
                                                  std::optional<std::size_t> max_len, ForwardTrace* trace) {
  const std::size_t n = batch.size();
  if (n == 0) return {};
  if (batch.bos_tags.size() != n) throw std::invalid_argument("greedy_decode_batch: one BOS tag per example required");
  NoGradScope<float> no_grad;
  ForwardContext ctx;
  ctx.trace = trace;
  const auto memory = model.encode_source(batch, ctx);

  std::vector<std::vector<int>> out(n);
  std::vector<std::size_t> limit(n);
  std::vector<char> done(n, 0);
  std::size_t remaining = n;
  for (std::size_t b = 0; b < n; ++b) {
    out[b].push_back(batch.bos_tags[b]);
    limit[b] = max_len ? *max_len : default_max_len(memory.lengths[b] - 1);
    if (limit[b] == 0) throw std::invalid_argument("max_len must be at least 1");
    if (limit[b] == 1) {
      done[b] = 1;
      --remaining;
    }
  }
  // Every prefix has the same length, so finished rows keep being fed their
  // (ignored) outputs rather than padding.
  std::vector<std::vector<int>> prefixes = out;
  const std::size_t vocab = model.config().vocab_size;
  while (remaining > 0) {
    auto logits = model.decode(prefixes, memory, ctx);
    const std::size_t len = logits.dim(1);
    auto data = logits.data();
    for (std::size_t b = 0; b < n; ++b) {
      const float* row = data.data() + (b * len + len - 1) * vocab;
      int best = -1;
      for (std::size_t v = 0; v < vocab; ++v) {
        if (!proposable(model, static_cast<int>(v))) continue;
        if (best < 0 || row[v] > row[best]) best = static_cast<int>(v);
      }
      prefixes[b].push_back(best);
      if (done[b]) continue;
      if (best == tokens::kEos) {
        done[b] = 1;
        --remaining;
        continue;
      }
      out[b].push_back(best);
      if (out[b].size() >= limit[b]) {
        done[b] = 1;
        --remaining;
      }
    }
  }
  return out;
}

std::vector<std::vector<int>> decode_dataset(const XstNetModel<float>& model, const TaskDataset& data,
                                             const DecodeOptions& options, std::size_t batch_size) {
  options.validate();
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  std::vector<std::vector<int>> out;
  out.reserve(data.size());
  if (options.greedy) {
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
      auto hyps = greedy_decode_batch(model, collate(data, idx), options.max_len);
      for (auto& h : hyps) out.push_back(std::move(h));
    }
    return out;
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto batch = collate(data, {i});
    ModelScorer scorer(model, batch);
    const std::size_t max_len = options.max_len ? *options.max_len : default_max_len(scorer.source_length());
    auto best = beam_decode(scorer, batch.bos_tags[0], options.beam_size, max_len, options.length_penalty);
    out.push_back(std::move(best.front().tokens));
  }
  return out;
}

std::string hypothesis_text(const std::vector<int>& tokens, const Vocabulary& vocab) {
  if (tokens.empty()) return {};
  return decode_text(std::vector<int>(tokens.begin() + 1, tokens.end()), vocab);
}

std::vector<std::string> batch_translate(const XstNetModel<float>& model, const std::filesystem::path& manifest,
                                         Task task, const Vocabulary& vocab, const DecodeOptions& options,
                                         const std::filesystem::path& out) {
  const auto triples = read_manifest(manifest);
  std::vector<std::string> lines;
  if (!triples.empty()) {
    const auto data = project(triples, task, vocab);
    std::vector<std::vector<int>> hyps;
    try {
      hyps = decode_dataset(model, data, options);
    } catch (const std::exception& e) {
      throw std::runtime_error("decoding " + manifest.string() + ": " + e.what());
    }
    for (const auto& h : hyps) lines.push_back(hypothesis_text(h, vocab));
  }
  write_lines(out, lines);
  return lines;
}

}  // namespace xst
