// Greedy and beam decoding. The decoder is primed with the output-language
// tag, which is what selects transcription versus translation.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "xst/data/dataset.hpp"
#include "xst/data/vocab.hpp"
#include "xst/model/model.hpp"

namespace xst {

// Next-token log-probabilities for a set of prefixes decoded against one
// fixed source. Tokens the scorer rules out get -infinity.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) = 0;
};

// Scores with a trained model for a single-example source batch. Padding,
// [audio] and language tags are never proposed; the softmax is taken over
// the remaining tokens.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const XstNetModel<float>& model, const Seq2SeqBatch& source, ForwardTrace* trace = nullptr);

  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override;
  // Encoder length excluding the leading tag.
  std::size_t source_length() const { return memory_.lengths[0] - 1; }

 private:
  const XstNetModel<float>& model_;
  SequenceBatch<float> memory_;
  ForwardTrace* trace_;
};

struct Hypothesis {
  std::vector<int> tokens;  // leading tag, no [eos]
  double score = 0.0;       // sum of natural-log probabilities
  double normalized = 0.0;  // score / length^alpha
  bool finished = false;    // ended with [eos] rather than max_len
};

struct DecodeOptions {
  std::size_t beam_size = 10;
  std::optional<std::size_t> max_len;  // default 2 * source_length + 10
  double length_penalty = 1.0;
  bool greedy = false;

  void validate() const;
};

std::size_t default_max_len(std::size_t source_length);

// Argmax at every step (ties to the lowest id); stops at [eos] or when the
// output, counting the tag, reaches max_len tokens.
std::vector<int> greedy_decode(StepScorer& scorer, int bos, std::size_t max_len);

// Expands every live hypothesis, keeps the beam_size best candidates by
// (score, then token ids lexicographically), retires those ending in [eos],
// and stops once beam_size hypotheses have finished, none are left, or
// max_len is reached. Returns up to beam_size hypotheses ordered by
// normalized score, where length counts generated tokens including [eos].
std::vector<Hypothesis> beam_decode(StepScorer& scorer, int bos, std::size_t beam_size, std::size_t max_len,
                                    double length_penalty);

// Greedy decoding of a whole batch in lock step; one output per example.
std::vector<std::vector<int>> greedy_decode_batch(const XstNetModel<float>& model, const Seq2SeqBatch& batch,
                                                  std::optional<std::size_t> max_len = std::nullopt,
                                                  ForwardTrace* trace = nullptr);

// Decodes every example of `data` in order (greedy in batches of
// `batch_size`, or beam search one example at a time).
std::vector<std::vector<int>> decode_dataset(const XstNetModel<float>& model, const TaskDataset& data,
                                             const DecodeOptions& options, std::size_t batch_size = 64);

// Detokenized output: drops the leading tag and stops at [eos].
std::string hypothesis_text(const std::vector<int>& tokens, const Vocabulary& vocab);

// Decodes a manifest for `task` and writes one line per row, in order.
std::vector<std::string> batch_translate(const XstNetModel<float>& model, const std::filesystem::path& manifest,
                                         Task task, const Vocabulary& vocab, const DecodeOptions& options,
                                         const std::filesystem::path& out);

}  // namespace xst
