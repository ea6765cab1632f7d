// Per-task views of the corpus and the batch streams that feed training.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xst/data/corpus.hpp"
#include "xst/data/task.hpp"
#include "xst/data/vocab.hpp"
#include "xst/model/model.hpp"

namespace xst {

struct TaskExample {
  std::string id;
  std::vector<float> frames;     // audio tasks
  std::vector<int> source;       // text tasks, without [eos]
  int source_tag = 0;            // text tasks
  std::vector<int> target;       // ends with [eos]
  int bos_tag = 0;

  bool operator==(const TaskExample&) const = default;
};

struct TaskDataset {
  Task task = Task::kST;
  std::size_t frame_dim = 0;
  std::vector<TaskExample> examples;

  std::size_t size() const { return examples.size(); }
  // Frames for audio tasks, tokens for text tasks.
  std::size_t source_length(std::size_t i) const;
};

// ST: (frames, translation), ASR: (frames, transcript), MT: (transcript,
// translation). The decoder starts from the tag of the output language.
TaskDataset project(const std::vector<TripleExample>& triples, Task task, const Vocabulary& vocab);
TaskDataset project_pairs(const std::vector<TextPair>& pairs, const Vocabulary& vocab);

Seq2SeqBatch collate(const TaskDataset& data, const std::vector<std::size_t>& indices);

// One epoch's batches as index lists: the epoch permutation is cut into
// pools of `pool_batches` batches, each pool is sorted by source length and
// split into batches, and the batch order is shuffled.
std::vector<std::vector<std::size_t>> epoch_batches(const TaskDataset& data, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch, std::size_t pool_batches = 8);

// Endless stream over epochs 0, 1, 2, ...
class BatchStream {
 public:
  BatchStream(const TaskDataset& data, std::size_t batch_size, std::uint64_t seed);

  Seq2SeqBatch next();
  std::vector<std::size_t> next_indices();
  std::uint64_t epoch() const { return epoch_; }
  const TaskDataset& dataset() const { return *data_; }

 private:
  const TaskDataset* data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
};

}  // namespace xst
