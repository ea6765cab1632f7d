#include "xst/data/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace xst {

std::size_t TaskDataset::source_length(std::size_t i) const {
  const auto& e = examples.at(i);
  return source_modality(task) == Modality::kAudio ? e.frames.size() / frame_dim : e.source.size();
}

TaskDataset project(const std::vector<TripleExample>& triples, Task task, const Vocabulary& vocab) {
  if (task == Task::kMTExt) throw std::invalid_argument("MT_EXT comes from text pairs, not triples");
  TaskDataset d;
  d.task = task;
  for (const auto& t : triples) {
    TaskExample e;
    e.id = t.id;
    switch (task) {
      case Task::kST:
        e.frames = t.frames;
        e.target = encode_text(t.translation, vocab);
        e.bos_tag = vocab.language_tag(t.tgt_lang);
        break;
      case Task::kASR:
        e.frames = t.frames;
        e.target = encode_text(t.transcript, vocab);
        e.bos_tag = vocab.language_tag(t.src_lang);
        break;
      default:
        e.source = encode_text(t.transcript, vocab);
        e.source.pop_back();
        e.source_tag = vocab.language_tag(t.src_lang);
        e.target = encode_text(t.translation, vocab);
        e.bos_tag = vocab.language_tag(t.tgt_lang);
        break;
    }
    if (source_modality(task) == Modality::kAudio) {
      if (d.frame_dim == 0) d.frame_dim = t.frame_dim;
      if (t.frame_dim != d.frame_dim) throw std::invalid_argument("utterance '" + t.id + "' has a different frame_dim");
    }
    d.examples.push_back(std::move(e));
  }
  return d;
}

TaskDataset project_pairs(const std::vector<TextPair>& pairs, const Vocabulary& vocab) {
  TaskDataset d;
  d.task = Task::kMTExt;
  for (const auto& p : pairs) {
    TaskExample e;
    e.id = p.id;
    e.source = encode_text(p.source, vocab);
    e.source.pop_back();
    e.source_tag = vocab.language_tag(p.src_lang);
    e.target = encode_text(p.target, vocab);
    e.bos_tag = vocab.language_tag(p.tgt_lang);
    d.examples.push_back(std::move(e));
  }
  return d;
}

Seq2SeqBatch collate(const TaskDataset& data, const std::vector<std::size_t>& indices) {
  Seq2SeqBatch b;
  b.task = data.task;
  const bool audio = source_modality(data.task) == Modality::kAudio;
  if (audio) b.frame_dim = data.frame_dim;
  for (std::size_t i : indices) {
    const auto& e = data.examples.at(i);
    b.ids.push_back(e.id);
    if (audio) {
      b.frames.push_back(e.frames);
    } else {
      b.source_tokens.push_back(e.source);
      b.source_tags.push_back(e.source_tag);
    }
    b.targets.push_back(e.target);
    b.bos_tags.push_back(e.bos_tag);
  }
  return b;
}

std::vector<std::vector<std::size_t>> epoch_batches(const TaskDataset& data, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch, std::size_t pool_batches) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (pool_batches == 0) throw std::invalid_argument("pool_batches must be at least 1");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  const std::size_t pool = batch_size * pool_batches;
  for (std::size_t start = 0; start < order.size(); start += pool) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + pool));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return data.source_length(a) < data.source_length(b); });
    for (auto it = first; it < last; it += static_cast<std::ptrdiff_t>(std::min<std::size_t>(batch_size, last - it))) {
      batches.emplace_back(it, it + static_cast<std::ptrdiff_t>(std::min<std::size_t>(batch_size, last - it)));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

BatchStream::BatchStream(const TaskDataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), seed_(seed) {
  if (data.size() == 0) throw std::invalid_argument(task_name(data.task) + " dataset is empty");
  batches_ = epoch_batches(data, batch_size_, seed_, epoch_);
}

std::vector<std::size_t> BatchStream::next_indices() {
  if (cursor_ == batches_.size()) {
    ++epoch_;
    cursor_ = 0;
    batches_ = epoch_batches(*data_, batch_size_, seed_, epoch_);
  }
  return batches_[cursor_++];
}

Seq2SeqBatch BatchStream::next() { return collate(*data_, next_indices()); }

}  // namespace xst
