// Synthetic speech/transcript/translation triples plus a larger text-only
// parallel set drawn from the same dictionary.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace xst {

using Sentence = std::vector<std::string>;

struct TripleExample {
  std::string id;
  std::size_t frame_dim = 0;
  std::vector<float> frames;  // n_frames * frame_dim, row-major
  Sentence transcript;
  Sentence translation;
  std::string src_lang;
  std::string tgt_lang;

  std::size_t n_frames() const { return frame_dim == 0 ? 0 : frames.size() / frame_dim; }
  bool operator==(const TripleExample&) const = default;
};

struct TextPair {
  std::string id;
  std::string src_lang;
  std::string tgt_lang;
  Sentence source;
  Sentence target;
  bool operator==(const TextPair&) const = default;
};

struct Corpus {
  std::vector<TripleExample> train, dev, test;
  std::vector<TextPair> ext;
  bool operator==(const Corpus&) const = default;
};

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t n_triples = 1000;
  std::size_t n_ext_pairs = 20000;
  std::size_t src_vocab_size = 40;
  std::size_t len_min = 3;
  std::size_t len_max = 8;
  // Text-only pairs run up to len_max + ext_extra_len words.
  std::size_t ext_extra_len = 4;
  // At least one 4x-subsampled encoder position per word.
  std::size_t frames_min = 5;
  std::size_t frames_max = 7;
  std::size_t frame_dim = 16;
  double noise_sigma = 0.3;
  std::size_t n_dev = 200;
  std::size_t n_test = 200;
  std::string src_lang = "en";
  std::string tgt_lang = "fr";

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static SynthSpec from_map(const std::map<std::string, std::string>& values);
};

// Word lists and the bijective dictionary behind a spec. Source and target
// words use disjoint consonant sets so the joint vocabulary has no overlap.
struct Lexicon {
  std::vector<std::string> src_words;
  std::vector<std::string> tgt_words;  // tgt_words[i] translates src_words[i]

  // Word-by-word dictionary lookup followed by reversal.
  Sentence translate(const Sentence& source) const;
  // Inverse of translate.
  Sentence back_translate(const Sentence& target) const;
};

Lexicon make_lexicon(const SynthSpec& spec);

// Prototype frame (frame_dim values) of each source word, indexed like
// Lexicon::src_words.
std::vector<std::vector<float>> word_prototypes(const SynthSpec& spec);

Corpus generate_corpus(const SynthSpec& spec);

}  // namespace xst
