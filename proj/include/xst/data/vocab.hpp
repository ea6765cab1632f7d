#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "xst/data/corpus.hpp"

namespace xst {

// Joint token table: [pad] [eos] [unk] [audio], one "[code]" tag per
// language in registration order, then content tokens.
class Vocabulary {
 public:
  explicit Vocabulary(const std::vector<std::string>& lang_codes);

  // Appends a content token (no-op if present); returns its id.
  int add(const std::string& token);

  // Id of `token`, or [unk] when absent.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  int language_tag(const std::string& code) const;
  const std::vector<std::string>& languages() const { return languages_; }
  std::size_t n_languages() const { return languages_.size(); }
  bool is_special(int id) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_ && languages_ == other.languages_; }

 private:
  Vocabulary() = default;
  int push(const std::string& token);

  std::vector<std::string> tokens_;
  std::vector<std::string> languages_;
  std::unordered_map<std::string, int> index_;
};

std::string language_tag_token(const std::string& code);

// Content tokens by descending frequency, ties in lexicographic order.
Vocabulary build_vocab(const std::vector<Sentence>& sentences, const std::vector<std::string>& lang_codes);
// Joint vocabulary over training transcripts, translations and text pairs.
Vocabulary build_vocab(const Corpus& corpus);

// Token ids followed by [eos]; unknown words map to [unk].
std::vector<int> encode_text(const Sentence& words, const Vocabulary& vocab);
std::vector<int> encode_text(const std::string& sentence, const Vocabulary& vocab);
// Joins tokens with single spaces, stopping at the first [eos] and skipping
// [pad].
std::string decode_text(const std::vector<int>& ids, const Vocabulary& vocab);

Sentence split_words(const std::string& sentence);
std::string join_words(const Sentence& words);

}  // namespace xst
