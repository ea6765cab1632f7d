#include "xst/data/vocab.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "xst/data/task.hpp"

namespace xst {

std::string language_tag_token(const std::string& code) { return "[" + code + "]"; }

Vocabulary::Vocabulary(const std::vector<std::string>& lang_codes) {
  for (auto name : tokens::kSpecialNames) push(std::string(name));
  for (const auto& code : lang_codes) {
    if (code.empty()) throw std::invalid_argument("empty language code");
    if (index_.count(language_tag_token(code)) != 0) throw std::invalid_argument("duplicate language code '" + code + "'");
    push(language_tag_token(code));
    languages_.push_back(code);
  }
}

int Vocabulary::push(const std::string& token) {
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::add(const std::string& token) {
  if (token.empty()) throw std::invalid_argument("empty token");
  if (token.find_first_of(" \t\n") != std::string::npos) {
    throw std::invalid_argument("token '" + token + "' contains whitespace");
  }
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  return push(token);
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? tokens::kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::language_tag(const std::string& code) const {
  auto it = std::find(languages_.begin(), languages_.end(), code);
  if (it == languages_.end()) throw std::invalid_argument("language '" + code + "' is not registered");
  return tokens::kFirstLanguage + static_cast<int>(it - languages_.begin());
}

bool Vocabulary::is_special(int id) const {
  return id >= 0 && id < tokens::kFirstLanguage + static_cast<int>(languages_.size());
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
  if (!out) throw std::runtime_error("failed writing vocabulary " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw std::runtime_error(where() + "expected token<TAB>id");
    std::string token = line.substr(0, tab);
    std::size_t id = 0;
    const char* first = line.data() + tab + 1;
    const char* last = line.data() + line.size();
    auto res = std::from_chars(first, last, id);
    if (res.ec != std::errc() || res.ptr != last) throw std::runtime_error(where() + "bad id");
    if (id != v.tokens_.size()) throw std::runtime_error(where() + "ids must ascend from 0");
    if (v.index_.count(token) != 0) throw std::runtime_error(where() + "duplicate token '" + token + "'");
    if (id < tokens::kSpecialNames.size()) {
      if (token != tokens::kSpecialNames[id]) throw std::runtime_error(where() + "special token out of place");
    } else if (v.languages_.size() + tokens::kSpecialNames.size() == id && token.size() > 2 && token.front() == '[' &&
               token.back() == ']') {
      v.languages_.push_back(token.substr(1, token.size() - 2));
    }
    v.push(token);
  }
  if (v.tokens_.size() < tokens::kSpecialNames.size()) throw std::runtime_error(path.string() + ": missing special tokens");
  return v;
}

Vocabulary build_vocab(const std::vector<Sentence>& sentences, const std::vector<std::string>& lang_codes) {
  if (sentences.empty()) throw std::invalid_argument("build_vocab: no sentences");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  // std::map is already lexicographic, so a stable sort keeps that order
  // among equal counts.
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v(lang_codes);
  for (const auto& [word, count] : ordered) v.add(word);
  return v;
}

Vocabulary build_vocab(const Corpus& corpus) {
  std::vector<Sentence> sentences;
  std::vector<std::string> langs;
  auto note_lang = [&](const std::string& code) {
    if (std::find(langs.begin(), langs.end(), code) == langs.end()) langs.push_back(code);
  };
  for (const auto& t : corpus.train) {
    note_lang(t.src_lang);
    note_lang(t.tgt_lang);
    sentences.push_back(t.transcript);
    sentences.push_back(t.translation);
  }
  for (const auto& p : corpus.ext) {
    note_lang(p.src_lang);
    note_lang(p.tgt_lang);
    sentences.push_back(p.source);
    sentences.push_back(p.target);
  }
  return build_vocab(sentences, langs);
}

std::vector<int> encode_text(const Sentence& words, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(words.size() + 1);
  for (const auto& w : words) ids.push_back(vocab.id(w));
  ids.push_back(tokens::kEos);
  return ids;
}

std::vector<int> encode_text(const std::string& sentence, const Vocabulary& vocab) {
  return encode_text(split_words(sentence), vocab);
}

std::string decode_text(const std::vector<int>& ids, const Vocabulary& vocab) {
  Sentence words;
  for (int id : ids) {
    if (id == tokens::kEos) break;
    if (id == tokens::kPad) continue;
    words.push_back(vocab.token(id));
  }
  return join_words(words);
}

Sentence split_words(const std::string& sentence) {
  Sentence words;
  std::istringstream in(sentence);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string join_words(const Sentence& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace xst
