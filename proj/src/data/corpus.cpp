#include "xst/data/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace xst {

namespace {

// Separate streams so changing one SynthSpec field does not reshuffle the
// others.
enum Stream : std::uint64_t { kLexicon = 1, kPrototypes = 2, kTriples = 3, kExt = 4 };

std::mt19937_64 stream_rng(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

std::vector<std::string> two_syllable_words(std::string_view consonants, std::string_view vowels) {
  std::vector<std::string> syllables;
  for (char c : consonants)
    for (char v : vowels) syllables.push_back(std::string{c, v});
  std::vector<std::string> words;
  for (const auto& a : syllables)
    for (const auto& b : syllables) words.push_back(a + b);
  return words;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::string make_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%06zu", prefix, i);
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("synth spec: " + what); };
  if (n_triples == 0 || n_dev == 0 || n_test == 0) fail("n_triples, n_dev and n_test must be at least 1");
  if (n_ext_pairs == 0) fail("n_ext_pairs must be at least 1");
  if (src_vocab_size == 0) fail("src_vocab_size must be at least 1");
  if (src_vocab_size > 625) fail("src_vocab_size is limited to 625 words");
  if (len_min == 0 || len_min > len_max) fail("need 1 <= len_min <= len_max");
  if (frames_min == 0 || frames_min > frames_max) fail("need 1 <= frames_min <= frames_max");
  if (frame_dim == 0) fail("frame_dim must be at least 1");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (src_lang.empty() || tgt_lang.empty() || src_lang == tgt_lang) fail("need two distinct language codes");
}

std::map<std::string, std::string> SynthSpec::to_map() const {
  return {
      {"seed", std::to_string(seed)},
      {"n_triples", std::to_string(n_triples)},
      {"n_ext_pairs", std::to_string(n_ext_pairs)},
      {"src_vocab_size", std::to_string(src_vocab_size)},
      {"len_min", std::to_string(len_min)},
      {"len_max", std::to_string(len_max)},
      {"ext_extra_len", std::to_string(ext_extra_len)},
      {"frames_min", std::to_string(frames_min)},
      {"frames_max", std::to_string(frames_max)},
      {"frame_dim", std::to_string(frame_dim)},
      {"noise_sigma", format_double(noise_sigma)},
      {"n_dev", std::to_string(n_dev)},
      {"n_test", std::to_string(n_test)},
      {"src_lang", src_lang},
      {"tgt_lang", tgt_lang},
  };
}

SynthSpec SynthSpec::from_map(const std::map<std::string, std::string>& m) {
  SynthSpec s;
  auto get_size = [&](const char* key, auto& field) {
    auto it = m.find(key);
    if (it == m.end()) return;
    const auto& v = it->second;
    auto res = std::from_chars(v.data(), v.data() + v.size(), field);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      throw std::invalid_argument(std::string("synth spec: bad integer for ") + key + ": '" + v + "'");
    }
  };
  get_size("seed", s.seed);
  get_size("n_triples", s.n_triples);
  get_size("n_ext_pairs", s.n_ext_pairs);
  get_size("src_vocab_size", s.src_vocab_size);
  get_size("len_min", s.len_min);
  get_size("len_max", s.len_max);
  get_size("ext_extra_len", s.ext_extra_len);
  get_size("frames_min", s.frames_min);
  get_size("frames_max", s.frames_max);
  get_size("frame_dim", s.frame_dim);
  get_size("n_dev", s.n_dev);
  get_size("n_test", s.n_test);
  if (auto it = m.find("noise_sigma"); it != m.end()) {
    const auto& v = it->second;
    auto res = std::from_chars(v.data(), v.data() + v.size(), s.noise_sigma);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      throw std::invalid_argument("synth spec: bad number for noise_sigma: '" + v + "'");
    }
  }
  if (auto it = m.find("src_lang"); it != m.end()) s.src_lang = it->second;
  if (auto it = m.find("tgt_lang"); it != m.end()) s.tgt_lang = it->second;
  return s;
}

Sentence Lexicon::translate(const Sentence& source) const {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < src_words.size(); ++i) index.emplace(src_words[i], i);
  Sentence out;
  out.reserve(source.size());
  for (auto it = source.rbegin(); it != source.rend(); ++it) {
    auto found = index.find(*it);
    if (found == index.end()) throw std::out_of_range("word '" + *it + "' is not in the source lexicon");
    out.push_back(tgt_words[found->second]);
  }
  return out;
}

Sentence Lexicon::back_translate(const Sentence& target) const {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < tgt_words.size(); ++i) index.emplace(tgt_words[i], i);
  Sentence out;
  out.reserve(target.size());
  for (auto it = target.rbegin(); it != target.rend(); ++it) {
    auto found = index.find(*it);
    if (found == index.end()) throw std::out_of_range("word '" + *it + "' is not in the target lexicon");
    out.push_back(src_words[found->second]);
  }
  return out;
}

Lexicon make_lexicon(const SynthSpec& spec) {
  spec.validate();
  auto rng = stream_rng(spec.seed, kLexicon);
  auto src_pool = two_syllable_words("bdgkm", "aeiou");
  auto tgt_pool = two_syllable_words("prstv", "aeiou");
  std::shuffle(src_pool.begin(), src_pool.end(), rng);
  std::shuffle(tgt_pool.begin(), tgt_pool.end(), rng);
  Lexicon lex;
  lex.src_words.assign(src_pool.begin(), src_pool.begin() + static_cast<std::ptrdiff_t>(spec.src_vocab_size));
  lex.tgt_words.assign(tgt_pool.begin(), tgt_pool.begin() + static_cast<std::ptrdiff_t>(spec.src_vocab_size));
  return lex;
}

std::vector<std::vector<float>> word_prototypes(const SynthSpec& spec) {
  auto rng = stream_rng(spec.seed, kPrototypes);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<float>> protos(spec.src_vocab_size, std::vector<float>(spec.frame_dim));
  for (auto& p : protos)
    for (float& v : p) v = static_cast<float>(unit(rng));
  return protos;
}

Corpus generate_corpus(const SynthSpec& spec) {
  spec.validate();
  const Lexicon lex = make_lexicon(spec);
  const auto protos = word_prototypes(spec);

  auto rng = stream_rng(spec.seed, kTriples);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto make_triple = [&](const std::string& id) {
    TripleExample t;
    t.id = id;
    t.frame_dim = spec.frame_dim;
    t.src_lang = spec.src_lang;
    t.tgt_lang = spec.tgt_lang;
    const std::size_t len = uniform_index(rng, spec.len_min, spec.len_max);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t w = uniform_index(rng, 0, lex.src_words.size() - 1);
      t.transcript.push_back(lex.src_words[w]);
      const std::size_t k = uniform_index(rng, spec.frames_min, spec.frames_max);
      for (std::size_t f = 0; f < k; ++f) {
        for (float p : protos[w]) {
          // Draw even when sigma is zero so the stream does not depend on it.
          const double n = noise(rng);
          t.frames.push_back(static_cast<float>(p + spec.noise_sigma * n));
        }
      }
    }
    t.translation = lex.translate(t.transcript);
    return t;
  };

  Corpus c;
  for (std::size_t i = 0; i < spec.n_triples; ++i) c.train.push_back(make_triple(make_id("train", i)));
  for (std::size_t i = 0; i < spec.n_dev; ++i) c.dev.push_back(make_triple(make_id("dev", i)));
  for (std::size_t i = 0; i < spec.n_test; ++i) c.test.push_back(make_triple(make_id("test", i)));

  auto ext_rng = stream_rng(spec.seed, kExt);
  for (std::size_t i = 0; i < spec.n_ext_pairs; ++i) {
    TextPair p;
    p.id = make_id("ext", i);
    p.src_lang = spec.src_lang;
    p.tgt_lang = spec.tgt_lang;
    const std::size_t len = uniform_index(ext_rng, spec.len_min, spec.len_max + spec.ext_extra_len);
    for (std::size_t j = 0; j < len; ++j) {
      p.source.push_back(lex.src_words[uniform_index(ext_rng, 0, lex.src_words.size() - 1)]);
    }
    p.target = lex.translate(p.source);
    c.ext.push_back(std::move(p));
  }
  return c;
}

}  // namespace xst
