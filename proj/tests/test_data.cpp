#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "xst/data/dataset.hpp"
#include "xst/data/manifest.hpp"
#include "xst/data/vocab.hpp"

using namespace xst;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.seed = 9;
  s.n_triples = 60;
  s.n_ext_pairs = 600;
  s.n_dev = 10;
  s.n_test = 10;
  s.src_vocab_size = 12;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("xst_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("corpus generation is deterministic and seed dependent") {
  const auto a = generate_corpus(small_spec());
  const auto b = generate_corpus(small_spec());
  CHECK(a == b);
  auto d1 = scratch_dir("det1");
  auto d2 = scratch_dir("det2");
  save_corpus(d1, a);
  save_corpus(d2, b);
  for (const char* f : {"train.tsv", "train.frames", "dev.frames", "ext.tsv"}) CHECK(read_file(d1 / f) == read_file(d2 / f));

  SynthSpec other = small_spec();
  other.seed = 10;
  CHECK(!(generate_corpus(other) == a));
}

TEST_CASE("corpus shape and default sizes") {
  const auto spec = small_spec();
  const auto c = generate_corpus(spec);
  CHECK(c.train.size() == 60);
  CHECK(c.dev.size() == 10);
  CHECK(c.test.size() == 10);
  CHECK(c.ext.size() == 600);
  const SynthSpec defaults;
  CHECK(defaults.n_ext_pairs >= 10 * defaults.n_triples);

  std::set<std::string> ids;
  for (const auto& t : c.train) ids.insert(t.id);
  for (const auto& t : c.dev) ids.insert(t.id);
  for (const auto& t : c.test) ids.insert(t.id);
  for (const auto& p : c.ext) {
    CHECK(ids.count(p.id) == 0);
    CHECK(p.source.size() >= spec.len_min);
    CHECK(p.source.size() <= spec.len_max + spec.ext_extra_len);
  }
  CHECK(ids.size() == 80);
  for (const auto& t : c.train) {
    CHECK(t.transcript.size() >= spec.len_min);
    CHECK(t.transcript.size() <= spec.len_max);
    CHECK(t.translation.size() == t.transcript.size());
  }
}

TEST_CASE("translations invert through the dictionary") {
  const auto spec = small_spec();
  const auto lex = make_lexicon(spec);
  std::set<std::string> src(lex.src_words.begin(), lex.src_words.end());
  std::set<std::string> tgt(lex.tgt_words.begin(), lex.tgt_words.end());
  CHECK(src.size() == spec.src_vocab_size);
  CHECK(tgt.size() == spec.src_vocab_size);
  for (const auto& w : src) CHECK(tgt.count(w) == 0);

  const auto c = generate_corpus(spec);
  // Independent inverse: map target words back by position in the lists.
  std::map<std::string, std::string> inverse;
  for (std::size_t i = 0; i < lex.src_words.size(); ++i) inverse[lex.tgt_words[i]] = lex.src_words[i];
  for (const auto& t : c.train) {
    Sentence back;
    for (const auto& w : t.translation) back.push_back(inverse.at(w));
    std::reverse(back.begin(), back.end());
    CHECK(back == t.transcript);
    CHECK(lex.back_translate(t.translation) == t.transcript);
  }
  for (const auto& p : c.ext) CHECK(lex.back_translate(p.target) == p.source);
}

TEST_CASE("noise-free audio is the word prototypes") {
  SynthSpec spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.frames_min = spec.frames_max = 1;
  const auto c = generate_corpus(spec);
  const auto lex = make_lexicon(spec);
  const auto protos = word_prototypes(spec);
  for (const auto& t : c.train) {
    REQUIRE(t.n_frames() == t.transcript.size());
    for (std::size_t i = 0; i < t.transcript.size(); ++i) {
      const auto w = std::find(lex.src_words.begin(), lex.src_words.end(), t.transcript[i]) - lex.src_words.begin();
      const auto& p = protos[static_cast<std::size_t>(w)];
      CHECK(std::equal(p.begin(), p.end(), t.frames.begin() + static_cast<std::ptrdiff_t>(i * spec.frame_dim)));
    }
  }
}

TEST_CASE("frame count law") {
  SynthSpec spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.frames_min = 2;
  spec.frames_max = 4;
  const auto c = generate_corpus(spec);
  const auto lex = make_lexicon(spec);
  const auto protos = word_prototypes(spec);
  // The noise-free frames must split into consecutive runs, one per word,
  // each 2..4 copies of that word's prototype. Checked by dynamic
  // programming over split points.
  for (const auto& t : c.train) {
    auto frame_is = [&](std::size_t f, const std::string& word) {
      const auto w = static_cast<std::size_t>(std::find(lex.src_words.begin(), lex.src_words.end(), word) - lex.src_words.begin());
      return std::equal(protos[w].begin(), protos[w].end(), t.frames.begin() + static_cast<std::ptrdiff_t>(f * spec.frame_dim));
    };
    const std::size_t n = t.n_frames();
    std::vector<char> reach(n + 1, 0);
    reach[0] = 1;
    for (const auto& word : t.transcript) {
      std::vector<char> next(n + 1, 0);
      for (std::size_t start = 0; start <= n; ++start) {
        if (!reach[start]) continue;
        for (std::size_t k = 1; k <= spec.frames_max && start + k <= n; ++k) {
          if (!frame_is(start + k - 1, word)) break;
          if (k >= spec.frames_min) next[start + k] = 1;
        }
      }
      reach = next;
    }
    CHECK(reach[n]);
  }
}

TEST_CASE("vocabulary ordering and specials") {
  auto v = build_vocab({{"a", "a", "b"}}, {"en", "fr"});
  CHECK(v.token(0) == "[pad]");
  CHECK(v.token(1) == "[eos]");
  CHECK(v.token(2) == "[unk]");
  CHECK(v.token(3) == "[audio]");
  CHECK(v.token(4) == "[en]");
  CHECK(v.token(5) == "[fr]");
  CHECK(v.token(6) == "a");
  CHECK(v.token(7) == "b");
  CHECK(v.language_tag("fr") == 5);
  CHECK_THROWS_AS(v.language_tag("de"), std::invalid_argument);

  auto tie = build_vocab({{"b", "a"}}, {"en"});
  CHECK(tie.token(5) == "a");
  CHECK(tie.token(6) == "b");

  // Brute-force check on a generated corpus: each distinct word appears once.
  const auto c = generate_corpus(small_spec());
  const auto joint = build_vocab(c);
  std::map<std::string, std::size_t> counts;
  for (const auto& t : c.train) {
    for (const auto& w : t.transcript) ++counts[w];
    for (const auto& w : t.translation) ++counts[w];
  }
  for (const auto& p : c.ext) {
    for (const auto& w : p.source) ++counts[w];
    for (const auto& w : p.target) ++counts[w];
  }
  CHECK(joint.size() == 4 + 2 + counts.size());
  for (std::size_t i = 6; i + 1 < joint.size(); ++i) {
    const auto& a = joint.token(static_cast<int>(i));
    const auto& b = joint.token(static_cast<int>(i + 1));
    CHECK((counts[a] > counts[b] || (counts[a] == counts[b] && a < b)));
  }
}

TEST_CASE("text encoding") {
  auto v = build_vocab({{"x", "y", "z"}}, {"en"});
  CHECK(encode_text("", v) == std::vector<int>{tokens::kEos});
  CHECK(encode_text("x q", v) == std::vector<int>{v.id("x"), tokens::kUnk, tokens::kEos});
  CHECK(decode_text(encode_text("z y x", v), v) == "z y x");
  CHECK(decode_text({v.id("x"), tokens::kEos, v.id("y")}, v) == "x");
}

TEST_CASE("vocabulary file round trip") {
  const auto dir = scratch_dir("vocab");
  const auto v = build_vocab(generate_corpus(small_spec()));
  v.save(dir / "vocab.txt");
  const auto back = Vocabulary::load(dir / "vocab.txt");
  CHECK(back == v);
  CHECK(back.languages() == std::vector<std::string>{"en", "fr"});
  CHECK(read_file(dir / "vocab.txt").substr(0, 9) == "[pad]\t0\n[");

  std::ofstream(dir / "bad.txt") << "[pad]\t0\n[eos]\t2\n";
  CHECK_THROWS(Vocabulary::load(dir / "bad.txt"));
}

TEST_CASE("manifest round trip and errors") {
  const auto dir = scratch_dir("manifest");
  SynthSpec spec = small_spec();
  spec.n_triples = 100;
  const auto c = generate_corpus(spec);
  write_manifest(dir / "train.tsv", c.train);
  CHECK(read_manifest(dir / "train.tsv") == c.train);
  CHECK(read_file(dir / "train.frames").substr(0, 8) == std::string("XSTFRM1\0", 8));

  write_manifest(dir / "empty.tsv", {});
  CHECK(read_manifest(dir / "empty.tsv").empty());

  // Drop a column from the third data row.
  {
    std::ifstream in(dir / "train.tsv");
    std::ofstream out(dir / "short.tsv");
    std::string line;
    for (int i = 0; std::getline(in, line); ++i) {
      if (i == 3) line = line.substr(0, line.rfind('\t'));
      out << line << '\n';
    }
  }
  fs::copy_file(dir / "train.frames", dir / "short.frames");
  try {
    read_manifest(dir / "short.tsv");
    FAIL("expected a manifest error");
  } catch (const ManifestError& e) {
    CHECK(std::string(e.what()).find("short.tsv:4:") != std::string::npos);
  }

  // Claim one extra frame for the first utterance.
  {
    std::ifstream in(dir / "train.tsv");
    std::ofstream out(dir / "count.tsv");
    std::string line;
    for (int i = 0; std::getline(in, line); ++i) {
      if (i == 1) {
        auto cols_start = line.find('\t', line.find('\t') + 1) + 1;
        auto cols_end = line.find('\t', cols_start);
        const int n = std::stoi(line.substr(cols_start, cols_end - cols_start));
        line = line.substr(0, cols_start) + std::to_string(n + 1) + line.substr(cols_end);
      }
      out << line << '\n';
    }
  }
  fs::copy_file(dir / "train.frames", dir / "count.frames");
  try {
    read_manifest(dir / "count.tsv");
    FAIL("expected a manifest error");
  } catch (const ManifestError& e) {
    CHECK(std::string(e.what()).find(c.train[0].id) != std::string::npos);
  }

  fs::remove(dir / "train.frames");
  CHECK_THROWS_AS(read_manifest(dir / "train.tsv"), ManifestError);
}

TEST_CASE("corpus directory round trip") {
  const auto dir = scratch_dir("corpus");
  const auto c = generate_corpus(small_spec());
  save_corpus(dir, c);
  CHECK(load_corpus(dir) == c);
}

TEST_CASE("task projections agree with the triples") {
  const auto c = generate_corpus(small_spec());
  const auto v = build_vocab(c);
  const auto st = project(c.train, Task::kST, v);
  const auto asr = project(c.train, Task::kASR, v);
  const auto mt = project(c.train, Task::kMT, v);
  const auto ext = project_pairs(c.ext, v);
  REQUIRE(st.size() == c.train.size());
  CHECK(st.frame_dim == 16);
  for (std::size_t i = 0; i < c.train.size(); ++i) {
    const auto& t = c.train[i];
    CHECK(st.examples[i].id == t.id);
    CHECK(st.examples[i].frames == t.frames);
    CHECK(decode_text(st.examples[i].target, v) == join_words(t.translation));
    CHECK(st.examples[i].bos_tag == v.language_tag("fr"));
    CHECK(asr.examples[i].frames == t.frames);
    CHECK(decode_text(asr.examples[i].target, v) == join_words(t.transcript));
    CHECK(asr.examples[i].bos_tag == v.language_tag("en"));
    CHECK(decode_text(mt.examples[i].source, v) == join_words(t.transcript));
    CHECK(mt.examples[i].source.back() != tokens::kEos);
    CHECK(mt.examples[i].target == st.examples[i].target);
    CHECK(mt.examples[i].source_tag == v.language_tag("en"));
  }
  CHECK(ext.task == Task::kMTExt);
  CHECK(ext.size() == c.ext.size());
  CHECK_THROWS_AS(project(c.train, Task::kMTExt, v), std::invalid_argument);
}

TEST_CASE("batching covers each epoch exactly once") {
  const auto c = generate_corpus(small_spec());
  const auto v = build_vocab(c);
  const auto st = project(c.train, Task::kST, v);

  auto singles = epoch_batches(st, 1, 3, 0);
  CHECK(singles.size() == st.size());
  for (const auto& b : singles) CHECK(b.size() == 1);

  for (std::size_t bs : {1u, 7u, 32u, 100u}) {
    for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
      auto batches = epoch_batches(st, bs, 3, epoch);
      std::vector<std::size_t> all;
      for (const auto& b : batches) {
        CHECK(b.size() <= bs);
        all.insert(all.end(), b.begin(), b.end());
      }
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> expected(st.size());
      std::iota(expected.begin(), expected.end(), 0);
      CHECK(all == expected);
    }
  }
  CHECK(epoch_batches(st, 8, 3, 0) == epoch_batches(st, 8, 3, 0));
  CHECK(epoch_batches(st, 8, 3, 0) != epoch_batches(st, 8, 4, 0));
  CHECK(epoch_batches(st, 8, 3, 0) != epoch_batches(st, 8, 3, 1));
  CHECK_THROWS_AS(epoch_batches(st, 0, 3, 0), std::invalid_argument);
}

TEST_CASE("batch stream walks epochs and carries the task") {
  const auto c = generate_corpus(small_spec());
  const auto v = build_vocab(c);
  const auto mt = project(c.train, Task::kMT, v);
  BatchStream a(mt, 16, 5), b(mt, 16, 5);
  std::multiset<std::string> seen;
  const std::size_t per_epoch = epoch_batches(mt, 16, 5, 0).size();
  for (std::size_t i = 0; i < per_epoch; ++i) {
    auto batch = a.next();
    auto other = b.next();
    CHECK(batch.ids == other.ids);
    CHECK(batch.task == Task::kMT);
    CHECK(batch.frames.empty());
    CHECK(batch.source_tokens.size() == batch.size());
    seen.insert(batch.ids.begin(), batch.ids.end());
  }
  CHECK(seen.size() == mt.size());
  CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == mt.size());
  CHECK(a.epoch() == 0);
  a.next();
  CHECK(a.epoch() == 1);

  TaskDataset empty;
  CHECK_THROWS_AS(BatchStream(empty, 4, 1), std::invalid_argument);
}
