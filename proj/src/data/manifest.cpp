#include "xst/data/manifest.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <string_view>

#include "util/binary_io.hpp"
#include "xst/data/vocab.hpp"

namespace xst {

namespace {

constexpr char kFramesMagic[8] = {'X', 'S', 'T', 'F', 'R', 'M', '1', '\0'};
constexpr std::string_view kManifestHeader = "id\tframes_file\tn_frames\tsrc_lang\ttgt_lang\ttranscript\ttranslation";
constexpr std::string_view kPairsHeader = "id\tsrc_lang\ttgt_lang\tsource\ttarget";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

void check_field(const std::string& value, const std::string& what) {
  if (value.find_first_of("\t\n") != std::string::npos) throw ManifestError(what + " contains a tab or newline");
}

struct FrameRecord {
  std::size_t n_frames = 0;
  std::size_t frame_dim = 0;
  std::vector<float> data;
};

std::map<std::string, FrameRecord> read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("missing frames file " + path.string());
  std::map<std::string, FrameRecord> records;
  try {
    char magic[8];
    binio::read_exact(in, magic, 8, "frames magic");
    if (!std::equal(magic, magic + 8, kFramesMagic)) throw ManifestError("bad magic in frames file " + path.string());
    while (in.peek() != std::char_traits<char>::eof()) {
      std::string id = binio::read_string(in, "utterance id");
      FrameRecord r;
      r.n_frames = binio::read_u32(in, "n_frames");
      r.frame_dim = binio::read_u32(in, "frame_dim");
      r.data = binio::read_floats(in, r.n_frames * r.frame_dim, "frame data");
      if (!records.emplace(id, std::move(r)).second) throw ManifestError("duplicate utterance '" + id + "' in " + path.string());
    }
  } catch (const binio::FormatError& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  return records;
}

std::filesystem::path sidecar_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".frames");
  return p;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const std::vector<TripleExample>& triples) {
  const auto frames_path = sidecar_path(path);
  std::ofstream tsv(path, std::ios::binary);
  std::ofstream bin(frames_path, std::ios::binary);
  if (!tsv || !bin) throw ManifestError("cannot write manifest " + path.string());
  bin.write(kFramesMagic, 8);
  tsv << kManifestHeader << '\n';
  const std::string frames_name = frames_path.filename().string();
  for (const auto& t : triples) {
    if (t.frame_dim == 0 || t.frames.empty() || t.frames.size() % t.frame_dim != 0) {
      throw ManifestError("utterance '" + t.id + "' has no whole frames");
    }
    for (const auto* field : {&t.id, &t.src_lang, &t.tgt_lang}) check_field(*field, "field of '" + t.id + "'");
    const std::string transcript = join_words(t.transcript);
    const std::string translation = join_words(t.translation);
    check_field(transcript, "transcript of '" + t.id + "'");
    check_field(translation, "translation of '" + t.id + "'");
    tsv << t.id << '\t' << frames_name << '\t' << t.n_frames() << '\t' << t.src_lang << '\t' << t.tgt_lang << '\t'
        << transcript << '\t' << translation << '\n';
    binio::write_string(bin, t.id);
    binio::write_u32(bin, static_cast<std::uint32_t>(t.n_frames()));
    binio::write_u32(bin, static_cast<std::uint32_t>(t.frame_dim));
    binio::write_floats(bin, t.frames.data(), t.frames.size());
  }
  if (!tsv || !bin) throw ManifestError("failed writing manifest " + path.string());
}

std::vector<TripleExample> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot read manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw ManifestError(path.string() + ":1: bad manifest header");

  std::map<std::filesystem::path, std::map<std::string, FrameRecord>> sidecars;
  std::vector<TripleExample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
    auto cols = split_tabs(line);
    if (cols.size() != 7) {
      throw ManifestError(where() + "expected 7 columns, found " + std::to_string(cols.size()));
    }
    TripleExample t;
    t.id = cols[0];
    if (t.id.empty()) throw ManifestError(where() + "empty id");
    std::size_t n_frames = 0;
    auto res = std::from_chars(cols[2].data(), cols[2].data() + cols[2].size(), n_frames);
    if (res.ec != std::errc() || res.ptr != cols[2].data() + cols[2].size() || n_frames == 0) {
      throw ManifestError(where() + "bad n_frames '" + cols[2] + "'");
    }
    t.src_lang = cols[3];
    t.tgt_lang = cols[4];
    t.transcript = split_words(cols[5]);
    t.translation = split_words(cols[6]);
    if (t.transcript.empty() || t.translation.empty()) throw ManifestError(where() + "empty transcript or translation");

    const auto frames_path = path.parent_path() / cols[1];
    auto sc = sidecars.find(frames_path);
    if (sc == sidecars.end()) sc = sidecars.emplace(frames_path, read_sidecar(frames_path)).first;
    auto rec = sc->second.find(t.id);
    if (rec == sc->second.end()) throw ManifestError(where() + "utterance '" + t.id + "' missing from " + cols[1]);
    if (rec->second.n_frames != n_frames) {
      throw ManifestError(where() + "utterance '" + t.id + "' has " + std::to_string(rec->second.n_frames) +
                          " frames in " + cols[1] + " but the manifest says " + std::to_string(n_frames));
    }
    t.frame_dim = rec->second.frame_dim;
    t.frames = rec->second.data;
    out.push_back(std::move(t));
  }
  return out;
}

void write_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ManifestError("cannot write pairs " + path.string());
  out << kPairsHeader << '\n';
  for (const auto& p : pairs) {
    const std::string src = join_words(p.source);
    const std::string tgt = join_words(p.target);
    for (const auto* field : {&p.id, &p.src_lang, &p.tgt_lang, &src, &tgt}) check_field(*field, "field of '" + p.id + "'");
    out << p.id << '\t' << p.src_lang << '\t' << p.tgt_lang << '\t' << src << '\t' << tgt << '\n';
  }
  if (!out) throw ManifestError("failed writing pairs " + path.string());
}

std::vector<TextPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot read pairs " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kPairsHeader) throw ManifestError(path.string() + ":1: bad pairs header");
  std::vector<TextPair> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto cols = split_tabs(line);
    if (cols.size() != 5) {
      throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": expected 5 columns, found " +
                          std::to_string(cols.size()));
    }
    TextPair p{cols[0], cols[1], cols[2], split_words(cols[3]), split_words(cols[4])};
    if (p.id.empty() || p.source.empty() || p.target.empty()) {
      throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": empty id or sentence");
    }
    out.push_back(std::move(p));
  }
  return out;
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  write_manifest(dir / "train.tsv", corpus.train);
  write_manifest(dir / "dev.tsv", corpus.dev);
  write_manifest(dir / "test.tsv", corpus.test);
  write_pairs(dir / "ext.tsv", corpus.ext);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.train = read_manifest(dir / "train.tsv");
  c.dev = read_manifest(dir / "dev.tsv");
  c.test = read_manifest(dir / "test.tsv");
  c.ext = read_pairs(dir / "ext.tsv");
  return c;
}

}  // namespace xst
