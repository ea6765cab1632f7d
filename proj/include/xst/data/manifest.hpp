// On-disk corpus formats.
//
// Manifest TSV columns:
//   id  frames_file  n_frames  src_lang  tgt_lang  transcript  translation
// frames_file is resolved relative to the manifest's directory. The
// sidecar holds magic "XSTFRM1\0" and then, per utterance, the id
// (u32 length + bytes), n_frames (u32), frame_dim (u32) and float32 data.
//
// Text pair TSV columns: id  src_lang  tgt_lang  source  target

#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "xst/data/corpus.hpp"

namespace xst {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes `path` and a sidecar next to it named after the manifest with a
// ".frames" extension.
void write_manifest(const std::filesystem::path& path, const std::vector<TripleExample>& triples);
std::vector<TripleExample> read_manifest(const std::filesystem::path& path);

void write_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs);
std::vector<TextPair> read_pairs(const std::filesystem::path& path);

// Directory layout: {train,dev,test}.tsv with .frames sidecars, ext.tsv.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace xst
