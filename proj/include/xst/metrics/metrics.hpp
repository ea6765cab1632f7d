// Corpus-level BLEU and WER over whitespace tokens.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace xst {

struct ScoreReport {
  std::string metric;  // "bleu" or "wer"
  double value = 0.0;  // BLEU in [0, 100]; WER as a fraction
  std::size_t n_sentences = 0;

  // BLEU
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  // WER
  std::size_t edits = 0;
  std::size_t ref_words = 0;

  double precision(std::size_t n) const;  // n in 1..4
  std::string detail() const;
};

// Clipped 1-4 gram precisions pooled over the corpus; zero when any pooled
// precision is zero (no smoothing).
ScoreReport corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);
// BLEU recomputed from a report's counts.
double bleu_from_counts(const ScoreReport& report);

std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);
ScoreReport wer(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

// CSV with header metric,value,detail; values to four decimals.
void emit_report(const std::vector<ScoreReport>& reports, const std::filesystem::path& path);
std::string format_report_csv(const std::vector<ScoreReport>& reports);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

}  // namespace xst
