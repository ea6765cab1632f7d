#include "xst/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "xst/data/vocab.hpp"

namespace xst {

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void check_sizes(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument("hypothesis count " + std::to_string(hyps.size()) + " does not match reference count " +
                                std::to_string(refs.size()));
  }
}

}  // namespace

double ScoreReport::precision(std::size_t n) const {
  if (n < 1 || n > 4) throw std::out_of_range("n-gram order must be 1..4");
  return totals[n - 1] == 0 ? 0.0 : static_cast<double>(matches[n - 1]) / static_cast<double>(totals[n - 1]);
}

std::string ScoreReport::detail() const {
  std::string d;
  if (metric == "bleu") {
    for (std::size_t n = 1; n <= 4; ++n) {
      d += "p" + std::to_string(n) + "=" + std::to_string(matches[n - 1]) + "/" + std::to_string(totals[n - 1]) + ";";
    }
    d += "bp=" + fixed4(brevity_penalty) + ";hyp_len=" + std::to_string(hyp_length) +
         ";ref_len=" + std::to_string(ref_length);
  } else {
    d += "edits=" + std::to_string(edits) + ";ref_words=" + std::to_string(ref_words);
  }
  d += ";n=" + std::to_string(n_sentences);
  return d;
}

double bleu_from_counts(const ScoreReport& r) {
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (r.matches[n] == 0 || r.totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]));
  }
  double bp = 1.0;
  if (r.hyp_length < r.ref_length) {
    bp = r.hyp_length == 0 ? 0.0
                           : std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
  }
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

ScoreReport corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  check_sizes(hyps, refs);
  ScoreReport r;
  r.metric = "bleu";
  r.n_sentences = hyps.size();
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = split_words(hyps[i]);
    const auto ref = split_words(refs[i]);
    r.hyp_length += h.size();
    r.ref_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t j = 0; j + n <= ref.size(); ++j) ++ref_counts[{ref.begin() + j, ref.begin() + j + n}];
      std::map<std::vector<std::string>, std::size_t> hyp_counts;
      for (std::size_t j = 0; j + n <= h.size(); ++j) ++hyp_counts[{h.begin() + j, h.begin() + j + n}];
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) r.matches[n - 1] += std::min(count, it->second);
        r.totals[n - 1] += count;
      }
    }
  }
  r.brevity_penalty = 1.0;
  if (r.hyp_length < r.ref_length) {
    r.brevity_penalty = r.hyp_length == 0
                            ? 0.0
                            : std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
  }
  r.value = bleu_from_counts(r);
  return r;
}

std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

ScoreReport wer(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  check_sizes(hyps, refs);
  ScoreReport r;
  r.metric = "wer";
  r.n_sentences = hyps.size();
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto ref = split_words(refs[i]);
    r.edits += edit_distance(split_words(hyps[i]), ref);
    r.ref_words += ref.size();
  }
  if (r.ref_words == 0) throw std::invalid_argument("wer: reference corpus has no words");
  r.value = static_cast<double>(r.edits) / static_cast<double>(r.ref_words);
  return r;
}

std::string format_report_csv(const std::vector<ScoreReport>& reports) {
  std::string out = "metric,value,detail\n";
  for (const auto& r : reports) out += r.metric + "," + fixed4(r.value) + "," + r.detail() + "\n";
  return out;
}

void emit_report(const std::vector<ScoreReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << format_report_csv(reports);
  if (!out) throw std::runtime_error("failed writing report " + path.string());
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace xst
