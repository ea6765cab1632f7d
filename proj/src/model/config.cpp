#include "xst/model/config.hpp"

#include <charconv>
#include <stdexcept>

#include "xst/data/task.hpp"

namespace xst {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t parse_size(const std::map<std::string, std::string>& m, const std::string& key, std::size_t fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  std::size_t v = 0;
  const auto& s = it->second;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("model config: bad integer for " + key + ": '" + s + "'");
  }
  return v;
}

double parse_double(const std::map<std::string, std::string>& m, const std::string& key, double fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  double v = 0;
  const auto& s = it->second;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("model config: bad number for " + key + ": '" + s + "'");
  }
  return v;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (d_model == 0) fail("d_model must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ffn == 0) fail("d_ffn must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate must be in [0, 1)");
  if (max_positions < 2) fail("max_positions must be at least 2");
  if (acoustic.frame_dim == 0) fail("acoustic.frame_dim must be positive");
  if (acoustic.kernel == 0 || acoustic.kernel % 2 == 0) fail("acoustic.kernel must be odd");
  if (subsampler.kernel == 0 || subsampler.stride == 0) fail("subsampler kernel and stride must be positive");
  if (n_languages == 0) fail("at least one language is required");
  if (vocab_size < static_cast<std::size_t>(tokens::kFirstLanguage) + n_languages) {
    fail("vocab_size " + std::to_string(vocab_size) + " cannot hold the special and language tokens");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"d_model", std::to_string(d_model)},
      {"n_enc_layers", std::to_string(n_enc_layers)},
      {"n_dec_layers", std::to_string(n_dec_layers)},
      {"n_heads", std::to_string(n_heads)},
      {"d_ffn", std::to_string(d_ffn)},
      {"dropout_rate", format_double(dropout_rate)},
      {"max_positions", std::to_string(max_positions)},
      {"acoustic.frame_dim", std::to_string(acoustic.frame_dim)},
      {"acoustic.n_conv_layers", std::to_string(acoustic.n_conv_layers)},
      {"acoustic.n_ctx_layers", std::to_string(acoustic.n_ctx_layers)},
      {"acoustic.kernel", std::to_string(acoustic.kernel)},
      {"subsampler.kernel", std::to_string(subsampler.kernel)},
      {"subsampler.stride", std::to_string(subsampler.stride)},
      {"subsampler.n_layers", std::to_string(subsampler.n_layers)},
      {"vocab_size", std::to_string(vocab_size)},
      {"n_languages", std::to_string(n_languages)},
      {"tie_output_projection", tie_output_projection ? "1" : "0"},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& m) {
  ModelConfig c;
  c.d_model = parse_size(m, "d_model", c.d_model);
  c.n_enc_layers = parse_size(m, "n_enc_layers", c.n_enc_layers);
  c.n_dec_layers = parse_size(m, "n_dec_layers", c.n_dec_layers);
  c.n_heads = parse_size(m, "n_heads", c.n_heads);
  c.d_ffn = parse_size(m, "d_ffn", c.d_ffn);
  c.dropout_rate = parse_double(m, "dropout_rate", c.dropout_rate);
  c.max_positions = parse_size(m, "max_positions", c.max_positions);
  c.acoustic.frame_dim = parse_size(m, "acoustic.frame_dim", c.acoustic.frame_dim);
  c.acoustic.n_conv_layers = parse_size(m, "acoustic.n_conv_layers", c.acoustic.n_conv_layers);
  c.acoustic.n_ctx_layers = parse_size(m, "acoustic.n_ctx_layers", c.acoustic.n_ctx_layers);
  c.acoustic.kernel = parse_size(m, "acoustic.kernel", c.acoustic.kernel);
  c.subsampler.kernel = parse_size(m, "subsampler.kernel", c.subsampler.kernel);
  c.subsampler.stride = parse_size(m, "subsampler.stride", c.subsampler.stride);
  c.subsampler.n_layers = parse_size(m, "subsampler.n_layers", c.subsampler.n_layers);
  c.vocab_size = parse_size(m, "vocab_size", c.vocab_size);
  c.n_languages = parse_size(m, "n_languages", c.n_languages);
  c.tie_output_projection = parse_size(m, "tie_output_projection", c.tie_output_projection ? 1 : 0) != 0;
  return c;
}

ModelConfig ModelConfig::desk(std::size_t vocab_size, std::size_t n_languages) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.n_languages = n_languages;
  return c;
}

ModelConfig ModelConfig::full_scale(std::size_t vocab_size, std::size_t n_languages) {
  ModelConfig c;
  c.d_model = 512;
  c.n_enc_layers = 6;
  c.n_dec_layers = 6;
  c.n_heads = 8;
  c.d_ffn = 2048;
  c.max_positions = 1024;
  c.vocab_size = vocab_size;
  c.n_languages = n_languages;
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.to_map() == b.to_map(); }

}  // namespace xst
