#pragma once

#include <cstddef>
#include <map>
#include <string>

namespace xst {

// Trainable stand-in for a pretrained speech context encoder: a stride-1
// conv stack over frames followed by pre-LN self-attention layers.
struct AcousticConfig {
  std::size_t frame_dim = 16;
  std::size_t n_conv_layers = 1;
  std::size_t n_ctx_layers = 1;
  std::size_t kernel = 5;
};

struct SubsamplerConfig {
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t n_layers = 2;
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  double dropout_rate = 0.1;
  std::size_t max_positions = 512;
  AcousticConfig acoustic;
  SubsamplerConfig subsampler;
  std::size_t vocab_size = 0;
  std::size_t n_languages = 2;
  bool tie_output_projection = true;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  // Flat key=value form used by checkpoints and run configs.
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);

  // Small configuration used for synthetic-corpus experiments.
  static ModelConfig desk(std::size_t vocab_size, std::size_t n_languages = 2);
  // Transformer-base dimensions (d = 512, 6 + 6 layers, 8 heads, 2048 FFN).
  static ModelConfig full_scale(std::size_t vocab_size, std::size_t n_languages = 2);
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

}  // namespace xst
