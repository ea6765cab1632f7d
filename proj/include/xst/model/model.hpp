// Bimodal encoder-decoder: audio frames pass through a trainable acoustic
// context encoder and a stride-2 convolutional subsampler and are prefixed
// with the [audio] embedding; text is prefixed with its language tag. Both
// feed one shared pre-LN Transformer encoder-decoder whose decoder starts
// from the output-language tag.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "xst/data/task.hpp"
#include "xst/model/config.hpp"
#include "xst/numerics/tensor.hpp"

namespace xst {

class ModalityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Rows of `values` ([B, L, d]) beyond lengths[b] are padding.
template <typename T>
struct SequenceBatch {
  Tensor<T> values;
  std::vector<std::size_t> lengths;
};

// Input to forward_loss. Audio tasks fill `frames`; text tasks fill
// `source_tokens`/`source_tags`. Targets end with [eos]; the decoder input
// is bos_tags[b] followed by targets[b] minus its last token.
struct Seq2SeqBatch {
  Task task = Task::kST;
  std::vector<std::string> ids;
  std::size_t frame_dim = 0;
  std::vector<std::vector<float>> frames;  // per example: n_frames * frame_dim
  std::vector<std::vector<int>> source_tokens;
  std::vector<int> source_tags;
  std::vector<std::vector<int>> targets;
  std::vector<int> bos_tags;

  std::size_t size() const { return targets.size(); }
};

// Optional instrumentation filled during a forward pass.
struct ForwardTrace {
  Shape encoder_input_shape;
  std::vector<double> encoder_input;
  std::vector<std::vector<int>> decoder_inputs;
  Shape cross_attention_shape;  // [B, heads, target_len, source_len], last decoder layer
  std::vector<double> cross_attention;
};

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
  ForwardTrace* trace = nullptr;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class XstNetModel {
 public:
  XstNetModel(const ModelConfig& config, std::uint64_t seed);
  XstNetModel(XstNetModel&&) noexcept = default;
  XstNetModel& operator=(XstNetModel&&) noexcept = default;
  XstNetModel(const XstNetModel&) = delete;
  XstNetModel& operator=(const XstNetModel&) = delete;

  // Deep copy with fresh parameter tensors.
  XstNetModel clone() const;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const Tensor<T>& parameter(std::string_view name) const;
  bool is_acoustic_parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  // frames: [B, T, frame_dim]; output [B, T, d_model].
  SequenceBatch<T> encode_acoustic(const Tensor<T>& frames, const std::vector<std::size_t>& lengths,
                                   const ForwardContext& ctx) const;
  // Two stride-2 kernel-5 conv layers with GELU; length T -> ceil(T/4).
  SequenceBatch<T> subsample(const SequenceBatch<T>& context) const;
  // Prepends e_[audio] and adds positional encodings; length L -> L + 1.
  SequenceBatch<T> embed_audio(const SequenceBatch<T>& audio, const ForwardContext& ctx) const;
  // Looks up [tag] ++ tokens, scales by sqrt(d_model), adds positions.
  SequenceBatch<T> embed_text(const std::vector<std::vector<int>>& tokens, const std::vector<int>& tags,
                              const ForwardContext& ctx) const;
  SequenceBatch<T> encode(const SequenceBatch<T>& input, const ForwardContext& ctx) const;
  // Causal decoder over `inputs` (each starting with its BOS tag);
  // returns logits [B, L, vocab].
  Tensor<T> decode(const std::vector<std::vector<int>>& inputs, const SequenceBatch<T>& memory,
                   const ForwardContext& ctx) const;

  // Encoder input for a batch (audio or text branch by task).
  SequenceBatch<T> embed_source(const Seq2SeqBatch& batch, const ForwardContext& ctx) const;
  SequenceBatch<T> encode_source(const Seq2SeqBatch& batch, const ForwardContext& ctx) const;

  // Mean (label-smoothed) NLL over all non-pad target tokens of the batch.
  Tensor<T> forward_loss(const Seq2SeqBatch& batch, double label_smoothing, const ForwardContext& ctx) const;

  // Masked-frame reconstruction: replaces round(mask_rate * T) frames per
  // utterance with a learned mask vector and regresses the originals from
  // the acoustic context through a linear head. Scalar zero if nothing is
  // masked.
  Tensor<T> ssl_pretrain_loss(const Tensor<T>& frames, const std::vector<std::size_t>& lengths, double mask_rate,
                              std::mt19937_64& mask_rng, const ForwardContext& ctx) const;

  // Packs per-example frame vectors into a zero-padded [B, T_max, F] tensor.
  static Tensor<T> pack_frames(const std::vector<std::vector<float>>& frames, std::size_t frame_dim,
                               std::vector<std::size_t>& lengths);

  bool is_language_tag(int id) const;

 private:
  struct Norm {
    Tensor<T> gain, bias;
  };
  struct Attention {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct FeedForward {
    Tensor<T> w1, b1, w2, b2;
  };
  struct EncoderLayer {
    Norm ln_attn;
    Attention attn;
    Norm ln_ffn;
    FeedForward ffn;
  };
  struct DecoderLayer {
    Norm ln_self;
    Attention self_attn;
    Norm ln_cross;
    Attention cross_attn;
    Norm ln_ffn;
    FeedForward ffn;
  };
  struct Conv {
    Tensor<T> weight, bias;
  };

  Tensor<T>& add_param(const std::string& name, Shape shape);
  Norm make_norm(const std::string& prefix);
  Attention make_attention(const std::string& prefix);
  FeedForward make_ffn(const std::string& prefix);
  EncoderLayer make_encoder_layer(const std::string& prefix);
  void build();
  void initialize(std::uint64_t seed);

  Tensor<T> positions(std::size_t batch, std::size_t length) const;
  Tensor<T> attend(const Tensor<T>& query, const Tensor<T>& keys, const Attention& p, const Tensor<T>& mask,
                   std::vector<double>* probs_out, Shape* probs_shape) const;
  Tensor<T> feed_forward(const Tensor<T>& x, const FeedForward& p) const;
  Tensor<T> encoder_stack(Tensor<T> x, const std::vector<std::size_t>& lengths,
                          const std::vector<EncoderLayer>& layers, const ForwardContext& ctx) const;
  Tensor<T> apply_dropout(const Tensor<T>& x, const ForwardContext& ctx) const;

  ModelConfig config_;
  std::vector<NamedTensor<T>> params_;
  Tensor<T> position_table_;  // [max_positions, d_model], constant

  std::vector<Conv> acoustic_convs_;
  std::vector<EncoderLayer> acoustic_layers_;
  Norm acoustic_norm_;
  std::vector<Conv> subsampler_;
  Tensor<T> embedding_;
  Tensor<T> output_projection_;  // only when untied
  std::vector<EncoderLayer> encoder_layers_;
  Norm encoder_norm_;
  std::vector<DecoderLayer> decoder_layers_;
  Norm decoder_norm_;
  Tensor<T> ssl_mask_;
  Tensor<T> ssl_head_w_, ssl_head_b_;
};

// Additive attention masks (0 visible, -1e9 hidden), shape [B, 1, Lq, Lk].
template <typename T>
Tensor<T> key_padding_mask(const std::vector<std::size_t>& key_lengths, std::size_t query_len, std::size_t key_len);
template <typename T>
Tensor<T> causal_mask(const std::vector<std::size_t>& lengths, std::size_t len);

}  // namespace xst
