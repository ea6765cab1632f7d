#include "xst/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "xst/numerics/ops.hpp"

namespace xst {

namespace {

constexpr double kMasked = -1e9;

enum class Init { kZero, kOne, kEmbedding, kXavier, kConv };

Init init_for(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".gain")) return Init::kOne;
  if (ends_with(".bias") || ends_with(".bq") || ends_with(".bk") || ends_with(".bv") || ends_with(".bo") ||
      ends_with(".b1") || ends_with(".b2")) {
    return Init::kZero;
  }
  if (name == "ssl.head.weight") return Init::kZero;
  if (name == "embed.tokens" || name == "ssl.mask") return Init::kEmbedding;
  if (ends_with(".weight")) return Init::kConv;
  return Init::kXavier;
}

template <typename T>
Tensor<T> zero_padding_rows(const Tensor<T>& x, const std::vector<std::size_t>& lengths) {
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(1);
  bool full = true;
  for (std::size_t l : lengths) full = full && l == len;
  if (full) return x;
  std::vector<T> m(batch * len, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < std::min(lengths[b], len); ++t) m[b * len + t] = T(1);
  return mul(x, Tensor<T>(Shape{batch, len, 1}, std::move(m)));
}

template <typename T>
void append_trace(const Tensor<T>& t, Shape& shape, std::vector<double>& out) {
  shape = t.shape();
  out.assign(t.data().begin(), t.data().end());
}

}  // namespace

template <typename T>
Tensor<T> key_padding_mask(const std::vector<std::size_t>& key_lengths, std::size_t query_len, std::size_t key_len) {
  (void)query_len;
  const std::size_t batch = key_lengths.size();
  std::vector<T> m(batch * key_len, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = key_lengths[b]; j < key_len; ++j) m[b * key_len + j] = static_cast<T>(kMasked);
  return Tensor<T>(Shape{batch, 1, 1, key_len}, std::move(m));
}

template <typename T>
Tensor<T> causal_mask(const std::vector<std::size_t>& lengths, std::size_t len) {
  const std::size_t batch = lengths.size();
  std::vector<T> m(batch * len * len, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < len; ++j)
        if (j > i || j >= lengths[b]) m[(b * len + i) * len + j] = static_cast<T>(kMasked);
  return Tensor<T>(Shape{batch, 1, len, len}, std::move(m));
}

template <typename T>
XstNetModel<T>::XstNetModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  build();
  initialize(seed);

  const std::size_t d = config_.d_model;
  std::vector<T> pe(config_.max_positions * d);
  for (std::size_t pos = 0; pos < config_.max_positions; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe[pos * d + i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  position_table_ = Tensor<T>(Shape{config_.max_positions, d}, std::move(pe));
}

template <typename T>
Tensor<T>& XstNetModel<T>::add_param(const std::string& name, Shape shape) {
  params_.push_back({name, Tensor<T>::zeros(std::move(shape), true)});
  return params_.back().tensor;
}

template <typename T>
typename XstNetModel<T>::Norm XstNetModel<T>::make_norm(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  Norm n;
  n.gain = add_param(prefix + ".gain", {d});
  n.bias = add_param(prefix + ".bias", {d});
  return n;
}

template <typename T>
typename XstNetModel<T>::Attention XstNetModel<T>::make_attention(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  Attention a;
  a.wq = add_param(prefix + ".wq", {d, d});
  a.bq = add_param(prefix + ".bq", {d});
  a.wk = add_param(prefix + ".wk", {d, d});
  a.bk = add_param(prefix + ".bk", {d});
  a.wv = add_param(prefix + ".wv", {d, d});
  a.bv = add_param(prefix + ".bv", {d});
  a.wo = add_param(prefix + ".wo", {d, d});
  a.bo = add_param(prefix + ".bo", {d});
  return a;
}

template <typename T>
typename XstNetModel<T>::FeedForward XstNetModel<T>::make_ffn(const std::string& prefix) {
  FeedForward f;
  f.w1 = add_param(prefix + ".w1", {config_.d_model, config_.d_ffn});
  f.b1 = add_param(prefix + ".b1", {config_.d_ffn});
  f.w2 = add_param(prefix + ".w2", {config_.d_ffn, config_.d_model});
  f.b2 = add_param(prefix + ".b2", {config_.d_model});
  return f;
}

template <typename T>
typename XstNetModel<T>::EncoderLayer XstNetModel<T>::make_encoder_layer(const std::string& prefix) {
  EncoderLayer l;
  l.ln_attn = make_norm(prefix + ".ln_attn");
  l.attn = make_attention(prefix + ".self_attn");
  l.ln_ffn = make_norm(prefix + ".ln_ffn");
  l.ffn = make_ffn(prefix + ".ffn");
  return l;
}

template <typename T>
void XstNetModel<T>::build() {
  const std::size_t d = config_.d_model;
  const auto& ac = config_.acoustic;
  std::size_t channels = ac.frame_dim;
  for (std::size_t i = 0; i < ac.n_conv_layers; ++i) {
    const std::string p = "acoustic.conv" + std::to_string(i);
    Conv c;
    c.weight = add_param(p + ".weight", {ac.kernel, channels, d});
    c.bias = add_param(p + ".bias", {d});
    acoustic_convs_.push_back(c);
    channels = d;
  }
  for (std::size_t i = 0; i < ac.n_ctx_layers; ++i) {
    acoustic_layers_.push_back(make_encoder_layer("acoustic.layer" + std::to_string(i)));
  }
  if (ac.n_ctx_layers > 0) acoustic_norm_ = make_norm("acoustic.norm");

  const auto& sc = config_.subsampler;
  for (std::size_t i = 0; i < sc.n_layers; ++i) {
    const std::string p = "subsampler.conv" + std::to_string(i);
    Conv c;
    c.weight = add_param(p + ".weight", {sc.kernel, channels, d});
    c.bias = add_param(p + ".bias", {d});
    subsampler_.push_back(c);
    channels = d;
  }
  if (channels != d) throw std::invalid_argument("model config: audio path must end at d_model channels");

  embedding_ = add_param("embed.tokens", {config_.vocab_size, d});
  for (std::size_t i = 0; i < config_.n_enc_layers; ++i) {
    encoder_layers_.push_back(make_encoder_layer("encoder.layer" + std::to_string(i)));
  }
  encoder_norm_ = make_norm("encoder.norm");
  for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    DecoderLayer l;
    l.ln_self = make_norm(p + ".ln_self");
    l.self_attn = make_attention(p + ".self_attn");
    l.ln_cross = make_norm(p + ".ln_cross");
    l.cross_attn = make_attention(p + ".cross_attn");
    l.ln_ffn = make_norm(p + ".ln_ffn");
    l.ffn = make_ffn(p + ".ffn");
    decoder_layers_.push_back(l);
  }
  decoder_norm_ = make_norm("decoder.norm");
  if (!config_.tie_output_projection) output_projection_ = add_param("output.projection", {d, config_.vocab_size});

  ssl_mask_ = add_param("ssl.mask", {ac.frame_dim});
  ssl_head_w_ = add_param("ssl.head.weight", {d, ac.frame_dim});
  ssl_head_b_ = add_param("ssl.head.bias", {ac.frame_dim});
}

template <typename T>
void XstNetModel<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double d = static_cast<double>(config_.d_model);
  for (auto& p : params_) {
    auto data = p.tensor.mutable_data();
    const Shape& s = p.tensor.shape();
    switch (init_for(p.name)) {
      case Init::kZero:
        std::fill(data.begin(), data.end(), T(0));
        break;
      case Init::kOne:
        std::fill(data.begin(), data.end(), T(1));
        break;
      case Init::kEmbedding: {
        std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(d));
        for (T& v : data) v = static_cast<T>(n(rng));
        break;
      }
      case Init::kXavier: {
        const double bound = std::sqrt(6.0 / static_cast<double>(s[0] + s[1]));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (T& v : data) v = static_cast<T>(u(rng));
        break;
      }
      case Init::kConv: {
        const double fan_in = static_cast<double>(s[0] * s[1]);
        const double bound = std::sqrt(3.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (T& v : data) v = static_cast<T>(u(rng));
        break;
      }
    }
  }
}

template <typename T>
XstNetModel<T> XstNetModel<T>::clone() const {
  XstNetModel copy(config_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].tensor.data();
    std::copy(src.begin(), src.end(), copy.params_[i].tensor.mutable_data().begin());
  }
  return copy;
}

template <typename T>
const Tensor<T>& XstNetModel<T>::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
}

template <typename T>
bool XstNetModel<T>::is_acoustic_parameter(std::string_view name) const {
  return name.starts_with("acoustic.") || name.starts_with("subsampler.") || name.starts_with("ssl.");
}

template <typename T>
std::size_t XstNetModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <typename T>
bool XstNetModel<T>::is_language_tag(int id) const {
  return id >= tokens::kFirstLanguage && id < tokens::kFirstLanguage + static_cast<int>(config_.n_languages);
}

template <typename T>
Tensor<T> XstNetModel<T>::positions(std::size_t batch, std::size_t length) const {
  (void)batch;
  if (length > config_.max_positions) {
    throw std::length_error("sequence length " + std::to_string(length) + " exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  const std::size_t d = config_.d_model;
  auto all = position_table_.data();
  return Tensor<T>(Shape{length, d}, std::vector<T>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(length * d)));
}

template <typename T>
Tensor<T> XstNetModel<T>::apply_dropout(const Tensor<T>& x, const ForwardContext& ctx) const {
  if (!ctx.training || config_.dropout_rate <= 0.0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("training forward pass needs an rng for dropout");
  return dropout(x, static_cast<T>(config_.dropout_rate), *ctx.rng);
}

template <typename T>
Tensor<T> XstNetModel<T>::attend(const Tensor<T>& query, const Tensor<T>& keys, const Attention& p,
                                 const Tensor<T>& mask, std::vector<double>* probs_out, Shape* probs_shape) const {
  const std::size_t batch = query.dim(0);
  const std::size_t lq = query.dim(1);
  const std::size_t lk = keys.dim(1);
  const std::size_t heads = config_.n_heads;
  const std::size_t dh = config_.d_model / heads;

  auto q = permute(reshape(add(matmul(query, p.wq), p.bq), {batch, lq, heads, dh}), {0, 2, 1, 3});
  auto k = permute(reshape(add(matmul(keys, p.wk), p.bk), {batch, lk, heads, dh}), {0, 2, 3, 1});
  auto v = permute(reshape(add(matmul(keys, p.wv), p.bv), {batch, lk, heads, dh}), {0, 2, 1, 3});
  auto scores = add(scale(matmul(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)))), mask);
  auto probs = softmax(scores, -1);
  if (probs_out != nullptr) append_trace(probs, *probs_shape, *probs_out);
  auto ctx = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {batch, lq, config_.d_model});
  return add(matmul(ctx, p.wo), p.bo);
}

template <typename T>
Tensor<T> XstNetModel<T>::feed_forward(const Tensor<T>& x, const FeedForward& p) const {
  return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <typename T>
Tensor<T> XstNetModel<T>::encoder_stack(Tensor<T> x, const std::vector<std::size_t>& lengths,
                                        const std::vector<EncoderLayer>& layers, const ForwardContext& ctx) const {
  if (layers.empty()) return x;
  const std::size_t len = x.dim(1);
  const Tensor<T> mask = key_padding_mask<T>(lengths, len, len);
  for (const auto& layer : layers) {
    auto h = layer_norm(x, layer.ln_attn.gain, layer.ln_attn.bias);
    x = add(x, apply_dropout(attend(h, h, layer.attn, mask, nullptr, nullptr), ctx));
    h = layer_norm(x, layer.ln_ffn.gain, layer.ln_ffn.bias);
    x = add(x, apply_dropout(feed_forward(h, layer.ffn), ctx));
  }
  return x;
}

template <typename T>
Tensor<T> XstNetModel<T>::pack_frames(const std::vector<std::vector<float>>& frames, std::size_t frame_dim,
                                      std::vector<std::size_t>& lengths) {
  if (frames.empty()) throw std::invalid_argument("pack_frames: empty batch");
  if (frame_dim == 0) throw std::invalid_argument("pack_frames: frame_dim is zero");
  lengths.clear();
  std::size_t max_len = 0;
  for (const auto& f : frames) {
    if (f.empty() || f.size() % frame_dim != 0) {
      throw std::invalid_argument("pack_frames: utterance size " + std::to_string(f.size()) +
                                  " is not a positive multiple of frame_dim " + std::to_string(frame_dim));
    }
    lengths.push_back(f.size() / frame_dim);
    max_len = std::max(max_len, lengths.back());
  }
  std::vector<T> data(frames.size() * max_len * frame_dim, T(0));
  for (std::size_t b = 0; b < frames.size(); ++b) {
    std::transform(frames[b].begin(), frames[b].end(), data.begin() + static_cast<std::ptrdiff_t>(b * max_len * frame_dim),
                   [](float v) { return static_cast<T>(v); });
  }
  return Tensor<T>(Shape{frames.size(), max_len, frame_dim}, std::move(data));
}

template <typename T>
SequenceBatch<T> XstNetModel<T>::encode_acoustic(const Tensor<T>& frames, const std::vector<std::size_t>& lengths,
                                                 const ForwardContext& ctx) const {
  if (frames.rank() != 3 || frames.dim(2) != config_.acoustic.frame_dim) {
    throw ShapeError("encode_acoustic: expected frames [B,T," + std::to_string(config_.acoustic.frame_dim) + "], got " +
                     shape_str(frames.shape()));
  }
  if (lengths.size() != frames.dim(0)) throw ShapeError("encode_acoustic: lengths do not match batch");
  for (std::size_t l : lengths) {
    if (l == 0 || l > frames.dim(1)) throw ShapeError("encode_acoustic: invalid utterance length " + std::to_string(l));
  }
  Tensor<T> x = frames;
  const std::size_t pad = config_.acoustic.kernel / 2;
  for (const auto& conv : acoustic_convs_) {
    x = zero_padding_rows(gelu(conv1d(x, conv.weight, conv.bias, 1, pad)), lengths);
  }
  if (!acoustic_layers_.empty()) {
    x = encoder_stack(x, lengths, acoustic_layers_, ctx);
    x = zero_padding_rows(layer_norm(x, acoustic_norm_.gain, acoustic_norm_.bias), lengths);
  }
  return {x, lengths};
}

template <typename T>
SequenceBatch<T> XstNetModel<T>::subsample(const SequenceBatch<T>& context) const {
  const auto& sc = config_.subsampler;
  const std::size_t pad = sc.kernel / 2;
  Tensor<T> x = context.values;
  std::vector<std::size_t> lengths = context.lengths;
  for (const auto& conv : subsampler_) {
    for (auto& l : lengths) l = conv1d_output_length(l, sc.kernel, sc.stride, pad);
    x = zero_padding_rows(gelu(conv1d(x, conv.weight, conv.bias, sc.stride, pad)), lengths);
  }
  return {x, lengths};
}

template <typename T>
SequenceBatch<T> XstNetModel<T>::embed_audio(const SequenceBatch<T>& audio, const ForwardContext& ctx) const {
  const std::size_t batch = audio.values.dim(0);
  const std::size_t len = audio.values.dim(1) + 1;
  if (len > config_.max_positions) {
    throw std::length_error("embed_audio: encoder input length " + std::to_string(len) + " exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  const std::vector<int> tag_ids(batch, tokens::kAudio);
  auto tag = reshape(embedding_lookup(embedding_, tag_ids), {batch, 1, config_.d_model});
  auto x = add(concat<T>({tag, audio.values}, 1), positions(batch, len));
  std::vector<std::size_t> lengths = audio.lengths;
  for (auto& l : lengths) ++l;
  return {apply_dropout(x, ctx), lengths};
}

template <typename T>
SequenceBatch<T> XstNetModel<T>::embed_text(const std::vector<std::vector<int>>& token_lists,
                                            const std::vector<int>& tags, const ForwardContext& ctx) const {
  if (token_lists.empty() || token_lists.size() != tags.size()) {
    throw std::invalid_argument("embed_text: need one language tag per sentence");
  }
  const std::size_t batch = token_lists.size();
  std::size_t len = 0;
  for (const auto& t : token_lists) len = std::max(len, t.size() + 1);
  std::vector<int> ids(batch * len, tokens::kPad);
  std::vector<std::size_t> lengths(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (!is_language_tag(tags[b])) throw std::invalid_argument("embed_text: unknown language tag id " + std::to_string(tags[b]));
    ids[b * len] = tags[b];
    std::copy(token_lists[b].begin(), token_lists[b].end(), ids.begin() + static_cast<std::ptrdiff_t>(b * len + 1));
    lengths[b] = token_lists[b].size() + 1;
  }
  auto e = reshape(embedding_lookup(embedding_, ids), {batch, len, config_.d_model});
  auto x = add(scale(e, static_cast<T>(std::sqrt(static_cast<double>(config_.d_model)))), positions(batch, len));
  return {apply_dropout(x, ctx), lengths};
}

template <typename T>
SequenceBatch<T> XstNetModel<T>::encode(const SequenceBatch<T>& input, const ForwardContext& ctx) const {
  if (ctx.trace != nullptr) append_trace(input.values, ctx.trace->encoder_input_shape, ctx.trace->encoder_input);
  auto x = encoder_stack(input.values, input.lengths, encoder_layers_, ctx);
  return {layer_norm(x, encoder_norm_.gain, encoder_norm_.bias), input.lengths};
}

template <typename T>
Tensor<T> XstNetModel<T>::decode(const std::vector<std::vector<int>>& inputs, const SequenceBatch<T>& memory,
                                 const ForwardContext& ctx) const {
  const std::size_t batch = inputs.size();
  if (batch == 0 || batch != memory.values.dim(0)) throw ShapeError("decode: batch size mismatch with memory");
  std::size_t len = 0;
  for (const auto& in : inputs) {
    if (in.empty()) throw std::invalid_argument("decode: empty decoder input (missing BOS tag)");
    len = std::max(len, in.size());
  }
  std::vector<int> ids(batch * len, tokens::kPad);
  std::vector<std::size_t> lengths(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(inputs[b].begin(), inputs[b].end(), ids.begin() + static_cast<std::ptrdiff_t>(b * len));
    lengths[b] = inputs[b].size();
  }
  if (ctx.trace != nullptr) ctx.trace->decoder_inputs = inputs;

  const std::size_t d = config_.d_model;
  auto e = reshape(embedding_lookup(embedding_, ids), {batch, len, d});
  Tensor<T> x = apply_dropout(add(scale(e, static_cast<T>(std::sqrt(static_cast<double>(d)))), positions(batch, len)), ctx);

  const Tensor<T> self_mask = causal_mask<T>(lengths, len);
  const Tensor<T> cross_mask = key_padding_mask<T>(memory.lengths, len, memory.values.dim(1));
  for (std::size_t i = 0; i < decoder_layers_.size(); ++i) {
    const auto& layer = decoder_layers_[i];
    const bool probe = ctx.trace != nullptr && i + 1 == decoder_layers_.size();
    auto h = layer_norm(x, layer.ln_self.gain, layer.ln_self.bias);
    x = add(x, apply_dropout(attend(h, h, layer.self_attn, self_mask, nullptr, nullptr), ctx));
    h = layer_norm(x, layer.ln_cross.gain, layer.ln_cross.bias);
    x = add(x, apply_dropout(attend(h, memory.values, layer.cross_attn, cross_mask,
                                    probe ? &ctx.trace->cross_attention : nullptr,
                                    probe ? &ctx.trace->cross_attention_shape : nullptr),
                             ctx));
    h = layer_norm(x, layer.ln_ffn.gain, layer.ln_ffn.bias);
    x = add(x, apply_dropout(feed_forward(h, layer.ffn), ctx));
  }
  x = layer_norm(x, decoder_norm_.gain, decoder_norm_.bias);
  return config_.tie_output_projection ? matmul(x, transpose(embedding_)) : matmul(x, output_projection_);
}

template <typename T>
SequenceBatch<T> XstNetModel<T>::embed_source(const Seq2SeqBatch& batch, const ForwardContext& ctx) const {
  const std::size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("empty batch");
  if (source_modality(batch.task) == Modality::kAudio) {
    if (batch.frames.size() != n || !batch.source_tokens.empty()) {
      throw ModalityError(task_name(batch.task) + " batch needs audio input for every example and no source text");
    }
    std::vector<std::size_t> lengths;
    auto frames = pack_frames(batch.frames, batch.frame_dim, lengths);
    return embed_audio(subsample(encode_acoustic(frames, lengths, ctx)), ctx);
  }
  if (batch.source_tokens.size() != n || batch.source_tags.size() != n || !batch.frames.empty()) {
    throw ModalityError(task_name(batch.task) + " batch needs source text for every example and no audio");
  }
  return embed_text(batch.source_tokens, batch.source_tags, ctx);
}

template <typename T>
SequenceBatch<T> XstNetModel<T>::encode_source(const Seq2SeqBatch& batch, const ForwardContext& ctx) const {
  return encode(embed_source(batch, ctx), ctx);
}

template <typename T>
Tensor<T> XstNetModel<T>::forward_loss(const Seq2SeqBatch& batch, double label_smoothing,
                                       const ForwardContext& ctx) const {
  const std::size_t n = batch.size();
  if (batch.bos_tags.size() != n) throw std::invalid_argument("forward_loss: one BOS tag per example required");
  auto memory = encode_source(batch, ctx);

  std::vector<std::vector<int>> inputs(n);
  std::size_t len = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto& y = batch.targets[b];
    if (y.empty()) throw std::invalid_argument("forward_loss: empty target for example " + std::to_string(b));
    if (!is_language_tag(batch.bos_tags[b])) {
      throw std::invalid_argument("forward_loss: BOS id " + std::to_string(batch.bos_tags[b]) + " is not a language tag");
    }
    inputs[b].push_back(batch.bos_tags[b]);
    inputs[b].insert(inputs[b].end(), y.begin(), y.end() - 1);
    len = std::max(len, y.size());
  }
  std::vector<int> flat(n * len, tokens::kPad);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy(batch.targets[b].begin(), batch.targets[b].end(), flat.begin() + static_cast<std::ptrdiff_t>(b * len));
  }
  auto logits = decode(inputs, memory, ctx);
  return nll_loss(logits, flat, tokens::kPad, static_cast<T>(label_smoothing));
}

template <typename T>
Tensor<T> XstNetModel<T>::ssl_pretrain_loss(const Tensor<T>& frames, const std::vector<std::size_t>& lengths,
                                            double mask_rate, std::mt19937_64& mask_rng,
                                            const ForwardContext& ctx) const {
  if (mask_rate < 0.0 || mask_rate > 1.0) throw std::invalid_argument("ssl_pretrain_loss: mask_rate must be in [0,1]");
  const std::size_t batch = frames.dim(0);
  const std::size_t len = frames.dim(1);
  const std::size_t dim = frames.dim(2);
  std::vector<T> m(batch * len, T(0));
  std::size_t masked = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto count = static_cast<std::size_t>(std::llround(mask_rate * static_cast<double>(lengths[b])));
    std::vector<std::size_t> order(lengths[b]);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), mask_rng);
    for (std::size_t i = 0; i < count; ++i) m[b * len + order[i]] = T(1);
    masked += count;
  }
  if (masked == 0) return Tensor<T>::scalar(T(0));

  std::vector<T> keep_values(m.size());
  std::transform(m.begin(), m.end(), keep_values.begin(), [](T v) { return T(1) - v; });
  const Tensor<T> mask(Shape{batch, len, 1}, m);
  const Tensor<T> keep(Shape{batch, len, 1}, std::move(keep_values));
  const Tensor<T> target = frames.clone();

  auto corrupted = add(mul(target, keep), mul(ssl_mask_, mask));
  auto context = encode_acoustic(corrupted, lengths, ctx);
  auto prediction = add(matmul(context.values, ssl_head_w_), ssl_head_b_);
  auto err = sub(prediction, target);
  auto masked_sq = mul(mul(err, err), mask);
  return scale(sum(masked_sq), static_cast<T>(1.0 / static_cast<double>(masked * dim)));
}

template class XstNetModel<float>;
template class XstNetModel<double>;
template Tensor<float> key_padding_mask<float>(const std::vector<std::size_t>&, std::size_t, std::size_t);
template Tensor<double> key_padding_mask<double>(const std::vector<std::size_t>&, std::size_t, std::size_t);
template Tensor<float> causal_mask<float>(const std::vector<std::size_t>&, std::size_t);
template Tensor<double> causal_mask<double>(const std::vector<std::size_t>&, std::size_t);

}  // namespace xst
