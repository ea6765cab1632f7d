// Differentiable primitives over Tensor<T>.
//
// Every op computes its forward value immediately and, when a tape is
// active and some input requires a gradient, records a backward rule.
// Reductions accumulate strictly left to right so that identical inputs
// give bit-identical outputs from run to run.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "xst/numerics/tensor.hpp"

namespace xst {

// Elementwise with numpy-style broadcasting (shapes right-aligned, each
// dim equal or 1).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

// a: [..., M, K]. b: [K, N] (shared across the leading dims) or
// [..., K, N] with the same leading dims as a.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
// Max-subtracted softmax along `axis` (negative counts from the end).
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);
// Normalizes over the last dim with the population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

// Output length of a 1-D convolution; throws ShapeError when it would be < 1.
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding);

// x: [T, C_in] or [B, T, C_in]; weight: [kernel, C_in, C_out]; bias: [C_out]
// or undefined. Symmetric zero padding.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

// Row gather from table [V, d]; result [ids.size(), d].
template <typename T> Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids);

// Mean over non-pad rows of the (optionally label-smoothed) cross entropy
// of logits [..., V] against `targets` (one per row). Zero when every
// row is padding.
template <typename T>
Tensor<T> nll_loss(const Tensor<T>& logits, std::span<const int> targets, int pad_id, T smoothing = T(0));

// Inverted dropout; identity when rate == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, T rate, std::mt19937_64& rng);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Builds the result of a user-defined op: `rule(out_grad)` is called during
// backward with the gradient of `out` and must accumulate into the inputs.
template <typename T>
Tensor<T> custom_op(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                    std::function<void(std::span<const T> out_grad)> rule);

}  // namespace xst
