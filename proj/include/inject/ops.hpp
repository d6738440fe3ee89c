#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "inject/rng.hpp"
#include "inject/tensor.hpp"

namespace inject::ops {

/// a[..., n, k] x b[..., k, m]. b either has a's batch dimensions or is a
/// plain matrix shared across the batch. With transpose_b, b is [..., m, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// x[..., in] W^T + bias, with W stored [out, in]. bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Elementwise sum. b must have a's shape or a trailing suffix of it.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor tanh(const Tensor& x);
/// Gaussian error linear unit, erf form.
Tensor gelu(const Tensor& x);

/// Softmax over the last dimension. Positions where the mask is 0 get
/// probability 0; a slice with every position masked is all zeros.
Tensor softmax_lastdim(const Tensor& x, const Mask* mask = nullptr);

/// Normalizes over the last dimension then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// Mean negative log-likelihood of labels under softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng* rng);

/// Gathers rows of table[V, d]; result shape is lead + [d].
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& lead);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> order);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order);

/// x[B, S, ...] -> x[:, position, ...]
Tensor select_position(const Tensor& x, std::size_t position);

/// Elementwise mean of equally shaped tensors. Each element is summed in
/// sorted order, so the result does not depend on the order of `parts`.
Tensor mean_of(std::span<const Tensor> parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace inject::ops
