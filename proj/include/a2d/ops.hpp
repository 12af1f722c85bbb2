#pragma once

#include <optional>
#include <vector>

#include "a2d/tensor.hpp"

namespace a2d {

// Dense-tensor op library with reverse-mode gradients. All ops return fresh
// tensors; nothing in a recorded graph is mutated in place.

// [..,m,k] x [..,k,n] -> [..,m,n]. Batch dims must match, or either operand
// may be rank-2 and is shared across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose_last_two(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);

// b must have the same shape as a, or a shape that is a trailing suffix of
// a's (bias broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);  // -> scalar

// Row softmax over the last dim, numerically stabilized by max subtraction.
// mask (same shape, entries 0/1) zeroes masked positions exactly and
// renormalizes over the rest; fully masked rows come out all zero.
Tensor softmax_rows(const Tensor& x, const Tensor* mask = nullptr);
Tensor log_softmax_rows(const Tensor& x);

// Mean over unmasked rows of sum_j p_j (log p_j - log max(q_j, 1e-9)), with
// 0 log 0 := 0. p is a constant: gradient flows only through q. row_mask has
// one 0/1 entry per row (shape = x.shape minus last dim, flattened).
Tensor kl_rows(const Tensor& p, const Tensor& q, const Tensor* row_mask = nullptr);

// Mean over unmasked rows of -sum_j p_j log_probs_j; p is constant.
Tensor soft_cross_entropy_rows(const Tensor& log_probs, const Tensor& p,
                               const Tensor* row_mask = nullptr);

// Mean negative log-softmax of targets over rows whose target != ignore_id.
// Zero non-ignored rows give a zero loss with zero gradient.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id);

// y = (x - mean) / sqrt(var + eps) * gain + bias over the last dim.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// table [V,d], ids [B][L] (rectangular) -> [B,L,d].
Tensor embedding_lookup(const Tensor& table, const std::vector<std::vector<int>>& ids);

Tensor concat_last_dim(const std::vector<Tensor>& parts);

// Divides each row by its sum when the sum exceeds 1e-12; rows at or below
// that pass through unchanged.
Tensor renormalize_rows(const Tensor& x);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

// Constant [len, d] sinusoidal position table.
Tensor sinusoidal_positions(std::size_t len, std::size_t d);

// Index of the max entry per row (ties -> lowest index). No gradient.
std::vector<int> argmax_rows(const Tensor& x);

}  // namespace a2d
