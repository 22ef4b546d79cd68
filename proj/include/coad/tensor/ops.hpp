#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "coad/rng.hpp"
#include "coad/tensor/tensor.hpp"

// Differentiable ops. Each takes the tape of the current step first and
// records a backward closure when any input requires gradients. Shape
// mismatches throw ShapeError naming both shapes.
namespace coad::tensor {

// [m,k] x [k,n] -> [m,n]
template <typename T>
Variable<T> matmul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b);

// [m,k] x [n,k]^T -> [m,n]
template <typename T>
Variable<T> matmul_nt(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b);

template <typename T>
Variable<T> add(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b);

template <typename T>
Variable<T> mul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b);

// [m,n] + [n] broadcast over rows
template <typename T>
Variable<T> add_bias(Tape<T>& tape, const Variable<T>& x, const Variable<T>& bias);

template <typename T>
Variable<T> scale(Tape<T>& tape, const Variable<T>& x, T factor);

// Row-wise softmax after adding -inf to entries whose mask byte is zero.
// `mask` has one byte per element of x. A fully-masked row throws.
template <typename T>
Variable<T> masked_softmax(Tape<T>& tape, const Variable<T>& x, std::span<const std::uint8_t> mask);

// Row-wise normalization followed by the affine gamma/beta ([n] each).
template <typename T>
Variable<T> layer_norm(Tape<T>& tape, const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta,
                       T eps = T(1e-5));

// Rows of `table` selected by `ids`.
template <typename T>
Variable<T> embedding(Tape<T>& tape, const Variable<T>& table, std::span<const int> ids);

// Inverted dropout with a fresh mask drawn from `rng`. Identity when rate == 0.
template <typename T>
Variable<T> dropout(Tape<T>& tape, const Variable<T>& x, double rate, Rng& rng);

// tanh approximation
template <typename T>
Variable<T> gelu(Tape<T>& tape, const Variable<T>& x);

template <typename T>
Variable<T> concat_cols(Tape<T>& tape, std::span<const Variable<T>> parts);

template <typename T>
Variable<T> slice_cols(Tape<T>& tape, const Variable<T>& x, std::size_t begin, std::size_t count);

template <typename T>
Variable<T> concat_rows(Tape<T>& tape, std::span<const Variable<T>> parts);

template <typename T>
Variable<T> slice_rows(Tape<T>& tape, const Variable<T>& x, std::size_t begin, std::size_t count);

template <typename T>
Variable<T> sum(Tape<T>& tape, const Variable<T>& x);

// Weighted mean of -log softmax(logits)[target] over rows whose target is not
// `ignore_id`: sum(w * nll) / sum(w). Returns 0 (with zero gradients) when no
// row is active or the active weights sum to zero.
template <typename T>
Variable<T> cross_entropy(Tape<T>& tape, const Variable<T>& logits, std::span<const int> targets, int ignore_id,
                          std::span<const T> weights);

}  // namespace coad::tensor
