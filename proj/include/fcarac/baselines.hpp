// SPDX-License-Identifier: Apache-2.0
#pragma once

// Comparison context modules that replace MTGC in front of the prediction head:
//   FC-V: first-cycle queries attend over the whole sequence.
//   V-V:  full self-similarity matrix, 3x3 conv, adaptive pooling to 16 bins.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/autodiff.hpp"
#include "fcarac/encoder.hpp"

namespace fcarac {

/// Bin [begin, end) of adaptive average pooling from n inputs to `bins` outputs.
struct PoolBin {
  std::size_t begin, end;
};

inline PoolBin adaptive_bin(std::size_t i, std::size_t n, std::size_t bins) {
  return PoolBin{(i * n) / bins, ((i + 1) * n + bins - 1) / bins};
}

namespace ops {

/// Mean-pools axis 1 of an A x B x C array into `bins` adaptive bins.
inline Var adaptive_avg_pool_axis1(Var a, std::size_t bins) {
  const auto& av = a.value();
  require_rank(av, 3, "adaptive_avg_pool");
  if (bins == 0) throw std::invalid_argument("adaptive_avg_pool: bins must be >= 1");
  const auto A = av.dim(0), B = av.dim(1), C = av.dim(2);
  if (B == 0) throw std::invalid_argument("adaptive_avg_pool: empty axis");
  Array out(Shape{A, bins, C});
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t b = 0; b < bins; ++b) {
      const auto bin = adaptive_bin(b, B, bins);
      const double inv = 1.0 / static_cast<double>(bin.end - bin.begin);
      for (std::size_t j = bin.begin; j < bin.end; ++j)
        for (std::size_t c = 0; c < C; ++c) out.at(i, b, c) += av.at(i, j, c) * inv;
    }
  return a.tape->push(std::move(out), {a.id}, [ia = a.id, A, B, C, bins](Tape& t, const Array& g) {
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t b = 0; b < bins; ++b) {
        const auto bin = adaptive_bin(b, B, bins);
        const double inv = 1.0 / static_cast<double>(bin.end - bin.begin);
        for (std::size_t j = bin.begin; j < bin.end; ++j)
          for (std::size_t c = 0; c < C; ++c) ga[(i * B + j) * C + c] += g[(i * bins + b) * C + c] * inv;
      }
  });
}

/// 3x3 same-padded patches of an H x W single-channel map, as (H*W) x 9.
inline Var patches3x3(Var a) {
  const auto& av = a.value();
  require_rank(av, 2, "patches3x3");
  const auto H = static_cast<std::ptrdiff_t>(av.dim(0)), W = static_cast<std::ptrdiff_t>(av.dim(1));
  std::vector<std::ptrdiff_t> idx;
  idx.reserve(static_cast<std::size_t>(H * W * 9));
  for (std::ptrdiff_t i = 0; i < H; ++i)
    for (std::ptrdiff_t j = 0; j < W; ++j)
      for (std::ptrdiff_t di = -1; di <= 1; ++di)
        for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
          const auto r = i + di, c = j + dj;
          idx.push_back(r < 0 || r >= H || c < 0 || c >= W ? -1 : r * W + c);
        }
  return gather(a, std::move(idx), Shape{static_cast<std::size_t>(H * W), 9});
}

}  // namespace ops

/// Cross-attention with the first cycle as queries. The k attended rows are
/// spread back over the F frames through the transposed attention map:
/// out = A^T (A V), A = softmax(Q K^T / sqrt(d_k)).
class FirstCycleAttention {
 public:
  FirstCycleAttention() = default;
  FirstCycleAttention(std::size_t in_width, std::size_t key_width, std::uint64_t seed) : dk_(key_width) {
    std::mt19937_64 rng(seed);
    wq_ = glorot("fcv.wq", Shape{in_width, key_width}, in_width, key_width, rng);
    wk_ = glorot("fcv.wk", Shape{in_width, key_width}, in_width, key_width, rng);
    wv_ = glorot("fcv.wv", Shape{in_width, key_width}, in_width, key_width, rng);
  }

  std::size_t out_width() const noexcept { return dk_; }

  /// Row-stochastic attention map k x F.
  Var attention(Var features, std::size_t k) {
    Tape& t = *features.tape;
    if (features.value().rows() < k) throw std::invalid_argument("fcv: sequence shorter than first cycle");
    Var q = ops::matmul(first_cycle(features, k), t.param(wq_));
    Var key = ops::matmul(features, t.param(wk_));
    Var logits = ops::scale(ops::matmul(q, ops::transpose(key)), 1.0 / std::sqrt(static_cast<double>(dk_)));
    return ops::softmax_rows(logits);
  }

  /// F x d_k context feature.
  Var forward(Var features, std::size_t k) {
    Tape& t = *features.tape;
    Var a = attention(features, k);
    Var v = ops::matmul(features, t.param(wv_));
    Var ctx = ops::matmul(a, v);
    return ops::matmul(ops::transpose(a), ctx);
  }

  std::vector<Parameter*> parameters() { return {&wq_, &wk_, &wv_}; }

 private:
  std::size_t dk_ = 0;
  Parameter wq_, wk_, wv_;
};

/// Self-similarity S = Q K^T, 3x3 conv to `channels` maps with ReLU, adaptive
/// average pooling of the last axis to `bins`; returns F x (bins * channels).
class SelfSimilarity {
 public:
  SelfSimilarity() = default;
  SelfSimilarity(std::size_t in_width, std::size_t key_width, std::size_t channels, std::size_t bins,
                 std::uint64_t seed)
      : channels_(channels), bins_(bins) {
    std::mt19937_64 rng(seed);
    wq_ = glorot("vv.wq", Shape{in_width, key_width}, in_width, key_width, rng);
    wk_ = glorot("vv.wk", Shape{in_width, key_width}, in_width, key_width, rng);
    conv_w_ = glorot("vv.conv_w", Shape{9, channels}, 9, channels, rng);
    conv_b_ = Parameter("vv.conv_b", Array(Shape{channels}));
  }

  std::size_t out_width() const noexcept { return channels_ * bins_; }

  Var similarity(Var features) {
    Tape& t = *features.tape;
    Var q = ops::matmul(features, t.param(wq_));
    Var key = ops::matmul(features, t.param(wk_));
    return ops::matmul(q, ops::transpose(key));
  }

  Var forward(Var features) {
    Tape& t = *features.tape;
    const auto frames = features.value().rows();
    if (frames < 1) throw std::invalid_argument("vv: empty sequence");
    Var s = similarity(features);
    Var conv = ops::relu(ops::add_row_bias(ops::matmul(ops::patches3x3(s), t.param(conv_w_)), t.param(conv_b_)));
    Var maps = ops::reshape(conv, Shape{frames, frames, channels_});
    Var pooled = ops::adaptive_avg_pool_axis1(maps, bins_);
    return ops::reshape(pooled, Shape{frames, bins_ * channels_});
  }

  std::vector<Parameter*> parameters() { return {&wq_, &wk_, &conv_w_, &conv_b_}; }

 private:
  std::size_t channels_ = 0, bins_ = 0;
  Parameter wq_, wk_, conv_w_, conv_b_;
};

}  // namespace fcarac
