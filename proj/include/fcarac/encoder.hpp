// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-clip temporal encoder. Each length-k, stride-k/2 window yields k/2
// feature frames; the concatenation (F - k/2 frames for even F) is completed
// to F frames by repeating the last feature frame.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/autodiff.hpp"
#include "fcarac/sampling.hpp"

namespace fcarac {

struct FeatureMap {
  Array X;  // F x D
  std::vector<bool> pad_mask;

  std::size_t length() const { return X.rows(); }
  std::size_t width() const { return X.cols(); }
};

struct CycleKernel {
  Array Xp;  // k x D
};

/// Glorot-uniform initialised parameter.
inline Parameter glorot(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Array w(std::move(shape));
  for (auto& v : w.data()) v = u(rng);
  return Parameter(std::move(name), std::move(w));
}

/// Anything mapping a sampled sequence onto per-frame features.
class SequenceEncoder {
 public:
  virtual ~SequenceEncoder() = default;

  /// Feature width D.
  virtual std::size_t width() const = 0;
  virtual std::string kind() const = 0;
  /// Taped forward pass producing F x D features.
  virtual Var encode(Tape& tape, const SampledSequence& seq) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::unique_ptr<SequenceEncoder> clone() const = 0;

  FeatureMap encode(const SampledSequence& seq) {
    Tape tape;
    Var x = encode(tape, seq);
    return FeatureMap{x.value(), seq.pad_mask};
  }
};

/// Two-layer windowed encoder: window (k x D_in) -> tanh hidden -> k/2 frames of width D.
class TemporalEncoder final : public SequenceEncoder {
 public:
  TemporalEncoder(std::size_t in_channels, std::size_t width, std::size_t hidden, std::size_t k, std::uint64_t seed)
      : in_(in_channels), width_(width), hidden_(hidden), k_(k) {
    if (k < 2 || k % 2 != 0) throw std::invalid_argument("TemporalEncoder: k must be even and >= 2");
    std::mt19937_64 rng(seed);
    w1_ = glorot("encoder.w1", Shape{k * in_channels, hidden}, k * in_channels, hidden, rng);
    b1_ = Parameter("encoder.b1", Array(Shape{hidden}));
    w2_ = glorot("encoder.w2", Shape{hidden, (k / 2) * width}, hidden, (k / 2) * width, rng);
    b2_ = Parameter("encoder.b2", Array(Shape{(k / 2) * width}));
  }

  std::size_t width() const override { return width_; }
  std::size_t in_channels() const { return in_; }
  std::size_t k() const { return k_; }
  std::string kind() const override { return "temporal"; }

  using SequenceEncoder::encode;

  Var encode(Tape& tape, const SampledSequence& seq) override {
    const auto frames = seq.length();
    if (frames < k_) {
      throw std::invalid_argument("encode: sequence '" + seq.source_id + "' has " + std::to_string(frames) +
                                  " frames, need at least k=" + std::to_string(k_));
    }
    if (seq.frames.cols() != in_) throw ShapeError("encode: input channel mismatch");
    const auto half = k_ / 2;
    const auto n_windows = window_starts(frames, k_).size();

    Var x = tape.constant(seq.frames);
    Var clips = ops::unfold(x, k_, half, 0, n_windows);
    Var h = ops::tanh(ops::add_row_bias(ops::matmul(clips, tape.param(w1_)), tape.param(b1_)));
    Var y = ops::add_row_bias(ops::matmul(h, tape.param(w2_)), tape.param(b2_));
    const auto produced = n_windows * half;
    Var feats = ops::reshape(y, Shape{produced, width_});

    std::vector<std::ptrdiff_t> rows(frames);
    for (std::size_t i = 0; i < frames; ++i) rows[i] = static_cast<std::ptrdiff_t>(std::min(i, produced - 1));
    return ops::gather_rows(feats, rows);
  }

  std::vector<Parameter*> parameters() override { return {&w1_, &b1_, &w2_, &b2_}; }

  std::unique_ptr<SequenceEncoder> clone() const override { return std::make_unique<TemporalEncoder>(*this); }

 private:
  std::size_t in_, width_, hidden_, k_;
  Parameter w1_, b1_, w2_, b2_;
};

/// Identity encoder for features that were extracted offline.
class PassthroughEncoder final : public SequenceEncoder {
 public:
  explicit PassthroughEncoder(std::size_t width) : width_(width) {}

  std::size_t width() const override { return width_; }
  std::string kind() const override { return "passthrough"; }

  using SequenceEncoder::encode;

  Var encode(Tape& tape, const SampledSequence& seq) override {
    if (seq.frames.cols() != width_) throw ShapeError("passthrough encode: channel mismatch");
    return tape.constant(seq.frames);
  }

  std::vector<Parameter*> parameters() override { return {}; }
  std::unique_ptr<SequenceEncoder> clone() const override { return std::make_unique<PassthroughEncoder>(*this); }

 private:
  std::size_t width_;
};

/// Rows [0, k) of the feature map.
inline CycleKernel first_cycle(const FeatureMap& fm, std::size_t k) {
  if (fm.length() < k) throw std::invalid_argument("first_cycle: feature map shorter than k");
  return CycleKernel{fm.X.rows_slice(0, k)};
}

inline Var first_cycle(Var features, std::size_t k) { return ops::slice_rows(features, 0, k); }

}  // namespace fcarac
