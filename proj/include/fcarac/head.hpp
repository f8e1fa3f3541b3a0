// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/autodiff.hpp"
#include "fcarac/density.hpp"
#include "fcarac/encoder.hpp"

namespace fcarac {

/// Three same-padded width-3 1-D convolutions, ReLU between layers, Tanh out.
/// Maps F x C_in to a length-F density.
class PredictionHead {
 public:
  static constexpr std::size_t kWidth = 3;

  PredictionHead() = default;

  PredictionHead(std::size_t in_channels, std::size_t hidden1, std::size_t hidden2, std::uint64_t seed)
      : in_(in_channels) {
    std::mt19937_64 rng(seed);
    const std::size_t c[4] = {in_channels, hidden1, hidden2, 1};
    for (int l = 0; l < 3; ++l) {
      const auto fan_in = kWidth * c[l];
      w_[l] = glorot("head.w" + std::to_string(l + 1), Shape{fan_in, c[l + 1]}, fan_in, c[l + 1], rng);
      b_[l] = Parameter("head.b" + std::to_string(l + 1), Array(Shape{c[l + 1]}));
    }
  }

  std::size_t in_channels() const noexcept { return in_; }

  /// Raw (unmasked) density, length F.
  Var forward(Var features) {
    Tape& tape = *features.tape;
    const auto& fv = features.value();
    if (fv.rank() != 2 || fv.dim(1) != in_) {
      throw ShapeError("head: expected F x " + std::to_string(in_) + ", got " + shape_str(fv.shape()));
    }
    const auto frames = fv.dim(0);
    Var h = features;
    for (int l = 0; l < 3; ++l) {
      Var cols = ops::unfold(h, kWidth, 1, kWidth / 2, frames);
      h = ops::add_row_bias(ops::matmul(cols, tape.param(w_[l])), tape.param(b_[l]));
      h = l < 2 ? ops::relu(h) : ops::tanh(h);
    }
    return ops::reshape(h, Shape{frames});
  }

  /// Density with padded frames forced to 0.
  Var forward(Var features, const std::vector<bool>& pad_mask) {
    Var d = forward(features);
    if (pad_mask.size() != d.value().size()) throw ShapeError("head: mask length mismatch");
    if (std::all_of(pad_mask.begin(), pad_mask.end(), [](bool b) { return b; })) return d;
    Array m(Shape{pad_mask.size()});
    for (std::size_t i = 0; i < pad_mask.size(); ++i) m[i] = pad_mask[i] ? 1.0 : 0.0;
    return ops::mul_const(d, m);
  }

  std::vector<Parameter*> parameters() { return {&w_[0], &b_[0], &w_[1], &b_[1], &w_[2], &b_[2]}; }

 private:
  std::size_t in_ = 0;
  Parameter w_[3];
  Parameter b_[3];
};

inline DensityMap predict_density(PredictionHead& head, const Array& features, const std::vector<bool>& pad_mask) {
  Tape tape;
  return DensityMap{head.forward(tape.constant(features), pad_mask).value(), pad_mask};
}

struct LossReport {
  double l_mse = 0.0;
  double l_mae = 0.0;
  double total = 0.0;
  double alpha = 0.0;
};

struct LossTerms {
  Var mse;
  Var mae;
  Var total;

  LossReport report(double alpha) const {
    return LossReport{mse.value()[0], mae.value()[0], total.value()[0], alpha};
  }
};

/// Mean squared first-cycle error plus relative count error, weighted alpha : 1.
/// density must already be masked.
inline LossTerms loss(Var density, const Array& gt_first, int gt_count, double alpha) {
  if (gt_count <= 0) throw std::invalid_argument("loss: ground-truth count must be >= 1");
  Tape& tape = *density.tape;
  const auto k = gt_first.size();
  if (density.value().size() < k) throw ShapeError("loss: density shorter than first cycle");
  Var first = ops::slice_rows(density, 0, k);
  Var mse = ops::mean(ops::square(ops::sub(first, tape.constant(gt_first))));
  Var count = ops::sum(density);
  const double g = static_cast<double>(gt_count);
  Var mae = ops::scale(ops::abs(ops::add_scalar(count, -g)), 1.0 / g);
  Var total = ops::add(ops::scale(mse, alpha), mae);
  return LossTerms{mse, mae, total};
}

inline LossReport loss(const DensityMap& map, const Array& gt_first, int gt_count, double alpha) {
  Tape tape;
  Array masked = map.values;
  for (std::size_t i = 0; i < masked.size(); ++i)
    if (!map.pad_mask[i]) masked[i] = 0.0;
  return loss(tape.constant(std::move(masked)), gt_first, gt_count, alpha).report(alpha);
}

}  // namespace fcarac
