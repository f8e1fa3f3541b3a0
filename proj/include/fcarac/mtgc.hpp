// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-temporal granularity correlation: the first-cycle kernel is
// resampled to several temporal lengths and each version is correlated with
// the whole feature map (stride 1, same padding). Column j of the result
// belongs to the j-th scale in ascending order.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/autodiff.hpp"
#include "fcarac/encoder.hpp"

namespace fcarac {

inline std::vector<std::size_t> scales_default() { return {3, 4, 5}; }

struct MtgcOptions {
  std::vector<std::size_t> scales = scales_default();
  /// Divide each column by s*D so scales are comparable.
  bool normalize = true;
};

/// Sorted, de-duplicated scale list; throws on an empty list or a zero scale.
inline std::vector<std::size_t> canonical_scales(std::vector<std::size_t> scales) {
  if (scales.empty()) throw std::invalid_argument("mtgc: scale list is empty");
  std::sort(scales.begin(), scales.end());
  scales.erase(std::unique(scales.begin(), scales.end()), scales.end());
  if (scales.front() < 1) throw std::invalid_argument("mtgc: scales must be >= 1");
  return scales;
}

/// Taped MTGC. features: F x D, kernel: k x D. Returns F x S.
inline Var mtgc(Var features, Var kernel, const MtgcOptions& opt) {
  const auto scales = canonical_scales(opt.scales);
  const auto frames = features.value().rows();
  const auto d = features.value().cols();
  if (kernel.value().rank() != 2 || kernel.value().dim(1) != d) {
    throw ShapeError("mtgc: kernel " + shape_str(kernel.shape()) + " does not match features " +
                     shape_str(features.shape()));
  }
  std::vector<Var> cols;
  cols.reserve(scales.size());
  for (auto s : scales) {
    if (s > frames) {
      throw std::invalid_argument("mtgc: scale " + std::to_string(s) + " exceeds sequence length " +
                                  std::to_string(frames));
    }
    Var k = kernel.value().rows() == s ? kernel : ops::interp_linear(kernel, s);
    Var c = ops::correlate1d(features, k, 1);
    if (opt.normalize) c = ops::scale(c, 1.0 / static_cast<double>(s * d));
    cols.push_back(c);
  }
  return ops::concat_cols(cols);
}

inline Array mtgc(const FeatureMap& fm, const CycleKernel& kernel, const MtgcOptions& opt) {
  Tape tape;
  return mtgc(tape.constant(fm.X), tape.constant(kernel.Xp), opt).value();
}

}  // namespace fcarac
