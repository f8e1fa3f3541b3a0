// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/array.hpp"
#include "fcarac/sampling.hpp"
#include "fcarac/seqdata.hpp"

namespace fcarac {

/// How sigma of the first-cycle Gaussian is derived from k.
enum class SigmaRule {
  span,  // sigma = (k-1)/6: bin centres 1 and k sit at mu -/+ 3 sigma
  bins,  // sigma = k/6: bin edges 0.5 and k+0.5 sit at mu -/+ 3 sigma
};

inline const char* to_string(SigmaRule r) { return r == SigmaRule::span ? "span" : "bins"; }

inline SigmaRule sigma_rule_from_string(const std::string& s) {
  if (s == "span") return SigmaRule::span;
  if (s == "bins") return SigmaRule::bins;
  throw std::invalid_argument("unknown sigma_rule '" + s + "'");
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// d_i = Phi((i+0.5-mu)/sigma) - Phi((i-0.5-mu)/sigma), i = 1..k, mu = (1+k)/2.
inline Array gaussian_cycle_density(std::size_t k, SigmaRule rule = SigmaRule::span) {
  if (k < 1) throw std::invalid_argument("gaussian_cycle_density: k must be >= 1");
  if (k == 1) return Array::vector({1.0});
  const double kk = static_cast<double>(k);
  const double mu = 0.5 * (1.0 + kk);
  const double sigma = rule == SigmaRule::span ? (kk - 1.0) / 6.0 : kk / 6.0;
  Array d(Shape{k});
  for (std::size_t i = 1; i <= k; ++i) {
    const double x = static_cast<double>(i);
    d[i - 1] = normal_cdf((x + 0.5 - mu) / sigma) - normal_cdf((x - 0.5 - mu) / sigma);
  }
  // Enforce exact mirror symmetry against rounding in erfc.
  for (std::size_t i = 0; i < k / 2; ++i) d[k - 1 - i] = d[i];
  return d;
}

struct DensityMap {
  Array values;                // F
  std::vector<bool> pad_mask;  // true = real frame

  std::size_t length() const { return values.size(); }
};

/// Sum of the unmasked density values.
inline double count_from_density(const DensityMap& map) {
  if (map.pad_mask.size() != map.values.size()) throw std::invalid_argument("count_from_density: mask length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < map.values.size(); ++i)
    if (map.pad_mask[i]) total += map.values[i];
  return total;
}

/// First-cycle target: frames [0, k) carry the Gaussian, the rest are 0 and
/// unsupervised (the loss there is count-level only).
inline DensityMap gt_density_for_sequence(const RawSequence& seq, const SampledSequence& sampled,
                                          SigmaRule rule = SigmaRule::span) {
  if (seq.id != sampled.source_id) {
    throw std::invalid_argument("gt_density_for_sequence: sampled '" + sampled.source_id + "' is not from '" +
                                seq.id + "'");
  }
  const auto k = sampled.k;
  DensityMap map;
  map.values = Array(Shape{sampled.length()});
  map.pad_mask = sampled.pad_mask;
  const auto g = gaussian_cycle_density(k, rule);
  for (std::size_t i = 0; i < k && i < map.values.size(); ++i) map.values[i] = g[i];
  return map;
}

/// CSV "frame_index,value" with padded frames omitted.
inline void write_density_csv(const std::filesystem::path& path, const DensityMap& map) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "frame_index,value\n";
  char buf[64];
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (!map.pad_mask[i]) continue;
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, map.values[i]);
    f << buf;
  }
}

}  // namespace fcarac
