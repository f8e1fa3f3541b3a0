// SPDX-License-Identifier: Apache-2.0
#pragma once

// Speed normalisation: every sequence is resampled at R = k/N so that its
// annotated first cycle spans exactly k frames.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/array.hpp"
#include "fcarac/seqdata.hpp"

namespace fcarac {

inline constexpr std::size_t kDefaultCycleFrames = 4;

struct SampledSequence {
  Array frames;  // F x D_in
  std::size_t k = kDefaultCycleFrames;
  double rate = 1.0;
  std::string source_id;
  std::vector<bool> pad_mask;  // true = real frame

  std::size_t length() const { return frames.rows(); }
  std::size_t real_length() const {
    return static_cast<std::size_t>(std::count(pad_mask.begin(), pad_mask.end(), true));
  }

  /// Mask as a 0/1 Array of length F.
  Array mask_array() const {
    Array m(Shape{pad_mask.size()});
    for (std::size_t i = 0; i < pad_mask.size(); ++i) m[i] = pad_mask[i] ? 1.0 : 0.0;
    return m;
  }
};

/// floor(num/den + 1/2) for non-negative integers.
inline std::size_t round_half_up_ratio(std::size_t num, std::size_t den) { return (2 * num + den) / (2 * den); }

/// Sampled length F = max(k, round(k*L/N)).
inline std::size_t sampled_length(std::size_t length, std::size_t first_cycle_end, std::size_t k) {
  return std::max(k, round_half_up_ratio(k * length, first_cycle_end));
}

/// Source frame read by output frame i. The first k outputs stay inside the
/// first cycle so that they are a k-point resampling of frames [0, N).
inline std::size_t source_index(std::size_t i, std::size_t length, std::size_t first_cycle_end, std::size_t k) {
  const auto idx = round_half_up_ratio(i * first_cycle_end, k);
  const auto limit = i < k ? first_cycle_end : length;
  return std::min(idx, limit - 1);
}

inline SampledSequence sample(const RawSequence& seq, std::size_t k = kDefaultCycleFrames) {
  if (k < 2) throw std::invalid_argument("sample: k must be >= 2");
  const auto length = seq.length();
  if (length == 0) throw std::invalid_argument("sample: empty sequence '" + seq.id + "'");
  const auto n = seq.first_cycle_end;
  if (n < 1 || n > length) throw std::invalid_argument("sample: first_cycle_end out of range");
  const auto frames = sampled_length(length, n, k);
  const auto d = seq.channels();
  SampledSequence out;
  out.k = k;
  out.rate = static_cast<double>(k) / static_cast<double>(n);
  out.source_id = seq.id;
  out.frames = Array(Shape{frames, d});
  for (std::size_t i = 0; i < frames; ++i) {
    const auto src = source_index(i, length, n, k);
    for (std::size_t c = 0; c < d; ++c) out.frames.at(i, c) = seq.frames.at(src, c);
  }
  out.pad_mask.assign(frames, true);
  return out;
}

/// Start frames of the length-k, stride-k/2 windows; a trailing partial window is dropped.
inline std::vector<std::size_t> window_starts(std::size_t frames, std::size_t k) {
  if (k < 2 || k % 2 != 0) throw std::invalid_argument("windows: k must be even and >= 2");
  if (frames < k) {
    throw std::invalid_argument("windows: need at least k=" + std::to_string(k) + " frames, got " +
                                std::to_string(frames));
  }
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + k <= frames; s += k / 2) starts.push_back(s);
  return starts;
}

inline std::vector<Array> windows(const SampledSequence& seq, std::size_t k) {
  std::vector<Array> clips;
  for (auto s : window_starts(seq.length(), k)) clips.push_back(seq.frames.rows_slice(s, k));
  return clips;
}

/// Zero-pads every sequence to the longest F; padded frames are masked out.
/// Copy of `s` extended to `length` frames with masked zero rows.
inline SampledSequence pad_to(const SampledSequence& s, std::size_t length) {
  SampledSequence p = s;
  if (s.length() < length) {
    const auto d = s.frames.cols();
    std::vector<double> data(s.frames.values());
    data.resize(length * d, 0.0);
    p.frames = Array(Shape{length, d}, std::move(data));
    p.pad_mask.resize(length, false);
  }
  return p;
}

inline std::vector<SampledSequence> pad_batch(const std::vector<SampledSequence>& batch) {
  if (batch.empty()) throw std::invalid_argument("pad_batch: empty batch");
  std::size_t longest = 0;
  for (const auto& s : batch) longest = std::max(longest, s.length());
  std::vector<SampledSequence> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(pad_to(s, longest));
  return out;
}

}  // namespace fcarac
