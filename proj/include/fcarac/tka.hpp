// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training knowledge augmentation: a bank of first-cycle embeddings from the
// training set, exhaustive top-K Euclidean retrieval, per-neighbour MTGC and
// fusion of the K+1 correlation maps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/autodiff.hpp"
#include "fcarac/checkpoint.hpp"
#include "fcarac/encoder.hpp"
#include "fcarac/mtgc.hpp"
#include "fcarac/sampling.hpp"
#include "fcarac/seqdata.hpp"

namespace fcarac {

struct StoreEntry {
  std::string id;
  Array embedding;  // k x D

  friend bool operator==(const StoreEntry&, const StoreEntry&) = default;
};

struct EmbeddingStore {
  std::vector<StoreEntry> entries;
  std::uint64_t refreshed_at = 0;

  std::size_t size() const noexcept { return entries.size(); }
};

/// Encodes the sampled first cycle of seq on its own and returns its k rows.
inline Array embed_first_cycle(SequenceEncoder& encoder, const RawSequence& seq, std::size_t k) {
  SampledSequence s = sample(seq, k);
  SampledSequence first;
  first.frames = s.frames.rows_slice(0, k);
  first.k = k;
  first.rate = s.rate;
  first.source_id = s.source_id;
  first.pad_mask.assign(k, true);
  Tape tape;
  return ops::slice_rows(encoder.encode(tape, first), 0, k).value();
}

inline EmbeddingStore build_store(SequenceEncoder& encoder, const std::vector<RawSequence>& train, std::size_t k) {
  if (train.empty()) throw std::invalid_argument("build_store: empty training set");
  EmbeddingStore store;
  store.entries.reserve(train.size());
  for (const auto& seq : train) store.entries.push_back({seq.id, embed_first_cycle(encoder, seq, k)});
  return store;
}

/// Re-encodes every entry with the current encoder; ids and order are kept.
inline void refresh(EmbeddingStore& store, SequenceEncoder& encoder, const std::vector<RawSequence>& train,
                    std::size_t k) {
  for (auto& e : store.entries) {
    const auto it = std::find_if(train.begin(), train.end(), [&](const RawSequence& s) { return s.id == e.id; });
    if (it == train.end()) throw std::invalid_argument("refresh: no training sequence for store id '" + e.id + "'");
    e.embedding = embed_first_cycle(encoder, *it, k);
  }
  ++store.refreshed_at;
}

struct Neighbor {
  std::size_t index;  // position in store.entries
  std::string id;
  double distance;
};

inline double euclidean(const Array& a, const Array& b) {
  require_same_shape(a, b, "euclidean");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

/// K nearest entries by Euclidean distance over all k*D components, ties by id.
/// exclude_id drops that entry from the candidates (self-retrieval guard).
inline std::vector<Neighbor> topk(const EmbeddingStore& store, const Array& query, std::size_t K,
                                  const std::optional<std::string>& exclude_id = std::nullopt) {
  std::vector<Neighbor> all;
  all.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entries[i];
    if (exclude_id && e.id == *exclude_id) continue;
    all.push_back({i, e.id, euclidean(query, e.embedding)});
  }
  if (K > all.size()) {
    throw std::invalid_argument("topk: K=" + std::to_string(K) + " exceeds store size " + std::to_string(all.size()));
  }
  const auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(K), all.end(), less);
  all.resize(K);
  return all;
}

/// Stacks MTGC of the own kernel (slot 0) and each neighbour (slots 1..K)
/// into F x S x (K+1).
inline Var augment(Var features, Var own_kernel, const std::vector<Array>& neighbors, const MtgcOptions& opt) {
  Tape& tape = *features.tape;
  std::vector<Var> slots;
  slots.push_back(mtgc(features, own_kernel, opt));
  for (const auto& nb : neighbors) {
    require_same_shape(nb, own_kernel.value(), "augment: neighbour kernel");
    slots.push_back(mtgc(features, tape.constant(nb), opt));
  }
  const auto frames = slots[0].value().rows();
  const auto scales = slots[0].value().cols();
  std::vector<Var> flat;
  for (auto& s : slots) flat.push_back(ops::reshape(s, Shape{frames * scales, 1}));
  return ops::reshape(ops::concat_cols(flat), Shape{frames, scales, slots.size()});
}

inline Array augment(const FeatureMap& fm, const CycleKernel& own, const std::vector<Array>& neighbors,
                     const MtgcOptions& opt) {
  Tape tape;
  return augment(tape.constant(fm.X), tape.constant(own.Xp), neighbors, opt).value();
}

enum class Fusion {
  average,            // fixed 1/(K+1) weights
  attention,          // sigmoid(Linear(G')) per slot
  attention_softmax,  // softmax over slots of Linear(G')
  max,                // nearest neighbour's slot only (own slot when K = 0)
};

inline const char* to_string(Fusion f) {
  switch (f) {
    case Fusion::average: return "average";
    case Fusion::attention: return "attention";
    case Fusion::attention_softmax: return "attention_softmax";
    case Fusion::max: return "max";
  }
  return "?";
}

inline Fusion fusion_from_string(const std::string& s) {
  if (s == "average") return Fusion::average;
  if (s == "attention") return Fusion::attention;
  if (s == "attention_softmax") return Fusion::attention_softmax;
  if (s == "max") return Fusion::max;
  throw std::invalid_argument("unknown fusion '" + s + "'");
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Learnable fusion of the slot axis. The affine map (K+1 -> K+1) is shared
/// across frames and scales.
class AttentionPool {
 public:
  AttentionPool() : AttentionPool(0, Fusion::attention) {}

  /// Biases start so each slot weighs min(1/(K+1), 0.95), i.e. the fused map
  /// begins as the slot average.
  AttentionPool(std::size_t K, Fusion fusion) : slots_(K + 1), fusion_(fusion) {
    weight_ = Parameter("pool.w", Array(Shape{slots_, slots_}));
    Array b(Shape{slots_});
    if (fusion == Fusion::attention) {
      b.fill(logit(std::min(1.0 / static_cast<double>(slots_), 0.95)));
    }
    bias_ = Parameter("pool.b", std::move(b));
  }

  std::size_t slots() const noexcept { return slots_; }
  Fusion fusion() const noexcept { return fusion_; }

  /// Slot weights W (F*S x K+1) for a stacked feature.
  Var weights(Var stacked) {
    Tape& tape = *stacked.tape;
    const auto& sv = stacked.value();
    if (sv.rank() != 3 || sv.dim(2) != slots_) {
      throw ShapeError("attention_pool: expected F x S x " + std::to_string(slots_) + ", got " +
                       shape_str(sv.shape()));
    }
    Var flat = ops::reshape(stacked, Shape{sv.dim(0) * sv.dim(1), slots_});
    switch (fusion_) {
      case Fusion::average:
        return tape.constant(Array(flat.shape(), 1.0 / static_cast<double>(slots_)));
      case Fusion::max: {
        Array w(flat.shape());
        const std::size_t pick = slots_ > 1 ? 1 : 0;
        for (std::size_t r = 0; r < w.rows(); ++r) w.at(r, pick) = 1.0;
        return tape.constant(std::move(w));
      }
      case Fusion::attention:
      case Fusion::attention_softmax: {
        Var logits = ops::add_row_bias(ops::matmul(flat, tape.param(weight_)), tape.param(bias_));
        return fusion_ == Fusion::attention ? ops::sigmoid(logits) : ops::softmax_rows(logits);
      }
    }
    throw std::logic_error("unreachable");
  }

  /// G''[f, s] = sum_i W[f, s, i] * G'[f, s, i].
  Var apply(Var stacked) {
    const auto& sv = stacked.value();
    Var w = weights(stacked);
    Var flat = ops::reshape(stacked, Shape{sv.dim(0) * sv.dim(1), slots_});
    return ops::reshape(ops::row_sum(ops::mul(w, flat)), Shape{sv.dim(0), sv.dim(1)});
  }

  std::vector<Parameter*> parameters() {
    if (fusion_ == Fusion::attention || fusion_ == Fusion::attention_softmax) return {&weight_, &bias_};
    return {};
  }

 private:
  std::size_t slots_;
  Fusion fusion_;
  Parameter weight_;
  Parameter bias_;
};

inline std::vector<NamedArray> store_to_named(const EmbeddingStore& store) {
  std::vector<NamedArray> out;
  out.push_back({"store.refreshed_at", Array::scalar(static_cast<double>(store.refreshed_at))});
  for (const auto& e : store.entries) out.push_back({"store/" + e.id, e.embedding});
  return out;
}

/// Collects every "store/<id>" entry (in container order).
inline EmbeddingStore store_from_named(const std::vector<NamedArray>& entries) {
  EmbeddingStore store;
  for (const auto& e : entries) {
    if (e.name == "store.refreshed_at") store.refreshed_at = static_cast<std::uint64_t>(e.value[0]);
    if (e.name.rfind("store/", 0) == 0) store.entries.push_back({e.name.substr(6), e.value});
  }
  return store;
}

}  // namespace fcarac
