// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "fcarac/model.hpp"

namespace fcarac {

struct TrainLog {
  std::vector<double> batch_loss;  // mean total loss per step
};

/// Called after every optimizer step with (step, mean batch loss).
using StepCallback = std::function<void(std::size_t, double)>;

namespace detail {

/// Deterministic epoch-wise shuffled batches of indices into [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : order_(n), batch_(batch), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  /// True when the returned batch starts a new epoch.
  bool next(std::vector<std::size_t>& out) {
    bool new_epoch = false;
    if (pos_ >= order_.size()) {
      reshuffle();
      new_epoch = true;
    }
    const auto end = std::min(order_.size(), pos_ + batch_);
    out.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_), order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return new_epoch;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

/// One optimizer step over a zero-padded batch; returns the mean total loss.
inline double train_batch(Model& model, const std::vector<const RawSequence*>& seqs,
                          const std::vector<SampledSequence>& sampled, double lr) {
  const auto& cfg = model.config();
  const auto padded = pad_batch(sampled);
  const auto gt = gaussian_cycle_density(cfg.k, cfg.sigma_rule);
  const double inv_b = 1.0 / static_cast<double>(seqs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Tape tape;
    auto out = model.forward(tape, padded[i]);
    auto terms = loss(out.density, gt, seqs[i]->count, cfg.alpha);
    total += terms.total.value()[0];
    tape.backward(ops::scale(terms.total, inv_b));
  }
  auto trainable = model.trainable_parameters();
  adam_step(trainable, AdamOptions{lr});
  zero_grads(model.parameters());
  return total * inv_b;
}

}  // namespace detail

/// Pre-training on the plain MTGC path.
inline TrainLog pretrain(Model& model, const std::vector<RawSequence>& train, const StepCallback& on_step = {}) {
  if (train.empty()) throw std::invalid_argument("pretrain: empty training set");
  const auto& cfg = model.config();
  model.disable_tka();
  std::vector<SampledSequence> sampled;
  for (const auto& s : train) sampled.push_back(sample(s, cfg.k));
  detail::BatchSampler batches(train.size(), cfg.batch_size, cfg.seed);
  TrainLog log;
  std::vector<std::size_t> idx;
  for (std::size_t step = 0; step < cfg.steps_pretrain; ++step) {
    batches.next(idx);
    std::vector<const RawSequence*> seqs;
    std::vector<SampledSequence> batch;
    for (auto i : idx) {
      seqs.push_back(&train[i]);
      batch.push_back(sampled[i]);
    }
    log.batch_loss.push_back(detail::train_batch(model, seqs, batch, cfg.lr_pretrain));
    if (on_step) on_step(step, log.batch_loss.back());
  }
  return log;
}

/// TKA fine-tuning with K neighbours: builds the store from the current
/// encoder, then trains the whole model, refreshing the store every epoch.
inline TrainLog finetune(Model& model, const std::vector<RawSequence>& train, std::size_t K, Fusion fusion,
                         const StepCallback& on_step = {}) {
  if (train.empty()) throw std::invalid_argument("finetune: empty training set");
  const auto& cfg = model.config();
  auto store = std::make_shared<EmbeddingStore>(build_store(model.encoder(), train, cfg.k));
  model.enable_tka(store, K, fusion);
  {
    auto params = model.parameters();
    reset_moments(params);
  }
  std::vector<SampledSequence> sampled;
  for (const auto& s : train) sampled.push_back(sample(s, cfg.k));
  detail::BatchSampler batches(train.size(), cfg.batch_size, cfg.seed + 1);
  TrainLog log;
  std::vector<std::size_t> idx;
  for (std::size_t step = 0; step < cfg.steps_finetune; ++step) {
    if (batches.next(idx)) {
      auto fresh = std::make_shared<EmbeddingStore>(*store);
      refresh(*fresh, model.encoder(), train, cfg.k);
      store = fresh;
      model.set_store(store);
    }
    std::vector<const RawSequence*> seqs;
    std::vector<SampledSequence> batch;
    for (auto i : idx) {
      seqs.push_back(&train[i]);
      batch.push_back(sampled[i]);
    }
    log.batch_loss.push_back(detail::train_batch(model, seqs, batch, cfg.lr_finetune));
    if (on_step) on_step(step, log.batch_loss.back());
  }
  // Leave the store aligned with the final encoder.
  auto fresh = std::make_shared<EmbeddingStore>(*store);
  refresh(*fresh, model.encoder(), train, cfg.k);
  model.set_store(fresh);
  return log;
}

inline TrainLog finetune(Model& model, const std::vector<RawSequence>& train, const StepCallback& on_step = {}) {
  return finetune(model, train, model.config().K, model.config().fusion, on_step);
}

}  // namespace fcarac
