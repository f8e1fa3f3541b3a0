// SPDX-License-Identifier: Apache-2.0
#pragma once

// Full counting model: sample -> encode -> context (MTGC, MTGC+TKA, FC-V or
// V-V) -> prediction head -> density map. The density sum is the count.

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fcarac/baselines.hpp"
#include "fcarac/checkpoint.hpp"
#include "fcarac/config.hpp"
#include "fcarac/density.hpp"
#include "fcarac/encoder.hpp"
#include "fcarac/head.hpp"
#include "fcarac/mtgc.hpp"
#include "fcarac/optim.hpp"
#include "fcarac/sampling.hpp"
#include "fcarac/tka.hpp"

namespace fcarac {

/// Retrieval state used by the TKA forward pass.
struct TkaState {
  std::shared_ptr<const EmbeddingStore> store;
  std::size_t K = 0;
};

struct ForwardOptions {
  /// Use slot 0 of the stacked feature directly instead of the pool.
  bool bypass_pool = false;
};

struct ForwardOutput {
  Var features;  // F x D
  Var context;   // head input
  Var density;   // masked, length F
  std::vector<Neighbor> neighbors;
  std::vector<bool> pad_mask;  // mask of the frames actually fed forward
};

class Model {
 public:
  explicit Model(const Config& cfg)
      : Model(cfg, std::make_unique<TemporalEncoder>(cfg.in_channels, cfg.width, cfg.encoder_hidden, cfg.k,
                                                     cfg.seed * 7919 + 1)) {}

  Model(const Config& cfg, std::unique_ptr<SequenceEncoder> encoder) : cfg_(cfg), encoder_(std::move(encoder)) {
    cfg_.validate();
    cfg_.scales = canonical_scales(cfg_.scales);
    const auto d = encoder_->width();
    std::size_t head_in = cfg_.scales.size();
    if (cfg_.variant == Variant::fcv) {
      fcv_ = FirstCycleAttention(d, cfg_.attn_width, cfg_.seed * 7919 + 3);
      head_in = fcv_.out_width();
    } else if (cfg_.variant == Variant::vv) {
      vv_ = SelfSimilarity(d, cfg_.attn_width, cfg_.vv_channels, cfg_.vv_bins, cfg_.seed * 7919 + 4);
      head_in = vv_.out_width();
    }
    head_ = PredictionHead(head_in, cfg_.head_hidden[0], cfg_.head_hidden[1], cfg_.seed * 7919 + 2);
  }

  Model(const Model& o)
      : cfg_(o.cfg_),
        encoder_(o.encoder_->clone()),
        head_(o.head_),
        fcv_(o.fcv_),
        vv_(o.vv_),
        pool_(o.pool_),
        tka_(o.tka_) {}

  Model& operator=(const Model& o) {
    if (this != &o) {
      Model tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const Config& config() const noexcept { return cfg_; }
  SequenceEncoder& encoder() { return *encoder_; }
  PredictionHead& head() { return head_; }
  AttentionPool& pool() { return pool_; }
  MtgcOptions mtgc_options() const { return MtgcOptions{cfg_.scales, cfg_.normalize_mtgc}; }
  std::size_t min_frames() const { return std::max(cfg_.k, cfg_.scales.back()); }

  /// Switches inference and training to the retrieval-augmented path.
  void enable_tka(std::shared_ptr<const EmbeddingStore> store, std::size_t K, Fusion fusion) {
    if (cfg_.variant != Variant::fcarac) throw std::invalid_argument("TKA applies to the fcarac variant only");
    if (!store) throw std::invalid_argument("enable_tka: null store");
    pool_ = AttentionPool(K, fusion);
    tka_ = TkaState{std::move(store), K};
  }

  /// Replaces the store snapshot, keeping the pool.
  void set_store(std::shared_ptr<const EmbeddingStore> store) {
    if (!tka_) throw std::logic_error("set_store: TKA not enabled");
    tka_->store = std::move(store);
  }

  void disable_tka() { tka_.reset(); }
  const std::optional<TkaState>& tka() const noexcept { return tka_; }

  /// Taped forward on a sampled (possibly padded) sequence.
  /// Inputs shorter than the largest scale are padded with masked frames.
  ForwardOutput forward(Tape& tape, const SampledSequence& in, const ForwardOptions& opt = {}) {
    const SampledSequence s = pad_to(in, min_frames());
    ForwardOutput out;
    out.pad_mask = s.pad_mask;
    out.features = encoder_->encode(tape, s);
    switch (cfg_.variant) {
      case Variant::fcarac: {
        Var own = first_cycle(out.features, cfg_.k);
        if (!tka_) {
          out.context = mtgc(out.features, own, mtgc_options());
          break;
        }
        std::vector<Array> kernels;
        if (tka_->K > 0) {
          std::optional<std::string> exclude;
          if (cfg_.exclude_self) exclude = s.source_id;
          out.neighbors = topk(*tka_->store, own.value(), tka_->K, exclude);
          for (const auto& nb : out.neighbors) kernels.push_back(tka_->store->entries[nb.index].embedding);
        }
        Var stacked = augment(out.features, own, kernels, mtgc_options());
        if (opt.bypass_pool) {
          const auto& sv = stacked.value();
          std::vector<std::ptrdiff_t> idx(sv.dim(0) * sv.dim(1));
          for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::ptrdiff_t>(i * sv.dim(2));
          out.context = ops::gather(stacked, std::move(idx), Shape{sv.dim(0), sv.dim(1)});
        } else {
          out.context = pool_.apply(stacked);
        }
        break;
      }
      case Variant::fcv: out.context = fcv_.forward(out.features, cfg_.k); break;
      case Variant::vv: out.context = vv_.forward(out.features); break;
    }
    out.density = head_.forward(out.context, s.pad_mask);
    return out;
  }

  /// Density map and loss for one sequence on the current path.
  std::pair<DensityMap, LossReport> evaluate_sequence(const RawSequence& seq, const ForwardOptions& opt = {}) {
    const auto s = sample(seq, cfg_.k);
    Tape tape;
    auto out = forward(tape, s, opt);
    const auto gt = gaussian_cycle_density(cfg_.k, cfg_.sigma_rule);
    const auto terms = loss(out.density, gt, seq.count, cfg_.alpha);
    return {DensityMap{out.density.value(), out.pad_mask}, terms.report(cfg_.alpha)};
  }

  double predict_count(const RawSequence& seq) { return count_from_density(evaluate_sequence(seq).first); }

  std::vector<Parameter*> encoder_parameters() { return encoder_->parameters(); }
  std::vector<Parameter*> head_parameters() { return head_.parameters(); }
  std::vector<Parameter*> context_parameters() {
    if (cfg_.variant == Variant::fcv) return fcv_.parameters();
    if (cfg_.variant == Variant::vv) return vv_.parameters();
    return {};
  }
  std::vector<Parameter*> pool_parameters() { return tka_ ? pool_.parameters() : std::vector<Parameter*>{}; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> all = encoder_parameters();
    for (auto* p : context_parameters()) all.push_back(p);
    for (auto* p : pool_parameters()) all.push_back(p);
    for (auto* p : head_parameters()) all.push_back(p);
    return all;
  }

  /// Parameters updated by an optimizer under the current config.
  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out;
    if (!cfg_.freeze_encoder) out = encoder_parameters();
    for (auto* p : context_parameters()) out.push_back(p);
    for (auto* p : pool_parameters()) out.push_back(p);
    for (auto* p : head_parameters()) out.push_back(p);
    return out;
  }

  // -- checkpoint -----------------------------------------------------------

  std::vector<NamedArray> to_named() {
    std::vector<NamedArray> out;
    for (auto* p : parameters()) out.push_back({p->name, p->value});
    if (tka_) {
      out.push_back({"meta.tka_K", Array::scalar(static_cast<double>(tka_->K))});
      out.push_back({"meta.tka_fusion", Array::scalar(static_cast<double>(pool_.fusion()))});
      for (auto& e : store_to_named(*tka_->store)) out.push_back(std::move(e));
    }
    return out;
  }

  void load_named(const std::vector<NamedArray>& entries) {
    std::optional<std::size_t> K;
    std::optional<Fusion> fusion;
    for (const auto& e : entries) {
      if (e.name == "meta.tka_K") K = static_cast<std::size_t>(e.value[0]);
      if (e.name == "meta.tka_fusion") fusion = static_cast<Fusion>(static_cast<int>(e.value[0]));
    }
    if (K) enable_tka(std::make_shared<const EmbeddingStore>(store_from_named(entries)), *K, fusion.value_or(cfg_.fusion));
    else disable_tka();
    for (auto* p : parameters()) {
      const auto it = std::find_if(entries.begin(), entries.end(), [&](const NamedArray& e) { return e.name == p->name; });
      if (it == entries.end()) throw FormatError("checkpoint lacks parameter '" + p->name + "'");
      if (it->value.shape() != p->value.shape()) {
        throw FormatError("checkpoint parameter '" + p->name + "' has shape " + shape_str(it->value.shape()) +
                          ", model expects " + shape_str(p->value.shape()));
      }
      p->value = it->value;
      p->zero_grad();
    }
  }

 private:
  Config cfg_;
  std::unique_ptr<SequenceEncoder> encoder_;
  PredictionHead head_;
  FirstCycleAttention fcv_;
  SelfSimilarity vv_;
  AttentionPool pool_;
  std::optional<TkaState> tka_;
};

/// Pre-training path: MTGC over the sequence's own first cycle only.
inline std::pair<DensityMap, LossReport> forward_pretrain(Model& model, const RawSequence& seq) {
  Model plain = model;
  plain.disable_tka();
  return plain.evaluate_sequence(seq);
}

/// Retrieval-augmented path against `store` with K neighbours. The model's
/// pool must have K+1 slots unless bypass_pool is set.
inline std::pair<DensityMap, LossReport> forward_tka(Model& model, const RawSequence& seq,
                                                     std::shared_ptr<const EmbeddingStore> store, std::size_t K,
                                                     const ForwardOptions& opt = {}) {
  Model m = model;
  if (!m.tka() || m.pool().slots() != K + 1) m.enable_tka(store, K, model.config().fusion);
  else m.set_store(std::move(store));
  return m.evaluate_sequence(seq, opt);
}

/// Test-time adaptation: `steps` gradient-descent steps on the first-cycle MSE,
/// updating only the prediction head.
inline void tta_adapt(Model& model, const RawSequence& seq, long steps, double lr) {
  if (steps < 0) throw std::invalid_argument("tta_adapt: steps must be >= 0");
  if (steps == 0) return;
  const auto s = sample(seq, model.config().k);
  const auto gt = gaussian_cycle_density(model.config().k, model.config().sigma_rule);
  auto head = model.head_parameters();
  auto all = model.parameters();
  for (long i = 0; i < steps; ++i) {
    Tape tape;
    auto out = model.forward(tape, s);
    auto terms = loss(out.density, gt, seq.count, model.config().alpha);
    tape.backward(terms.mse);
    sgd_step(head, lr);
    zero_grads(all);
  }
}

inline void save_checkpoint(const std::filesystem::path& path, Model& model) {
  write_container(path, model.to_named());
  std::ofstream cfg(path.string() + ".cfg", std::ios::trunc);
  cfg << config_to_text(model.config());
  if (!cfg) throw std::runtime_error("cannot write " + path.string() + ".cfg");
}

/// Rebuilds a model from `path` and its sibling `path.cfg`.
inline Model load_checkpoint(const std::filesystem::path& path) {
  Config cfg = load_config(path.string() + ".cfg");
  Model model(cfg);
  model.load_named(read_container(path));
  return model;
}

}  // namespace fcarac
