// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "fcarac/config.hpp"
#include "fcarac/model.hpp"
#include "fcarac/train.hpp"

namespace fcarac {

/// Video-scale reference scores on RepCount-A (not reachable with synthetic data).
inline constexpr double kRepCountReferenceMae = 0.268;
inline constexpr double kRepCountReferenceObo = 0.47;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalRecord {
  std::string id;
  int gt = 0;
  double pred = 0.0;
  double abs_err = 0.0;
};

struct EvalReport {
  double mae = 0.0;
  double obo = 0.0;
  std::size_t hits = 0;  // sequences with |gt - pred| <= 1
  std::vector<EvalRecord> records;
};

/// Mean relative count error and off-by-one accuracy over (gt, pred) pairs.
/// With round_pred, predictions are rounded to integers first.
inline EvalReport score_counts(const std::vector<std::string>& ids, const std::vector<int>& gts,
                               const std::vector<double>& preds, bool round_pred = false) {
  if (gts.size() != preds.size() || ids.size() != gts.size())
    throw std::invalid_argument("score_counts: length mismatch");
  if (gts.empty()) throw std::invalid_argument("score_counts: empty split");
  EvalReport r;
  double rel = 0.0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (gts[i] <= 0) throw DataError("sequence '" + ids[i] + "' has ground-truth count " + std::to_string(gts[i]));
    const double p = round_pred ? std::round(preds[i]) : preds[i];
    const double err = std::abs(static_cast<double>(gts[i]) - p);
    rel += err / static_cast<double>(gts[i]);
    if (err <= 1.0) ++r.hits;
    r.records.push_back({ids[i], gts[i], preds[i], err});
  }
  const double n = static_cast<double>(gts.size());
  r.mae = rel / n;
  r.obo = static_cast<double>(r.hits) / n;
  return r;
}

struct EvalOptions {
  std::size_t tta_steps = 0;
  double tta_lr = 1e-4;
  bool round_counts = false;
};

inline EvalOptions eval_options(const Config& cfg) { return EvalOptions{cfg.tta_steps, cfg.tta_lr, cfg.round_counts}; }

inline EvalReport evaluate(Model& model, const std::vector<RawSequence>& split, const EvalOptions& opt = {}) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<std::string> ids;
  std::vector<int> gts;
  std::vector<double> preds;
  for (const auto& seq : split) {
    if (seq.count <= 0) throw DataError("sequence '" + seq.id + "' has ground-truth count " + std::to_string(seq.count));
    ids.push_back(seq.id);
    gts.push_back(seq.count);
    if (opt.tta_steps > 0) {
      Model adapted = model;
      tta_adapt(adapted, seq, static_cast<long>(opt.tta_steps), opt.tta_lr);
      preds.push_back(adapted.predict_count(seq));
    } else {
      preds.push_back(model.predict_count(seq));
    }
  }
  return score_counts(ids, gts, preds, opt.round_counts);
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// summary.json: {"mae","obo","n","config_hash"}; details.csv: id,gt,pred,abs_err.
inline void write_report(const std::filesystem::path& dir, const EvalReport& r, const std::string& cfg_hash) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["mae"] = r.mae;
  j["obo"] = r.obo;
  j["n"] = r.records.size();
  j["config_hash"] = cfg_hash;
  std::ofstream(dir / "summary.json", std::ios::trunc) << j.dump(2) << '\n';
  std::ofstream d(dir / "details.csv", std::ios::trunc);
  d << "id,gt,pred,abs_err\n";
  for (const auto& rec : r.records) d << rec.id << ',' << rec.gt << ',' << fmt17(rec.pred) << ',' << fmt17(rec.abs_err) << '\n';
}

/// MAE/OBO of always predicting the mean training count.
inline EvalReport mean_count_baseline(const std::vector<RawSequence>& train, const std::vector<RawSequence>& test) {
  if (train.empty()) throw std::invalid_argument("mean_count_baseline: empty training set");
  double mean = 0.0;
  for (const auto& s : train) mean += s.count;
  mean /= static_cast<double>(train.size());
  std::vector<std::string> ids;
  std::vector<int> gts;
  for (const auto& s : test) {
    ids.push_back(s.id);
    gts.push_back(s.count);
  }
  return score_counts(ids, gts, std::vector<double>(test.size(), mean));
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationGrid {
  std::vector<std::vector<std::size_t>> scales{{4}, {3, 4, 5}, {2, 3, 4, 5, 6}};
  std::vector<std::size_t> Ks{0, 1, 5, 10};
  std::vector<Fusion> fusions{Fusion::average, Fusion::attention, Fusion::max};
  std::vector<double> alphas{0.0, 1.0, 10.0, 20.0};

  std::size_t cells() const { return scales.size() * Ks.size() * fusions.size() * alphas.size(); }
};

struct AblationCell {
  std::vector<std::size_t> scales;
  std::size_t K;
  Fusion fusion;
  double alpha;
};

/// Row-major enumeration: scales, then K, then fusion, then alpha.
inline std::vector<AblationCell> enumerate(const AblationGrid& g) {
  std::vector<AblationCell> out;
  for (const auto& s : g.scales)
    for (auto K : g.Ks)
      for (auto f : g.fusions)
        for (auto a : g.alphas) out.push_back({s, K, f, a});
  return out;
}

struct AblationRow {
  AblationCell cell;
  EvalReport report;
};

/// Trains and evaluates every cell. Pre-training is shared between cells with
/// the same (scales, alpha); K = 0 cells evaluate the pre-trained model.
inline std::vector<AblationRow> ablate(const AblationGrid& grid, const Config& base,
                                       const std::vector<RawSequence>& train, const std::vector<RawSequence>& test) {
  std::map<std::pair<std::vector<std::size_t>, double>, Model> pretrained;
  std::vector<AblationRow> rows;
  for (const auto& cell : enumerate(grid)) {
    Config cfg = base;
    cfg.scales = cell.scales;
    cfg.alpha = cell.alpha;
    cfg.K = cell.K;
    cfg.fusion = cell.fusion;
    const auto key = std::make_pair(canonical_scales(cell.scales), cell.alpha);
    auto it = pretrained.find(key);
    if (it == pretrained.end()) {
      Model m(cfg);
      pretrain(m, train);
      it = pretrained.emplace(key, std::move(m)).first;
    }
    Model model = it->second;
    if (cell.K > 0) finetune(model, train, cell.K, cell.fusion);
    rows.push_back({cell, evaluate(model, test, eval_options(cfg))});
  }
  return rows;
}

inline void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "scales,K,fusion,alpha,mae,obo\n";
  for (const auto& r : rows) {
    std::string sc;
    for (std::size_t i = 0; i < r.cell.scales.size(); ++i) sc += (i ? "-" : "") + std::to_string(r.cell.scales[i]);
    f << sc << ',' << r.cell.K << ',' << to_string(r.cell.fusion) << ',' << fmt17(r.cell.alpha) << ','
      << fmt17(r.report.mae) << ',' << fmt17(r.report.obo) << '\n';
  }
}

}  // namespace fcarac
