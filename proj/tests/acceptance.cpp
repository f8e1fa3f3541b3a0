// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "fcarac/fcarac.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fcarac;
namespace fs = std::filesystem;
namespace ft = fcarac::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
  std::printf("criterion %d %s: %s  %s\n", id, title.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0, double e = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d, e);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst_op = 0.0, worst_e2e = 0.0;
  std::string worst_name;
  for (const auto& c : ft::op_gradient_suite()) {
    if (!(c.rel_error <= worst_op)) {
      worst_op = c.rel_error;
      worst_name = c.name;
    }
  }
  const auto e2e = ft::end_to_end_gradient_check();
  for (const auto& c : e2e) worst_e2e = std::max(worst_e2e, c.rel_error);
  const double t = seconds_since(t0);
  const bool pass = worst_op <= 1e-4 && worst_e2e <= 1e-3 && e2e.size() == 8 && t < 60;
  return {pass, fmt("ops max rel err %.2e", worst_op) + " (" + worst_name + "), " +
                    fmt("end-to-end max %.2e over %g params, %.1f s", worst_e2e, static_cast<double>(e2e.size()), t)};
}

Outcome oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double mtgc_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t F = 6 + rng() % 40, D = 1 + rng() % 8, k = 2 + 2 * (rng() % 3);
    const Array X = ft::random_array(Shape{F, D}, rng), K = ft::random_array(Shape{k, D}, rng);
    const std::vector<std::size_t> scales{3, 4, 5};
    const bool normalize = trial % 2 == 0;
    const auto g = mtgc(FeatureMap{X, std::vector<bool>(F, true)}, CycleKernel{K}, MtgcOptions{scales, normalize});
    const auto ref = ft::brute_mtgc(X, K, scales, normalize);
    for (std::size_t t = 0; t < F; ++t)
      for (std::size_t s = 0; s < scales.size(); ++s) mtgc_err = std::max(mtgc_err, std::abs(g.at(t, s) - ref[t][s]));
  }
  int topk_bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + rng() % 200, K = 1 + rng() % T;
    EmbeddingStore store;
    for (std::size_t i = 0; i < T; ++i) store.entries.push_back({"e" + std::to_string(i), ft::random_array(Shape{4, 3}, rng)});
    const auto q = ft::random_array(Shape{4, 3}, rng);
    const auto hits = topk(store, q, K);
    const auto ref = ft::brute_topk(store, q, K);
    bool same = hits.size() == ref.size();
    for (std::size_t i = 0; same && i < K; ++i) same = hits[i].id == ref[i];
    topk_bad += !same;
  }
  double dens_err = 0.0;
  for (auto rule : {SigmaRule::span, SigmaRule::bins})
    for (std::size_t k = 2; k <= 64; ++k) {
      const auto d = gaussian_cycle_density(k, rule);
      const auto e = ft::erf_density(k, rule);
      const auto q = ft::quadrature_density(k, rule);
      for (std::size_t i = 0; i < k; ++i)
        dens_err = std::max({dens_err, std::abs(d[i] - e[i]), std::abs(d[i] - q[i])});
    }
  const double t = seconds_since(t0);
  const bool pass = mtgc_err <= 1e-12 && topk_bad == 0 && dens_err <= 1e-10 && t < 60;
  return {pass, fmt("mtgc max err %.2e, topk mismatches %g/100, density max err %.2e, %.1f s", mtgc_err,
                    static_cast<double>(topk_bad), dens_err, t)};
}

Outcome metric_fixtures() {
  struct Case {
    std::vector<int> gts;
    std::vector<double> preds;
    double mae, obo;
  };
  const std::vector<Case> cases{
      {{4, 10}, {5.0, 8.0}, 0.225, 0.5},
      {{3, 7, 12}, {3.0, 7.0, 12.0}, 0.0, 1.0},
      {{2}, {0.0}, 1.0, 0.0},
      {{4, 4, 4, 4}, {3.0, 5.0, 6.0, 1.5}, 0.40625, 0.5},
      {{8}, {10.0}, 0.25, 0.0},
  };
  int bad = 0;
  for (const auto& c : cases) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < c.gts.size(); ++i) ids.push_back("f" + std::to_string(i));
    const auto r = score_counts(ids, c.gts, c.preds);
    bad += !(r.mae == c.mae && r.obo == c.obo);
  }
  bool zero_rejected = false;
  try {
    score_counts({"z"}, {0}, {1.0});
  } catch (const DataError&) {
    zero_rejected = true;
  }
  return {bad == 0 && zero_rejected,
          fmt("%g/%g fixtures exact, zero count rejected: ", static_cast<double>(cases.size() - bad),
              static_cast<double>(cases.size())) +
              (zero_rejected ? "yes" : "no")};
}

RawSequence ramp(std::size_t length, std::size_t first_cycle_end) {
  RawSequence s;
  s.id = "ramp";
  s.frames = Array(Shape{length, 1});
  for (std::size_t t = 0; t < length; ++t) s.frames.at(t, 0) = static_cast<double>(t);
  s.first_cycle_end = first_cycle_end;
  s.count = 1;
  return s;
}

Outcome sampling_law() {
  std::mt19937_64 rng(77);
  int bad_len = 0, bad_cycle = 0, bad_dup = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 80;
    const std::size_t l = n + rng() % 800;
    const auto s = sample(ramp(l, n), 4);
    bad_len += s.length() != static_cast<std::size_t>(std::floor(4.0 * static_cast<double>(l) / n + 0.5));
    // The first four sampled frames come from the first cycle.
    int inside = 0;
    for (std::size_t i = 0; i < s.length(); ++i) inside += s.frames.at(i, 0) < static_cast<double>(n) && i < 4;
    bad_cycle += inside != 4;
    auto dup = ramp(2 * l, 2 * n);
    for (std::size_t t = 0; t < 2 * l; ++t) dup.frames.at(t, 0) = static_cast<double>(t / 2);
    const auto d = sample(dup, 4);
    bad_dup += (d.length() > s.length() ? d.length() - s.length() : s.length() - d.length()) > 1;
  }
  return {bad_len + bad_cycle + bad_dup == 0,
          fmt("100 pairs: length violations %g, first-cycle violations %g, duplication violations %g",
              static_cast<double>(bad_len), static_cast<double>(bad_cycle), static_cast<double>(bad_dup))};
}

// ---------------------------------------------------------------------------

Outcome learnability(Model& trained, std::vector<RawSequence>& train_out) {
  const auto t0 = Clock::now();
  SynthRanges r;  // pulse/sine/sawtooth, counts 2-15, drift 0.9-1.15, noise 0.05
  const auto train = generate_many(r, 300, 11, "tr");
  const auto test = generate_many(r, 60, 12, "te");
  Model m{Config{}};
  const auto untrained = evaluate(m, test);
  const auto mean = mean_count_baseline(train, test);
  pretrain(m, train);
  const auto e = evaluate(m, test);
  const double t = seconds_since(t0);
  trained = m;
  train_out = train;
  const bool pass = e.mae <= 0.35 && e.obo >= 0.4 && e.mae < untrained.mae && e.mae < mean.mae && t <= 900;
  return {pass, fmt("test MAE %.4f OBO %.3f; untrained MAE %.4f; mean-count MAE %.4f; %.1f s", e.mae, e.obo,
                    untrained.mae, mean.mae, t)};
}

Outcome tka_trend() {
  const auto t0 = Clock::now();
  SynthRanges r;
  Dataset ds;
  ds.channels = r.channels;
  ds.sequences = generate_many(r, 360, 21, "s");
  const auto split = resplit(ds, SplitMode::disjoint_types, 0);
  std::vector<RawSequence> train, test;
  for (const auto& id : split.train) train.push_back(ds.by_id(id));
  for (const auto& id : split.test) test.push_back(ds.by_id(id));
  Model base{Config{}};
  pretrain(base, train);
  std::map<std::size_t, EvalReport> by_k;
  for (std::size_t K : {0, 1, 5, 10}) {
    Model f = base;
    finetune(f, train, K, Fusion::attention);
    by_k[K] = evaluate(f, test);
  }
  std::ofstream csv("acceptance_tka_sweep.csv", std::ios::trunc);
  csv << "K,mae,obo\n";
  std::printf("  tka sweep (train type %s, test type %s):\n", train[0].type.c_str(), test[0].type.c_str());
  for (const auto& [K, rep] : by_k) {
    csv << K << ',' << fmt17(rep.mae) << ',' << fmt17(rep.obo) << '\n';
    std::printf("    K=%zu MAE %.4f OBO %.3f\n", K, rep.mae, rep.obo);
  }
  const double k0 = by_k[0].mae, k5 = by_k[5].mae;
  return {k5 <= k0 + 0.02, fmt("K=5 MAE %.4f vs K=0 MAE %.4f (+0.02 allowed); improvement %.4f; %.1f s", k5, k0,
                               k0 - k5, seconds_since(t0))};
}

bool same_bytes(const Array& a, const Array& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

Outcome tta_contract(Model& trained) {
  SynthRanges r;
  const auto seqs = generate_many(r, 100, 31, "tta");
  int non_increase = 0, frozen_ok = 0;
  for (const auto& seq : seqs) {
    Model m = trained;
    const auto before_mse = m.evaluate_sequence(seq).second.l_mse;
    const auto head = m.head_parameters();
    std::vector<std::pair<Parameter*, Array>> frozen;
    for (auto* p : m.parameters())
      if (std::find(head.begin(), head.end(), p) == head.end()) frozen.push_back({p, p->value});
    tta_adapt(m, seq, 10, 1e-4);
    bool ok = true;
    for (const auto& [p, v] : frozen) ok &= same_bytes(p->value, v);
    frozen_ok += ok;
    non_increase += m.evaluate_sequence(seq).second.l_mse <= before_mse;
  }
  return {frozen_ok == 100 && non_increase >= 95,
          fmt("MSE non-increasing on %g/100, non-head parameters identical on %g/100", non_increase, frozen_ok)};
}

// ---------------------------------------------------------------------------

int run(const std::string& args) {
  const std::string cmd = std::string(FCARAC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "fcarac_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "spec.json") << R"({"channels": 8})";
  std::ofstream(root / "cfg.txt") << "steps_pretrain = 150\nsteps_finetune = 30\n";
  const auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  std::vector<std::string> reports;
  int rc = 0;
  for (const auto* tag : {"a", "b"}) {
    const auto d = root / tag;
    rc |= run("generate --spec-file " + q(root / "spec.json") + " --out-dir " + q(d / "data") +
              " --seed 9 --n-train 60 --n-val 10 --n-test 20");
    rc |= run("pretrain --data " + q(d / "data") + " --config " + q(root / "cfg.txt") + " --seed 9 --out-checkpoint " +
              q(d / "pre.ckpt") + " --out-dir " + q(d / "pre"));
    rc |= run("finetune --checkpoint " + q(d / "pre.ckpt") + " --k 5 --data " + q(d / "data") + " --out-checkpoint " +
              q(d / "ft.ckpt") + " --out-dir " + q(d / "ft"));
    rc |= run("eval --checkpoint " + q(d / "ft.ckpt") + " --data " + q(d / "data") + " --split test --tta 2 --out-dir " +
              q(d / "eval"));
    rc |= run("sweep --checkpoint " + q(d / "pre.ckpt") + " --data " + q(d / "data") + " --ks 1,5 --out-dir " +
              q(d / "sweep"));
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "a");
    ++compared;
    differing += slurp(e.path()) != slurp(root / "b" / rel);
  }
  return {rc == 0 && compared > 0 && differing == 0,
          fmt("exit status %g; %g files compared, %g differ", rc, static_cast<double>(compared),
              static_cast<double>(differing))};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  report(1, "gradient suite", gradients());
  report(2, "oracle suite", oracles());
  report(3, "metric fixtures", metric_fixtures());
  report(4, "sampling law", sampling_law());
  Model trained{Config{}};
  std::vector<RawSequence> train;
  report(5, "learnability", learnability(trained, train));
  report(6, "tka trend", tka_trend());
  report(7, "tta contract", tta_contract(trained));
  report(8, "determinism", determinism());
  std::printf("acceptance: %d/8 passed in %.1f s\n", 8 - failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
