// SPDX-License-Identifier: Apache-2.0
//
// fcarac: dataset generation, training, evaluation and report export.
//
// Exit codes: 0 ok, 1 other error, 2 missing checkpoint, 3 config parse
// failure, 4 evaluation on an empty split.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "fcarac/fcarac.hpp"

namespace fs = std::filesystem;
using namespace fcarac;
using nlohmann::ordered_json;

namespace {

/// step,loss per optimizer step.
void write_train_log(const fs::path& dir, const TrainLog& log) {
  fs::create_directories(dir);
  std::ofstream f(dir / "train_log.csv", std::ios::trunc);
  f << "step,loss\n";
  for (std::size_t i = 0; i < log.batch_loss.size(); ++i) f << i + 1 << ',' << fmt17(log.batch_loss[i]) << '\n';
}

struct ExitError : std::runtime_error {
  ExitError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + p.string());
}

std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("sha1 failed");
  std::string hex;
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string git_blob_sha1(const std::string& content) {
  return sha1_hex("blob " + std::to_string(content.size()) + '\0' + content);
}

/// Content hash of a dataset directory: the blob hash of a sorted listing of
/// "<blob sha1> <relative path>" lines over annotations and frame files.
std::string dataset_hash(const fs::path& dir) {
  std::vector<std::string> lines;
  lines.push_back(git_blob_sha1(read_file(dir / "annotations.jsonl")) + " annotations.jsonl");
  if (fs::exists(dir / "frames")) {
    for (const auto& e : fs::directory_iterator(dir / "frames")) {
      if (!e.is_regular_file()) continue;
      lines.push_back(git_blob_sha1(read_file(e.path())) + " frames/" + e.path().filename().string());
    }
  }
  std::sort(lines.begin(), lines.end(), [](const std::string& a, const std::string& b) {
    return a.substr(41) < b.substr(41);
  });
  std::string listing;
  for (const auto& l : lines) listing += l + '\n';
  return git_blob_sha1(listing);
}

void write_manifest(const fs::path& out_dir, const std::string& command, std::uint64_t seed, const Config* cfg,
                    const std::optional<fs::path>& data_dir) {
  ordered_json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config_hash"] = cfg ? config_hash(*cfg) : std::string();
  m["dataset_hash"] = data_dir ? dataset_hash(*data_dir) : std::string();
  write_file(out_dir / "manifest.json", m.dump(2) + '\n');
}

Config read_config(const std::string& path, const std::vector<std::string>& overrides) {
  try {
    Config cfg = path.empty() ? Config{} : load_config(path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
  } catch (const ConfigError& e) {
    throw ExitError(3, std::string("config: ") + e.what());
  }
}

struct LoadedData {
  Dataset ds;
  DatasetSplit split;
};

LoadedData read_data(const fs::path& dir) {
  LoadedData d;
  d.ds = load_dataset(dir);
  const auto split_path = dir / "split.json";
  if (fs::exists(split_path)) d.split = split_from_json(nlohmann::json::parse(read_file(split_path)));
  else if (!d.ds.sequences.empty()) d.split = resplit(d.ds, SplitMode::regular, 0);
  return d;
}

std::vector<RawSequence> split_part(const LoadedData& d, const std::string& name) {
  if (name == "train") return select(d.ds, d.split.train);
  if (name == "val") return select(d.ds, d.split.val);
  if (name == "test") return select(d.ds, d.split.test);
  if (name == "all") return d.ds.sequences;
  throw std::invalid_argument("unknown split '" + name + "'");
}

Model open_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw ExitError(2, "checkpoint not found: " + path.string());
  if (!fs::exists(path.string() + ".cfg")) throw ExitError(2, "checkpoint config not found: " + path.string() + ".cfg");
  try {
    return load_checkpoint(path);
  } catch (const ConfigError& e) {
    throw ExitError(3, std::string("checkpoint config: ") + e.what());
  }
}

void check_channels(const Config& cfg, const Dataset& ds) {
  if (!ds.sequences.empty() && cfg.in_channels != ds.channels)
    throw std::invalid_argument("config in_channels=" + std::to_string(cfg.in_channels) + " but dataset has " +
                                std::to_string(ds.channels) + " channels");
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(detail::parse_uint("list", detail::trim(item)));
  return out;
}

AblationGrid read_grid(const std::string& path) {
  AblationGrid g;
  if (path.empty()) return g;
  const auto j = nlohmann::json::parse(read_file(path));
  for (const auto& [key, v] : j.items()) {
    if (key == "scales") g.scales = v.get<std::vector<std::vector<std::size_t>>>();
    else if (key == "K") g.Ks = v.get<std::vector<std::size_t>>();
    else if (key == "fusion") {
      g.fusions.clear();
      for (const auto& f : v) g.fusions.push_back(fusion_from_string(f.get<std::string>()));
    } else if (key == "alpha") g.alphas = v.get<std::vector<double>>();
    else throw std::invalid_argument("unknown grid key '" + key + "'");
  }
  if (g.cells() == 0) throw std::invalid_argument("grid has no cells");
  return g;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"First-cycle-annotated repetition counting on per-frame feature sequences"};
  app.require_subcommand(1);

  // generate
  std::string spec_file, out_dir, resplit_mode;
  std::uint64_t seed = 1;
  std::size_t n_train = 300, n_val = 60, n_test = 60;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset with a split manifest");
  gen->add_option("--spec-file", spec_file, "JSON generator ranges");
  gen->add_option("--out-dir", out_dir, "Dataset directory")->required();
  gen->add_option("--seed", seed);
  gen->add_option("--n-train", n_train);
  gen->add_option("--n-val", n_val);
  gen->add_option("--n-test", n_test);
  gen->add_option("--resplit", resplit_mode, "Re-split the pooled sequences: regular | disjoint");

  // pretrain
  std::string data_dir, config_path, out_ckpt;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed_override;
  auto* pre = app.add_subcommand("pretrain", "Train the MTGC pipeline on the train split");
  pre->add_option("--data", data_dir)->required();
  pre->add_option("--config", config_path);
  pre->add_option("--set", overrides, "Config override key=value");
  pre->add_option("--seed", seed_override);
  pre->add_option("--out-checkpoint", out_ckpt)->required();
  pre->add_option("--out-dir", out_dir, "Manifest directory (default: checkpoint directory)");

  // finetune
  std::string ckpt;
  std::optional<std::size_t> K;
  std::string fusion_name;
  auto* fin = app.add_subcommand("finetune", "Fine-tune with top-K kernel augmentation");
  fin->add_option("--checkpoint", ckpt)->required();
  fin->add_option("--k", K, "Neighbours (default: config K)");
  fin->add_option("--fusion", fusion_name);
  fin->add_option("--data", data_dir)->required();
  fin->add_option("--out-checkpoint", out_ckpt, "Default: overwrite --checkpoint");
  fin->add_option("--out-dir", out_dir);

  // eval
  std::string split_name = "test", baseline;
  std::optional<std::size_t> tta;
  bool round_counts = false;
  auto* ev = app.add_subcommand("eval", "Evaluate MAE and OBO on a split");
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--split", split_name);
  ev->add_option("--baseline", baseline, "Expected variant: none | fcv | vv");
  ev->add_option("--tta", tta, "Test-time adaptation steps");
  ev->add_flag("--round", round_counts, "Round predicted counts");
  ev->add_option("--out-dir", out_dir)->required();

  // predict
  std::string seq_id;
  auto* pred = app.add_subcommand("predict", "Predict the count of one sequence");
  pred->add_option("--checkpoint", ckpt)->required();
  pred->add_option("--data", data_dir)->required();
  pred->add_option("--sequence", seq_id)->required();
  pred->add_option("--out-dir", out_dir, "Also write the density map CSV here");

  // ablate
  std::string grid_path;
  auto* abl = app.add_subcommand("ablate", "Train and evaluate a grid of scales x K x fusion x alpha");
  abl->add_option("--grid", grid_path, "JSON grid (default: full grid)");
  abl->add_option("--data", data_dir)->required();
  abl->add_option("--config", config_path);
  abl->add_option("--set", overrides);
  abl->add_option("--out-dir", out_dir)->required();

  // sweep
  std::string ks = "1,5,10";
  auto* sw = app.add_subcommand("sweep", "Fine-tune a checkpoint for each K and report test MAE/OBO");
  sw->add_option("--checkpoint", ckpt)->required();
  sw->add_option("--data", data_dir)->required();
  sw->add_option("--ks", ks);
  sw->add_option("--split", split_name);
  sw->add_option("--out-dir", out_dir)->required();

  // export
  auto* exp = app.add_subcommand("export", "Write predicted and ground-truth density CSVs");
  exp->add_option("--checkpoint", ckpt)->required();
  exp->add_option("--data", data_dir)->required();
  exp->add_option("--split", split_name);
  exp->add_option("--out-dir", out_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      SynthRanges ranges;
      if (!spec_file.empty()) ranges = ranges_from_json(nlohmann::json::parse(read_file(spec_file)));
      else ranges.validate();
      Dataset ds;
      ds.channels = ranges.channels;
      DatasetSplit split;
      auto add = [&](const char* prefix, std::size_t n, std::uint64_t s, std::vector<std::string>& ids) {
        for (auto& seq : generate_many(ranges, n, s, prefix)) {
          ids.push_back(seq.id);
          ds.sequences.push_back(std::move(seq));
        }
      };
      add("train", n_train, seed * 3 + 0, split.train);
      add("val", n_val, seed * 3 + 1, split.val);
      add("test", n_test, seed * 3 + 2, split.test);
      if (resplit_mode == "regular" || resplit_mode == "disjoint") {
        split = resplit(ds, resplit_mode == "regular" ? SplitMode::regular : SplitMode::disjoint_types, seed);
      } else if (!resplit_mode.empty()) {
        throw std::invalid_argument("--resplit must be regular or disjoint");
      }
      save_dataset(out_dir, ds);
      write_file(fs::path(out_dir) / "split.json", split_to_json(split).dump(2) + '\n');
      write_manifest(out_dir, "generate", seed, nullptr, fs::path(out_dir));
      std::cout << "wrote " << ds.sequences.size() << " sequences to " << out_dir << '\n';
    } else if (*pre) {
      Config cfg = read_config(config_path, overrides);
      if (seed_override) cfg.seed = *seed_override;
      const auto data = read_data(data_dir);
      check_channels(cfg, data.ds);
      Model model(cfg);
      const auto train = split_part(data, "train");
      const auto log = pretrain(model, train, [&](std::size_t step, double loss) {
        if ((step + 1) % 100 == 0) std::cerr << "step " << step + 1 << " loss " << loss << '\n';
      });
      save_checkpoint(out_ckpt, model);
      const fs::path mdir = out_dir.empty() ? fs::path(out_ckpt).parent_path() : fs::path(out_dir);
      write_train_log(mdir.empty() ? "." : mdir, log);
      write_manifest(mdir.empty() ? "." : mdir, "pretrain", cfg.seed, &cfg, fs::path(data_dir));
    } else if (*fin) {
      Model model = open_checkpoint(ckpt);
      const auto data = read_data(data_dir);
      const auto& cfg = model.config();
      const auto fusion = fusion_name.empty() ? cfg.fusion : fusion_from_string(fusion_name);
      model.disable_tka();
      const auto log = finetune(model, split_part(data, "train"), K.value_or(cfg.K), fusion);
      const auto target = out_ckpt.empty() ? ckpt : out_ckpt;
      save_checkpoint(target, model);
      const fs::path mdir = out_dir.empty() ? fs::path(target).parent_path() : fs::path(out_dir);
      write_train_log(mdir.empty() ? "." : mdir, log);
      write_manifest(mdir.empty() ? "." : mdir, "finetune", cfg.seed, &cfg, fs::path(data_dir));
    } else if (*ev) {
      Model model = open_checkpoint(ckpt);
      const auto& cfg = model.config();
      if (!baseline.empty() && variant_from_string(baseline) != cfg.variant)
        throw std::invalid_argument("checkpoint variant is " + std::string(to_string(cfg.variant)) +
                                    ", not " + baseline);
      const auto data = read_data(data_dir);
      const auto seqs = split_part(data, split_name);
      if (seqs.empty()) throw ExitError(4, "split '" + split_name + "' is empty");
      EvalOptions opt = eval_options(cfg);
      if (tta) opt.tta_steps = *tta;
      if (round_counts) opt.round_counts = true;
      const auto report = evaluate(model, seqs, opt);
      write_report(out_dir, report, config_hash(cfg));
      write_manifest(out_dir, "eval", cfg.seed, &cfg, fs::path(data_dir));
      std::cout << "mae " << fmt17(report.mae) << " obo " << fmt17(report.obo) << '\n';
    } else if (*pred) {
      Model model = open_checkpoint(ckpt);
      const auto data = read_data(data_dir);
      const auto& seq = data.ds.by_id(seq_id);
      const auto [map, rep] = model.evaluate_sequence(seq);
      std::cout << seq_id << " count " << fmt17(count_from_density(map)) << '\n';
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_density_csv(fs::path(out_dir) / (seq_id + ".density.csv"), map);
        write_manifest(out_dir, "predict", model.config().seed, &model.config(), fs::path(data_dir));
      }
    } else if (*abl) {
      const Config cfg = read_config(config_path, overrides);
      const auto grid = read_grid(grid_path);
      const auto data = read_data(data_dir);
      check_channels(cfg, data.ds);
      const auto test = split_part(data, "test");
      if (test.empty()) throw ExitError(4, "test split is empty");
      const auto rows = ablate(grid, cfg, split_part(data, "train"), test);
      fs::create_directories(out_dir);
      write_ablation_csv(fs::path(out_dir) / "ablation.csv", rows);
      write_manifest(out_dir, "ablate", cfg.seed, &cfg, fs::path(data_dir));
    } else if (*sw) {
      const Model base = open_checkpoint(ckpt);
      const auto data = read_data(data_dir);
      const auto seqs = split_part(data, split_name);
      if (seqs.empty()) throw ExitError(4, "split '" + split_name + "' is empty");
      const auto train = split_part(data, "train");
      fs::create_directories(out_dir);
      std::ofstream csv(fs::path(out_dir) / "tka_sweep.csv", std::ios::trunc);
      csv << "K,mae,obo\n";
      for (auto k : parse_sizes(ks)) {
        Model m = base;
        m.disable_tka();
        if (k > 0) finetune(m, train, k, m.config().fusion);
        const auto r = evaluate(m, seqs, eval_options(m.config()));
        csv << k << ',' << fmt17(r.mae) << ',' << fmt17(r.obo) << '\n';
      }
      write_manifest(out_dir, "sweep", base.config().seed, &base.config(), fs::path(data_dir));
    } else if (*exp) {
      Model model = open_checkpoint(ckpt);
      const auto data = read_data(data_dir);
      const auto seqs = split_part(data, split_name);
      if (seqs.empty()) throw ExitError(4, "split '" + split_name + "' is empty");
      const fs::path dir(out_dir);
      fs::create_directories(dir);
      for (const auto& seq : seqs) {
        const auto [map, rep] = model.evaluate_sequence(seq);
        write_density_csv(dir / (seq.id + ".pred.csv"), map);
        const auto s = sample(seq, model.config().k);
        write_density_csv(dir / (seq.id + ".gt.csv"), gt_density_for_sequence(seq, s, model.config().sigma_rule));
      }
      write_manifest(out_dir, "export", model.config().seed, &model.config(), fs::path(data_dir));
    }
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
