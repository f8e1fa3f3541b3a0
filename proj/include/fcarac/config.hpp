// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat "key = value" configuration. '#' starts a comment; unknown keys and
// malformed values are errors. Every key and its default:
//
//   alpha            10        weight of the first-cycle MSE term
//   k                4         frames per normalised first cycle (even)
//   scales           3,4,5     MTGC kernel lengths
//   K                5         TKA neighbours used when fine-tuning
//   lr_pretrain      8e-4
//   lr_finetune      2e-4
//   steps_pretrain   2000
//   steps_finetune   200
//   fusion           attention average | attention | attention_softmax | max
//   sigma_rule       span      span: sigma=(k-1)/6, bins: sigma=k/6
//   seed             1
//   batch_size       8
//   in_channels      8         per-frame input features
//   width            32        encoder feature width D
//   encoder_hidden   32
//   head_hidden      16,8
//   variant          fcarac    fcarac | fcv | vv
//   normalize_mtgc   true      divide MTGC columns by s*D
//   freeze_encoder   false
//   exclude_self     false     drop a sequence's own store entry at retrieval
//   attn_width       16        FC-V / V-V projection width d_k
//   vv_channels      32
//   vv_bins          16
//   tta_steps        0
//   tta_lr           1e-4
//   round_counts     false     round predicted counts before OBO

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/density.hpp"
#include "fcarac/seqdata.hpp"
#include "fcarac/tka.hpp"

namespace fcarac {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { fcarac, fcv, vv };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::fcarac: return "fcarac";
    case Variant::fcv: return "fcv";
    case Variant::vv: return "vv";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "fcarac" || s == "none") return Variant::fcarac;
  if (s == "fcv") return Variant::fcv;
  if (s == "vv") return Variant::vv;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

struct Config {
  double alpha = 10.0;
  std::size_t k = 4;
  std::vector<std::size_t> scales{3, 4, 5};
  std::size_t K = 5;
  double lr_pretrain = 8e-4;
  double lr_finetune = 2e-4;
  std::size_t steps_pretrain = 2000;
  std::size_t steps_finetune = 200;
  Fusion fusion = Fusion::attention;
  SigmaRule sigma_rule = SigmaRule::span;
  std::uint64_t seed = 1;
  std::size_t batch_size = 8;
  std::size_t in_channels = 8;
  std::size_t width = 32;
  std::size_t encoder_hidden = 32;
  std::vector<std::size_t> head_hidden{16, 8};
  Variant variant = Variant::fcarac;
  bool normalize_mtgc = true;
  bool freeze_encoder = false;
  bool exclude_self = false;
  std::size_t attn_width = 16;
  std::size_t vv_channels = 32;
  std::size_t vv_bins = 16;
  std::size_t tta_steps = 0;
  double tta_lr = 1e-4;
  bool round_counts = false;

  void validate() const {
    if (k < 2 || k % 2 != 0) throw ConfigError("k must be even and >= 2");
    if (scales.empty()) throw ConfigError("scales must not be empty");
    for (auto s : scales)
      if (s < 1) throw ConfigError("scales must be >= 1");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(lr_pretrain > 0.0) || !(lr_finetune > 0.0) || !(tta_lr > 0.0)) throw ConfigError("learning rates must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (head_hidden.size() != 2 || head_hidden[0] < 1 || head_hidden[1] < 1)
      throw ConfigError("head_hidden must list two positive widths");
    if (in_channels < 1 || width < 1 || encoder_hidden < 1 || attn_width < 1 || vv_channels < 1 || vv_bins < 1)
      throw ConfigError("layer widths must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": not a number: '" + v + "'");
  return d;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

}  // namespace detail

/// Applies one key/value pair to cfg.
inline void set_config_value(Config& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  try {
    if (key == "alpha") cfg.alpha = parse_double(key, value);
    else if (key == "k") cfg.k = parse_uint(key, value);
    else if (key == "scales") cfg.scales = parse_list(key, value);
    else if (key == "K") cfg.K = parse_uint(key, value);
    else if (key == "lr_pretrain") cfg.lr_pretrain = parse_double(key, value);
    else if (key == "lr_finetune") cfg.lr_finetune = parse_double(key, value);
    else if (key == "steps_pretrain") cfg.steps_pretrain = parse_uint(key, value);
    else if (key == "steps_finetune") cfg.steps_finetune = parse_uint(key, value);
    else if (key == "fusion") cfg.fusion = fusion_from_string(value);
    else if (key == "sigma_rule") cfg.sigma_rule = sigma_rule_from_string(value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_uint(key, value);
    else if (key == "in_channels") cfg.in_channels = parse_uint(key, value);
    else if (key == "width") cfg.width = parse_uint(key, value);
    else if (key == "encoder_hidden") cfg.encoder_hidden = parse_uint(key, value);
    else if (key == "head_hidden") cfg.head_hidden = parse_list(key, value);
    else if (key == "variant") cfg.variant = variant_from_string(value);
    else if (key == "normalize_mtgc") cfg.normalize_mtgc = parse_bool(key, value);
    else if (key == "freeze_encoder") cfg.freeze_encoder = parse_bool(key, value);
    else if (key == "exclude_self") cfg.exclude_self = parse_bool(key, value);
    else if (key == "attn_width") cfg.attn_width = parse_uint(key, value);
    else if (key == "vv_channels") cfg.vv_channels = parse_uint(key, value);
    else if (key == "vv_bins") cfg.vv_bins = parse_uint(key, value);
    else if (key == "tta_steps") cfg.tta_steps = parse_uint(key, value);
    else if (key == "tta_lr") cfg.tta_lr = parse_double(key, value);
    else if (key == "round_counts") cfg.round_counts = parse_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

inline Config parse_config(const std::string& text, Config cfg = {}) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text form: every key, fixed order.
inline std::string config_to_text(const Config& c) {
  using detail::fmt_double;
  using detail::join;
  std::string s;
  auto put = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  put("alpha", fmt_double(c.alpha));
  put("k", std::to_string(c.k));
  put("scales", join(c.scales));
  put("K", std::to_string(c.K));
  put("lr_pretrain", fmt_double(c.lr_pretrain));
  put("lr_finetune", fmt_double(c.lr_finetune));
  put("steps_pretrain", std::to_string(c.steps_pretrain));
  put("steps_finetune", std::to_string(c.steps_finetune));
  put("fusion", to_string(c.fusion));
  put("sigma_rule", to_string(c.sigma_rule));
  put("seed", std::to_string(c.seed));
  put("batch_size", std::to_string(c.batch_size));
  put("in_channels", std::to_string(c.in_channels));
  put("width", std::to_string(c.width));
  put("encoder_hidden", std::to_string(c.encoder_hidden));
  put("head_hidden", join(c.head_hidden));
  put("variant", to_string(c.variant));
  put("normalize_mtgc", c.normalize_mtgc ? "true" : "false");
  put("freeze_encoder", c.freeze_encoder ? "true" : "false");
  put("exclude_self", c.exclude_self ? "true" : "false");
  put("attn_width", std::to_string(c.attn_width));
  put("vv_channels", std::to_string(c.vv_channels));
  put("vv_bins", std::to_string(c.vv_bins));
  put("tta_steps", std::to_string(c.tta_steps));
  put("tta_lr", fmt_double(c.tta_lr));
  put("round_counts", c.round_counts ? "true" : "false");
  return s;
}

/// 16 hex digits of FNV-1a over the canonical text.
inline std::string config_hash(const Config& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_text(c))));
  return buf;
}

}  // namespace fcarac
