// SPDX-License-Identifier: Apache-2.0
#pragma once

// Annotated repetitive sequences: the in-memory model, a synthetic generator
// standing in for video datasets, and the on-disk dataset layout.
//
// Dataset directory:
//   annotations.jsonl   line 1: {"format":"fcarac-dataset","version":1,"channels":D,"sequences":n}
//                       then one {"id","length","first_cycle_end","count","type"} per sequence
//   frames/<id>.f64     length x channels little-endian float64, row-major
//
// Externally extracted per-frame features can be ingested by writing the same
// layout; "channels" may be omitted from the header and is then inferred from
// the first blob.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fcarac/array.hpp"
#include "fcarac/checkpoint.hpp"

namespace fcarac {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed dataset file. record_index is the 0-based sequence record
/// (header is -1) that failed to parse.
class ParseError : public std::runtime_error {
 public:
  ParseError(long record_index, const std::string& what)
      : std::runtime_error("record " + std::to_string(record_index) + ": " + what), record_index_(record_index) {}
  long record_index() const noexcept { return record_index_; }

 private:
  long record_index_;
};

enum class Waveform { pulse, sine, sawtooth };

inline const char* to_string(Waveform w) {
  switch (w) {
    case Waveform::pulse: return "pulse";
    case Waveform::sine: return "sine";
    case Waveform::sawtooth: return "sawtooth";
  }
  return "?";
}

inline Waveform waveform_from_string(const std::string& s) {
  if (s == "pulse") return Waveform::pulse;
  if (s == "sine") return Waveform::sine;
  if (s == "sawtooth") return Waveform::sawtooth;
  throw std::invalid_argument("unknown waveform '" + s + "'");
}

/// One waveform period evaluated at phase in [0, 1).
inline double waveform_value(Waveform w, double phase) {
  switch (w) {
    case Waveform::pulse:
      // Raised-cosine bump over the first 40% of the cycle.
      return phase < 0.4 ? 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * phase / 0.4)) : 0.0;
    case Waveform::sine: return std::sin(2.0 * std::numbers::pi * phase);
    case Waveform::sawtooth: return 2.0 * phase - 1.0;
  }
  return 0.0;
}

struct RawSequence {
  std::string id;
  Array frames;                   // L x D_in
  std::size_t first_cycle_end{};  // N: frames [0, N) form the first cycle
  int count{};
  std::string type;

  std::size_t length() const { return frames.rows(); }
  std::size_t channels() const { return frames.rank() == 2 ? frames.dim(1) : 0; }

  void validate() const {
    if (frames.rank() != 2) throw std::invalid_argument(id + ": frames must be L x D");
    if (first_cycle_end < 1 || first_cycle_end > length())
      throw std::invalid_argument(id + ": first_cycle_end must lie in [1, L]");
    if (count < 1) throw std::invalid_argument(id + ": count must be >= 1");
  }

  friend bool operator==(const RawSequence&, const RawSequence&) = default;
};

struct SynthSpec {
  std::size_t base_period = 16;
  int count = 5;
  double speed_drift = 1.0;
  double noise_std = 0.0;
  Waveform waveform = Waveform::pulse;
  std::size_t channels = 8;
  std::uint64_t seed = 0;
  std::size_t max_length = 4096;

  void validate() const {
    if (base_period < 4) throw std::invalid_argument("SynthSpec: base_period must be >= 4");
    if (count < 1) throw std::invalid_argument("SynthSpec: count must be >= 1");
    if (!(speed_drift >= 0.5 && speed_drift <= 2.0))
      throw std::invalid_argument("SynthSpec: speed_drift must lie in [0.5, 2.0]");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("SynthSpec: noise_std must be >= 0");
    if (channels < 1) throw std::invalid_argument("SynthSpec: channels must be >= 1");
  }
};

/// Frame lengths of each cycle: round(base_period * drift^c), at least 1.
inline std::vector<std::size_t> cycle_lengths(const SynthSpec& spec) {
  std::vector<std::size_t> out;
  for (int c = 0; c < spec.count; ++c) {
    const double p = static_cast<double>(spec.base_period) * std::pow(spec.speed_drift, c);
    out.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(p))));
  }
  return out;
}

/// Noise-free multichannel profile of one cycle. Each channel is an affine,
/// phase-shifted copy of the waveform; the mix is drawn from the spec seed.
class SynthProfile {
 public:
  explicit SynthProfile(const SynthSpec& spec) : waveform_(spec.waveform) {
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> amp(0.5, 1.5), shift(0.0, 1.0), off(-0.5, 0.5);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      amp_.push_back(amp(rng));
      shift_.push_back(shift(rng));
      offset_.push_back(off(rng));
    }
  }

  double at(std::size_t channel, double phase) const {
    double p = phase + shift_[channel];
    p -= std::floor(p);
    return amp_[channel] * waveform_value(waveform_, p) + offset_[channel];
  }

 private:
  Waveform waveform_;
  std::vector<double> amp_, shift_, offset_;
};

inline RawSequence generate(const SynthSpec& spec, std::string id = {}) {
  spec.validate();
  const auto lengths = cycle_lengths(spec);
  std::size_t total = 0;
  for (auto l : lengths) total += l;
  if (total > spec.max_length) {
    throw GenerationError("generated length " + std::to_string(total) + " exceeds max_length " +
                          std::to_string(spec.max_length));
  }
  const SynthProfile profile(spec);
  std::mt19937_64 noise_rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  Array frames(Shape{total, spec.channels});
  std::size_t t = 0;
  for (auto period : lengths) {
    for (std::size_t j = 0; j < period; ++j, ++t) {
      const double phase = static_cast<double>(j) / static_cast<double>(period);
      for (std::size_t c = 0; c < spec.channels; ++c) {
        double v = profile.at(c, phase);
        if (spec.noise_std > 0.0) v += spec.noise_std * noise(noise_rng);
        frames.at(t, c) = v;
      }
    }
  }
  RawSequence seq;
  seq.id = id.empty() ? "synth-" + std::to_string(spec.seed) : std::move(id);
  seq.frames = std::move(frames);
  seq.first_cycle_end = lengths.front();
  seq.count = spec.count;
  seq.type = to_string(spec.waveform);
  return seq;
}

/// Ranges from which random SynthSpecs are drawn.
struct SynthRanges {
  int count_min = 2;
  int count_max = 15;
  double drift_min = 0.9;
  double drift_max = 1.15;
  std::size_t period_min = 10;
  std::size_t period_max = 30;
  double noise_std = 0.05;
  std::vector<Waveform> waveforms{Waveform::pulse, Waveform::sine, Waveform::sawtooth};
  std::size_t channels = 8;
  std::size_t max_length = 4096;

  void validate() const {
    if (waveforms.empty()) throw std::invalid_argument("SynthRanges: no waveforms");
    if (count_min < 1 || count_max < count_min) throw std::invalid_argument("SynthRanges: bad count range");
    if (period_min < 4 || period_max < period_min) throw std::invalid_argument("SynthRanges: bad period range");
    if (!(drift_min >= 0.5 && drift_max <= 2.0 && drift_min <= drift_max))
      throw std::invalid_argument("SynthRanges: bad drift range");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("SynthRanges: noise_std must be >= 0");
    if (channels < 1) throw std::invalid_argument("SynthRanges: channels must be >= 1");
  }
};

/// Reads a generator spec file: a JSON object with any subset of the
/// SynthRanges fields ("waveforms" is a list of names). Unknown keys are errors.
inline SynthRanges ranges_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("generator spec must be a JSON object");
  SynthRanges r;
  for (const auto& [key, v] : j.items()) {
    if (key == "count_min") r.count_min = v.get<int>();
    else if (key == "count_max") r.count_max = v.get<int>();
    else if (key == "drift_min") r.drift_min = v.get<double>();
    else if (key == "drift_max") r.drift_max = v.get<double>();
    else if (key == "period_min") r.period_min = v.get<std::size_t>();
    else if (key == "period_max") r.period_max = v.get<std::size_t>();
    else if (key == "noise_std") r.noise_std = v.get<double>();
    else if (key == "channels") r.channels = v.get<std::size_t>();
    else if (key == "max_length") r.max_length = v.get<std::size_t>();
    else if (key == "waveforms") {
      r.waveforms.clear();
      for (const auto& w : v) r.waveforms.push_back(waveform_from_string(w.get<std::string>()));
    } else {
      throw std::invalid_argument("unknown generator spec key '" + key + "'");
    }
  }
  r.validate();
  return r;
}

inline SynthSpec draw_spec(const SynthRanges& r, std::mt19937_64& rng) {
  r.validate();
  SynthSpec s;
  s.count = std::uniform_int_distribution<int>(r.count_min, r.count_max)(rng);
  s.base_period = std::uniform_int_distribution<std::size_t>(r.period_min, r.period_max)(rng);
  s.speed_drift = std::uniform_real_distribution<double>(r.drift_min, r.drift_max)(rng);
  s.noise_std = r.noise_std;
  s.waveform = r.waveforms[std::uniform_int_distribution<std::size_t>(0, r.waveforms.size() - 1)(rng)];
  s.channels = r.channels;
  s.seed = rng();
  s.max_length = r.max_length;
  return s;
}

/// n sequences with ids "<prefix>-<index>"; deterministic given seed.
inline std::vector<RawSequence> generate_many(const SynthRanges& r, std::size_t n, std::uint64_t seed,
                                              const std::string& prefix) {
  std::mt19937_64 rng(seed);
  std::vector<RawSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%05zu", prefix.c_str(), i);
    out.push_back(generate(draw_spec(r, rng), buf));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files

struct Dataset {
  std::size_t channels = 0;
  std::vector<RawSequence> sequences;

  const RawSequence& by_id(const std::string& id) const {
    for (const auto& s : sequences)
      if (s.id == id) return s;
    throw std::out_of_range("no sequence with id '" + id + "'");
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline bool valid_sequence_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  std::ofstream ann(dir / "annotations.jsonl", std::ios::trunc);
  if (!ann) throw std::runtime_error("cannot write " + (dir / "annotations.jsonl").string());
  nlohmann::ordered_json header;
  header["format"] = "fcarac-dataset";
  header["version"] = 1;
  header["channels"] = ds.channels;
  header["sequences"] = ds.sequences.size();
  ann << header.dump() << '\n';
  for (const auto& s : ds.sequences) {
    s.validate();
    if (!valid_sequence_id(s.id)) throw std::invalid_argument("sequence id not file-safe: '" + s.id + "'");
    if (s.channels() != ds.channels) throw std::invalid_argument(s.id + ": channel count differs from dataset");
    nlohmann::ordered_json rec;
    rec["id"] = s.id;
    rec["length"] = s.length();
    rec["first_cycle_end"] = s.first_cycle_end;
    rec["count"] = s.count;
    rec["type"] = s.type;
    ann << rec.dump() << '\n';
    std::string blob;
    blob.reserve(s.frames.size() * 8);
    for (double v : s.frames.data()) detail::put_le<double>(blob, v);
    std::ofstream f(dir / "frames" / (s.id + ".f64"), std::ios::binary | std::ios::trunc);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw std::runtime_error("cannot write frames for " + s.id);
  }
}

/// Loads a dataset directory. Any malformed record aborts the whole load.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream ann(dir / "annotations.jsonl");
  if (!ann) throw std::runtime_error("cannot open " + (dir / "annotations.jsonl").string());

  std::string line;
  if (!std::getline(ann, line)) throw ParseError(-1, "missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(-1, std::string("header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "fcarac-dataset")
    throw ParseError(-1, "header: not an fcarac-dataset file");
  std::optional<std::size_t> channels;
  if (header.contains("channels")) channels = header["channels"].get<std::size_t>();
  std::optional<std::size_t> expected;
  if (header.contains("sequences")) expected = header["sequences"].get<std::size_t>();

  Dataset ds;
  long index = 0;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    RawSequence s;
    std::size_t length = 0;
    try {
      const auto rec = nlohmann::json::parse(line);
      s.id = rec.at("id").get<std::string>();
      length = rec.at("length").get<std::size_t>();
      s.first_cycle_end = rec.at("first_cycle_end").get<std::size_t>();
      s.count = rec.at("count").get<int>();
      s.type = rec.value("type", "");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(index, e.what());
    }
    if (!valid_sequence_id(s.id)) throw ParseError(index, "invalid id '" + s.id + "'");
    const auto blob_path = dir / "frames" / (s.id + ".f64");
    std::ifstream f(blob_path, std::ios::binary);
    if (!f) throw ParseError(index, "missing frames blob " + blob_path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (length == 0 || bytes.size() % (8 * length) != 0)
      throw ParseError(index, "frames blob size " + std::to_string(bytes.size()) + " inconsistent with length");
    const auto d = bytes.size() / (8 * length);
    if (!channels) channels = d;
    if (d != *channels) throw ParseError(index, "frames blob has " + std::to_string(d) + " channels, expected " +
                                                    std::to_string(*channels));
    detail::Reader r(bytes);
    std::vector<double> data(length * d);
    for (auto& v : data) v = r.get<double>();
    s.frames = Array(Shape{length, d}, std::move(data));
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw ParseError(index, e.what());
    }
    ds.sequences.push_back(std::move(s));
    ++index;
  }
  if (expected && *expected != ds.sequences.size()) {
    throw ParseError(index, "header declares " + std::to_string(*expected) + " sequences, file holds " +
                                std::to_string(ds.sequences.size()));
  }
  ds.channels = channels.value_or(0);
  return ds;
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitMode { regular, disjoint_types };

struct DatasetSplit {
  std::vector<std::string> train, val, test;
  bool disjoint = false;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 finalizer; spreads FNV's weak high bits.
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline DatasetSplit resplit(const Dataset& ds, SplitMode mode, std::uint64_t seed) {
  if (ds.sequences.empty()) throw std::invalid_argument("resplit: empty dataset");
  DatasetSplit split;
  if (mode == SplitMode::regular) {
    const std::string salt = std::to_string(seed) + ":";
    for (const auto& s : ds.sequences) {
      const double u = static_cast<double>(mix64(fnv1a(salt + s.id)) >> 11) * 0x1.0p-53;
      (u < 0.7 ? split.train : u < 0.8 ? split.val : split.test).push_back(s.id);
    }
    return split;
  }
  std::set<std::string> type_set;
  for (const auto& s : ds.sequences) type_set.insert(s.type);
  if (type_set.size() < 3) throw std::invalid_argument("resplit: disjoint mode needs at least 3 types");
  std::vector<std::string> types(type_set.begin(), type_set.end());
  std::mt19937_64 rng(seed);
  std::shuffle(types.begin(), types.end(), rng);
  const auto n = types.size();
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  std::map<std::string, int> where;  // 0 train, 1 val, 2 test
  for (std::size_t i = 0; i < n; ++i) where[types[i]] = i < n_test ? 2 : (i < n_test + n_val ? 1 : 0);
  for (const auto& s : ds.sequences) {
    const int w = where[s.type];
    (w == 0 ? split.train : w == 1 ? split.val : split.test).push_back(s.id);
  }
  split.disjoint = true;
  return split;
}

inline nlohmann::ordered_json split_to_json(const DatasetSplit& s) {
  nlohmann::ordered_json j;
  j["disjoint"] = s.disjoint;
  j["train"] = s.train;
  j["val"] = s.val;
  j["test"] = s.test;
  return j;
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
  DatasetSplit s;
  s.disjoint = j.value("disjoint", false);
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

inline std::vector<RawSequence> select(const Dataset& ds, const std::vector<std::string>& ids) {
  std::map<std::string, const RawSequence*> index;
  for (const auto& s : ds.sequences) index[s.id] = &s;
  std::vector<RawSequence> out;
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw std::out_of_range("split references unknown id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace fcarac
