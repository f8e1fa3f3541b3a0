// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fcarac/fcarac.hpp"

using namespace fcarac;
namespace fs = std::filesystem;

namespace {

Config small_config() {
  Config cfg;
  cfg.in_channels = 3;
  cfg.width = 8;
  cfg.encoder_hidden = 8;
  cfg.batch_size = 4;
  cfg.seed = 11;
  return cfg;
}

std::vector<RawSequence> small_set(std::size_t n, std::uint64_t seed) {
  SynthRanges r;
  r.channels = 3;
  r.count_max = 8;
  r.period_max = 16;
  r.noise_std = 0.0;
  return generate_many(r, n, seed, "m");
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fcarac_model_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double mean_total(Model& m, const std::vector<RawSequence>& seqs) {
  double acc = 0.0;
  for (const auto& s : seqs) acc += m.evaluate_sequence(s).second.total;
  return acc / static_cast<double>(seqs.size());
}

}  // namespace

TEST(Config, DefaultsMatchTheDocumentedValues) {
  const Config c;
  EXPECT_EQ(c.alpha, 10.0);
  EXPECT_EQ(c.k, 4u);
  EXPECT_EQ(c.scales, (std::vector<std::size_t>{3, 4, 5}));
  EXPECT_EQ(c.K, 5u);
  EXPECT_EQ(c.fusion, Fusion::attention);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesKeysCommentsAndOverrides) {
  const auto c = parse_config("# comment\nalpha = 20\nscales = 2,3,4,5,6  # trailing\nfusion = max\nround_counts = true\n");
  EXPECT_EQ(c.alpha, 20.0);
  EXPECT_EQ(c.scales, (std::vector<std::size_t>{2, 3, 4, 5, 6}));
  EXPECT_EQ(c.fusion, Fusion::max);
  EXPECT_TRUE(c.round_counts);
  const auto o = parse_config("K = 10\n", c);
  EXPECT_EQ(o.K, 10u);
  EXPECT_EQ(o.alpha, 20.0);
}

TEST(Config, BadInputRaisesConfigErrorWithLine) {
  try {
    parse_config("alpha = 1\nbogus = 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("alpha 3\n"), ConfigError);
  EXPECT_THROW(parse_config("alpha = x\n"), ConfigError);
  EXPECT_THROW(parse_config("k = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("alpha = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("fusion = median\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/cfg"), ConfigError);
}

TEST(Config, CanonicalTextRoundTripsAndHashIsStable) {
  Config c = small_config();
  c.alpha = 0.1;
  c.tta_lr = 1e-4;
  const auto text = config_to_text(c);
  const auto back = parse_config(text);
  EXPECT_EQ(config_to_text(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  c.alpha = 0.2;
  EXPECT_NE(config_hash(c), config_hash(back));
}

TEST(Model, ConstructionIsDeterministicInTheSeed) {
  Model a(small_config()), b(small_config());
  const auto na = a.to_named(), nb = b.to_named();
  ASSERT_EQ(na.size(), nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) EXPECT_EQ(na[i].value, nb[i].value);
  auto cfg = small_config();
  cfg.seed = 12;
  Model c(cfg);
  EXPECT_NE(c.to_named()[0].value, na[0].value);
}

TEST(Model, CopiesAreIndependent) {
  Model a(small_config());
  Model b = a;
  b.head().parameters()[0]->value[0] += 1.0;
  EXPECT_NE(a.head().parameters()[0]->value[0], b.head().parameters()[0]->value[0]);
}

TEST(Model, WrongChannelCountIsAShapeError) {
  Model m(small_config());
  SynthSpec spec;
  spec.channels = 5;
  EXPECT_THROW(m.evaluate_sequence(generate(spec, "x")), ShapeError);
}

TEST(Checkpoint, PretrainedRoundTripIsBitExact) {
  const auto dir = temp_dir("pre");
  Model m(small_config());
  const auto seqs = small_set(3, 1);
  save_checkpoint(dir / "m.ckpt", m);
  auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(config_to_text(back.config()), config_to_text(m.config()));
  EXPECT_FALSE(back.tka().has_value());
  for (const auto& s : seqs) EXPECT_EQ(back.evaluate_sequence(s).first.values, m.evaluate_sequence(s).first.values);
}

TEST(Checkpoint, TkaStateSurvivesTheRoundTrip) {
  const auto dir = temp_dir("tka");
  Model m(small_config());
  const auto train = small_set(8, 2);
  auto store = std::make_shared<EmbeddingStore>(build_store(m.encoder(), train, 4));
  m.enable_tka(store, 3, Fusion::attention_softmax);
  save_checkpoint(dir / "t.ckpt", m);
  auto back = load_checkpoint(dir / "t.ckpt");
  ASSERT_TRUE(back.tka().has_value());
  EXPECT_EQ(back.tka()->K, 3u);
  EXPECT_EQ(back.pool().fusion(), Fusion::attention_softmax);
  EXPECT_EQ(back.tka()->store->entries, store->entries);
  EXPECT_EQ(back.evaluate_sequence(train[0]).first.values, m.evaluate_sequence(train[0]).first.values);
}

TEST(Checkpoint, MissingOrCorruptFilesAreReported) {
  const auto dir = temp_dir("bad");
  EXPECT_ANY_THROW(load_checkpoint(dir / "none.ckpt"));
  Model m(small_config());
  save_checkpoint(dir / "c.ckpt", m);
  {
    std::ofstream f(dir / "c.ckpt", std::ios::binary | std::ios::trunc);
    f << "FCARAC01 truncated";
  }
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), FormatError);
}

TEST(Checkpoint, ShapeMismatchIsAFormatError) {
  const auto dir = temp_dir("shape");
  Model m(small_config());
  save_checkpoint(dir / "s.ckpt", m);
  auto cfg = small_config();
  cfg.width = 9;
  std::ofstream(dir / "s.ckpt.cfg", std::ios::trunc) << config_to_text(cfg);
  EXPECT_THROW(load_checkpoint(dir / "s.ckpt"), FormatError);
}

TEST(Train, PretrainingLowersTheLossAndIsReproducible) {
  auto cfg = small_config();
  cfg.steps_pretrain = 60;
  cfg.lr_pretrain = 3e-3;
  const auto train = small_set(16, 3);
  Model a(cfg), b(cfg);
  const double before = mean_total(a, train);
  const auto la = pretrain(a, train);
  const auto lb = pretrain(b, train);
  EXPECT_EQ(la.batch_loss, lb.batch_loss);
  EXPECT_EQ(la.batch_loss.size(), 60u);
  EXPECT_LT(mean_total(a, train), before);
}

TEST(Train, FrozenEncoderStaysFixed) {
  auto cfg = small_config();
  cfg.steps_pretrain = 5;
  cfg.freeze_encoder = true;
  const auto train = small_set(6, 4);
  Model m(cfg);
  const auto before = m.encoder().parameters()[0]->value;
  const auto head_before = m.head().parameters()[0]->value;
  pretrain(m, train);
  EXPECT_EQ(m.encoder().parameters()[0]->value, before);
  EXPECT_NE(m.head().parameters()[0]->value, head_before);
}

TEST(Train, FinetuneEnablesRetrievalWithAFreshStore) {
  auto cfg = small_config();
  cfg.steps_pretrain = 10;
  cfg.steps_finetune = 10;
  const auto train = small_set(10, 5);
  Model m(cfg);
  pretrain(m, train);
  finetune(m, train, 5, Fusion::attention);
  ASSERT_TRUE(m.tka().has_value());
  EXPECT_EQ(m.tka()->K, 5u);
  EXPECT_EQ(m.pool().slots(), 6u);
  // The final store reflects the final encoder.
  EXPECT_EQ(m.tka()->store->entries, build_store(m.encoder(), train, 4).entries);
  EXPECT_THROW(pretrain(m, {}), std::invalid_argument);
}
