#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "adabn/binary_io.hpp"
#include "adabn/checkpoint.hpp"
#include "adabn/errors.hpp"
#include "fixtures.hpp"
#include "tempdir.hpp"

using namespace adabn;

namespace {

// Random architecture with perturbed BN statistics and a bank of two domains.
Checkpoint random_checkpoint(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> width(1, 12), depth(0, 3);
  Model m;
  if (seed % 3 == 0) {
    m = make_convnet(1 + seed % 2, 8, 3, seed, width(rng) % 4 + 1);
  } else {
    std::vector<std::size_t> hidden(depth(rng));
    for (auto& h : hidden) h = width(rng);
    m = make_mlp(width(rng), hidden, 2 + width(rng) % 5, seed);
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  BnStatsBank bank;
  for (const auto& name : m.bn_names()) {
    BatchNormLayer& bn = m.bn(name);
    for (auto& v : bn.running_mean.data()) v = noise(rng);
    for (auto& v : bn.running_var.data()) v = std::abs(noise(rng)) + 0.1;
    for (const std::string d : {"alpha", "beta"}) {
      BnStats s{bn.running_mean, bn.running_var, 10 + seed};
      for (auto& v : s.mean.data()) v += noise(rng);
      bank.put(name, d, s);
    }
  }
  return make_checkpoint(m, bank, {seed, "hash" + std::to_string(seed)});
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Checkpoint, RandomArchitecturesRoundTripBitExact) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Checkpoint c = random_checkpoint(seed);
    const auto bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    EXPECT_EQ(encode_checkpoint(back), bytes) << seed;
    EXPECT_EQ(back.bank, c.bank);
    EXPECT_EQ(back.provenance, c.provenance);
    EXPECT_TRUE(diff_checkpoints(c, back).empty()) << seed;
  }
}

TEST(Checkpoint, SavedAdaptedModelPredictsIdentically) {
  TempDir dir;
  const auto& f = fixture::small_blobs();
  const AdaptResult a = adapt(f.model, f.target, "target");
  save_checkpoint(make_checkpoint(a.model, a.bank), dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.active_domain, "target");
  EXPECT_EQ(back.model.predict(f.target.inputs), a.model.predict(f.target.inputs));
}

TEST(Checkpoint, InstalledStatisticsMissingFromTheBankAreKept) {
  const auto& f = fixture::small_blobs();
  const AdaptResult a = adapt(f.model, f.target, "target");
  const Checkpoint c = decode_checkpoint(encode_checkpoint(make_checkpoint(a.model, BnStatsBank{})));
  EXPECT_TRUE(c.bank.has_domain("target"));
  EXPECT_EQ(c.model.predict(f.target.inputs), a.model.predict(f.target.inputs));
}

TEST(Checkpoint, BadMagicIsAFormatError) {
  auto bytes = encode_checkpoint(random_checkpoint(1));
  bytes[3] ^= 0xff;
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>{'A', 'D'}), FormatError);
}

TEST(Checkpoint, NewerVersionIsRejectedByNumber) {
  auto bytes = encode_checkpoint(random_checkpoint(2));
  bytes[8] = static_cast<std::uint8_t>(kCheckpointFormatVersion + 1);
  try {
    decode_checkpoint(bytes);
    FAIL() << "expected UnsupportedVersionError";
  } catch (const UnsupportedVersionError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(kCheckpointFormatVersion + 1)), std::string::npos);
  }
}

TEST(Checkpoint, EveryTruncationIsDetected) {
  const auto bytes = encode_checkpoint(random_checkpoint(4));
  for (std::size_t cut = 8; cut < bytes.size(); cut += 1 + bytes.size() / 97) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_checkpoint(part), TruncationError) << cut;
  }
}

TEST(Checkpoint, TruncationMessageNamesByteCounts) {
  TempDir dir;
  const auto bytes = encode_checkpoint(random_checkpoint(5));
  write_bytes(dir / "short.ckpt", std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3));
  try {
    load_checkpoint(dir / "short.ckpt");
    FAIL() << "expected TruncationError";
  } catch (const TruncationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("short.ckpt"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expected"), std::string::npos) << msg;
    EXPECT_NE(msg.find("available"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, TrailingBytesAreAFormatError) {
  auto bytes = encode_checkpoint(random_checkpoint(7));
  bytes.push_back(0);
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, NegativeRunningVarianceIsAValidationError) {
  Checkpoint c = random_checkpoint(8);
  const std::string name = c.model.bn_names().front();
  c.model.bn(name).running_var[0] = -1.0;
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), ValidationError);
}

TEST(Checkpoint, UnknownActiveDomainIsAValidationError) {
  Checkpoint c = random_checkpoint(10);
  c.active_domain = "ghost";
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), ValidationError);
}

TEST(Checkpoint, RefusesToOverwriteUnlessAsked) {
  TempDir dir;
  const Checkpoint c = random_checkpoint(11);
  save_checkpoint(c, dir / "c.ckpt");
  EXPECT_THROW(save_checkpoint(c, dir / "c.ckpt"), IoError);
  EXPECT_NO_THROW(save_checkpoint(c, dir / "c.ckpt", true));
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST(Checkpoint, DescribeListsLayersAndBank) {
  const auto& f = fixture::small_blobs();
  const AdaptResult a = adapt(f.model, f.target, "target");
  const std::string text = describe_checkpoint(make_checkpoint(a.model, a.bank, {2016, "abc"}));
  for (const std::string s : {"ADBNCKPT v1", "seed: 2016", "config_hash: abc", "bn1 (batchnorm)", "(bn2, target)",
                              "active_domain: target"}) {
    EXPECT_NE(text.find(s), std::string::npos) << s << "\n" << text;
  }
}

TEST(Checkpoint, AdaptationOnlyTouchesBankAndActiveDomain) {
  const auto& f = fixture::small_blobs();
  BnStatsBank bank;
  store_running_stats(bank, f.model, "source");
  const Checkpoint before = make_checkpoint(f.model, bank, {1, "h"});
  const AdaptResult a = adapt(f.model, f.target, "target", {}, bank);
  const Checkpoint after = decode_checkpoint(encode_checkpoint(make_checkpoint(a.model, a.bank, {1, "h"})));
  const auto diff = diff_checkpoints(before, after);
  EXPECT_EQ(diff, (std::vector<std::string>{"bank", "active_domain"}));
}

TEST(Checkpoint, DiffNamesChangedSections) {
  const Checkpoint a = random_checkpoint(13);
  Checkpoint b = a;
  b.provenance.seed += 1;
  EXPECT_EQ(diff_checkpoints(a, b), (std::vector<std::string>{"provenance"}));
  b = a;
  b.model.bn(b.model.bn_names().front()).running_mean[0] += 1.0;
  EXPECT_EQ(diff_checkpoints(a, b), (std::vector<std::string>{"running_stats"}));
  b = a;
  b.model.bn(b.model.bn_names().front()).gamma[0] += 1.0;
  EXPECT_EQ(diff_checkpoints(a, b), (std::vector<std::string>{"parameters"}));
  EXPECT_EQ(diff_checkpoints(a, random_checkpoint(14)).front(), "architecture");
}
