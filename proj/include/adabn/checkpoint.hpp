#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "adabn/adabn.hpp"
#include "adabn/model.hpp"

namespace adabn {

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

// A model, its statistics bank and the domain currently installed in its BN
// layers. `model` is stored with running statistics only; on load the active
// domain (if any) is re-applied from the bank.
struct Checkpoint {
  Model model;
  BnStatsBank bank;
  std::string active_domain;
  Provenance provenance;
};

Checkpoint make_checkpoint(const Model& model, BnStatsBank bank, Provenance provenance = {});

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// All-or-nothing: either a fully validated checkpoint or an exception.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, bool overwrite = false);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Human-readable dump of the header, architecture and bank summary.
std::string describe_checkpoint(const Checkpoint& ckpt);

// Names of the sections that differ between two checkpoints. Sections:
// "architecture", "parameters", "running_stats", "bank", "active_domain",
// "provenance".
std::vector<std::string> diff_checkpoints(const Checkpoint& a, const Checkpoint& b);

}  // namespace adabn
