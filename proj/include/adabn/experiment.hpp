#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "adabn/adabn.hpp"
#include "adabn/analysis.hpp"
#include "adabn/dataset.hpp"
#include "adabn/model.hpp"
#include "adabn/trainer.hpp"

namespace adabn {

struct GeneratorConfig {
  std::string kind = "blobs";  // "blobs" | "digits"
  std::size_t class_count = 4;
  std::size_t per_class = 500;
  std::size_t dim = 16;
  double separation = 4.0;
  std::size_t image_size = 12;
};

struct DomainConfig {
  std::string id;
  std::string role;  // "source" | "target"
  std::uint64_t seed = 0;
  std::optional<ShiftSpec> shift;
  std::vector<std::vector<double>> class_offsets;  // class-conditional shift, applied after `shift`
};

struct ModelConfig {
  std::string preset = "mlp";  // "mlp" | "convnet"
  std::vector<std::size_t> hidden{32, 32};
  std::size_t width = 8;
};

struct AdaptConfig {
  EstimationMode mode = EstimationMode::kSequential;
  std::size_t batch_size = 64;
  std::size_t batches = 0;  // 0: whole target set
};

struct AnalysisConfig {
  bool divergence = true;
  bool pilot = true;
  std::size_t pilot_batch_size = 16;
  bool sensitivity = true;
  std::vector<std::size_t> sensitivity_batch_counts{1, 2, 4, 8, 16, 32};
  std::size_t sensitivity_trials = 10;
};

struct ExperimentConfig {
  std::string experiment_id = "default";
  std::uint64_t seed = 0;
  GeneratorConfig generator;
  std::vector<DomainConfig> domains;
  ModelConfig model;
  TrainConfig train;
  AdaptConfig adapt;
  AnalysisConfig analysis;
  std::string output_dir = "runs/default";

  std::vector<const DomainConfig*> sources() const;
  std::vector<const DomainConfig*> targets() const;
};

// Strict parsing: unknown keys and wrong types throw ConfigError naming the
// JSON path of the offending key (e.g. "/train/base_lr").
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// The shipped default benchmark (also in configs/default.json).
ExperimentConfig default_config();

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);
// Hash of the canonical JSON form of the config.
std::string config_hash(const ExperimentConfig& cfg);

DomainDataset generate_domain(const ExperimentConfig& cfg, const DomainConfig& domain);
std::vector<DomainDataset> generate_domains(const ExperimentConfig& cfg);
Model build_model(const ExperimentConfig& cfg);

EstimationOptions estimation_options(const AdaptConfig& cfg);
std::string_view estimation_mode_name(EstimationMode mode);
EstimationMode parse_estimation_mode(std::string_view name);

// Outcome of a full gen -> train -> adapt -> eval -> analyze run.
struct AccuracyRow {
  std::string domain;
  std::string condition;  // "baseline" | "source_stats" | "adabn"
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

struct PipelineResult {
  std::vector<AccuracyRow> accuracy;
  std::vector<DivergenceReport> divergence;
  std::optional<PilotResult> pilot;
  std::optional<SensitivityTable> sensitivity;
  std::vector<std::string> assertion_failures;
  std::vector<std::string> files;  // written, relative to the run directory
};

// Runs the whole pipeline into `out_dir`, writing datasets, checkpoints,
// the training log, CSV tables, line-delimited JSON records and a manifest.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, bool overwrite);

}  // namespace adabn
