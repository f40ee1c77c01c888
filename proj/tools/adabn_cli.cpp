// adabn: experiment driver for the BN / AdaBN library.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "adabn/adabn.hpp"
#include "adabn/analysis.hpp"
#include "adabn/binary_io.hpp"
#include "adabn/checkpoint.hpp"
#include "adabn/dataset.hpp"
#include "adabn/errors.hpp"
#include "adabn/experiment.hpp"
#include "adabn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace adabn;

namespace {

constexpr const char* kToolVersion = "1.0.0";

enum ExitCode { kOk = 0, kAssertion = 1, kUsage = 2, kIo = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool overwrite = false;
  std::string estimation_mode;
  std::optional<std::size_t> batches;
  std::optional<std::size_t> batch_size;
  std::string checkpoint;
  std::vector<std::string> data;
  std::string domain;
  std::string which;
};

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? default_config() : load_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (!o.estimation_mode.empty()) cfg.adapt.mode = parse_estimation_mode(o.estimation_mode);
  if (o.batches) cfg.adapt.batches = *o.batches;
  if (o.batch_size) cfg.adapt.batch_size = *o.batch_size;
  return cfg;
}

fs::path run_dir(const Options& o, const ExperimentConfig& cfg) { return o.out.empty() ? fs::path(cfg.output_dir) : fs::path(o.out); }

json file_entry(const fs::path& path, const std::string& label) {
  return {{"path", label}, {"sha256", file_sha256(path)}};
}

// Every verb leaves a manifest.<verb>[.<tag>].json naming its inputs and outputs.
void write_manifest(const fs::path& dir, const std::string& verb, json inputs, const std::vector<std::string>& outputs,
                    const std::string& hash, std::uint64_t seed, bool overwrite, const std::string& tag = "") {
  json m{{"command", verb}, {"tool_version", kToolVersion}, {"config_hash", hash}, {"seed", seed}};
  m["inputs"] = std::move(inputs);
  m["outputs"] = json::array();
  for (const auto& f : outputs) m["outputs"].push_back(file_entry(dir / f, f));
  io::write_text_file(dir / ("manifest." + verb + (tag.empty() ? "" : "." + tag) + ".json"), m.dump(2) + "\n", overwrite);
}

json input_files(const Options& o) {
  json in = json::array();
  if (!o.config.empty()) in.push_back(file_entry(o.config, o.config));
  if (!o.checkpoint.empty()) in.push_back(file_entry(o.checkpoint, o.checkpoint));
  for (const auto& d : o.data) in.push_back(file_entry(d, d));
  return in;
}

int cmd_gen_data(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const fs::path dir = run_dir(o, cfg);
  std::vector<std::string> outputs;
  for (const auto& d : generate_domains(cfg)) {
    const std::string rel = "data/" + d.domain_id + ".adset";
    save_dataset(d, dir / rel, o.overwrite);
    outputs.push_back(rel);
    std::cout << rel << '\t' << d.size() << " samples\n";
  }
  write_manifest(dir, "gen-data", input_files(o), outputs, config_hash(cfg), cfg.seed, o.overwrite);
  return kOk;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const fs::path dir = run_dir(o, cfg);
  std::vector<DomainDataset> sources;
  if (o.data.empty()) {
    for (const DomainConfig* d : cfg.sources()) sources.push_back(generate_domain(cfg, *d));
  } else {
    for (const auto& p : o.data) sources.push_back(load_dataset(p));
  }
  TrainResult r = train(build_model(cfg), std::span<const DomainDataset>(sources), cfg.train);
  BnStatsBank bank;
  if (sources.size() == 1) {
    store_running_stats(bank, r.model, sources[0].domain_id);
  } else {
    for (const auto& s : sources)
      store_estimate(bank, s.domain_id, estimate_domain_stats(r.model, s.without_labels(), estimation_options(cfg.adapt)));
  }
  const std::string hash = config_hash(cfg);
  save_checkpoint(make_checkpoint(r.model, bank, {cfg.seed, hash}), dir / "model.ckpt", o.overwrite);
  io::write_text_file(dir / "train_log.tsv", r.log.to_tsv(), o.overwrite);
  write_manifest(dir, "train", input_files(o), {"model.ckpt", "train_log.tsv"}, hash, cfg.seed, o.overwrite);
  const auto& last = r.log.epochs.empty() ? EpochRecord{} : r.log.epochs.back();
  std::printf("trained %zu epochs: val_accuracy %.6f\n", r.log.epochs.size(), last.val_accuracy);
  return kOk;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

int cmd_adapt(const Options& o) {
  require(!o.checkpoint.empty(), "adapt: --checkpoint is required");
  require(o.data.size() == 1, "adapt: exactly one --data file is required");
  require(!o.out.empty(), "adapt: --out is required");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const DomainDataset target = load_dataset(o.data[0]);
  const std::string domain = o.domain.empty() ? target.domain_id : o.domain;

  EstimationOptions est;
  if (!o.estimation_mode.empty()) est.mode = parse_estimation_mode(o.estimation_mode);
  if (o.batch_size) est.batch_size = *o.batch_size;
  DomainDataset used = target.without_labels();
  if (o.batches && *o.batches > 0 && *o.batches * est.batch_size < target.size()) {
    std::vector<std::size_t> rows(*o.batches * est.batch_size);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    used = used.subset(rows);
  }
  AdaptResult r = adapt(ckpt.model, used, domain, est, ckpt.bank);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';

  const fs::path dir = o.out;
  const std::string rel = "adapted_" + domain + ".ckpt";
  save_checkpoint(make_checkpoint(r.model, r.bank, ckpt.provenance), dir / rel, o.overwrite);
  write_manifest(dir, "adapt", input_files(o), {rel}, ckpt.provenance.config_hash, ckpt.provenance.seed, o.overwrite,
                 domain);
  std::cout << (dir / rel).string() << '\n';
  return kOk;
}

int cmd_eval(const Options& o) {
  require(!o.checkpoint.empty(), "eval: --checkpoint is required");
  require(o.data.size() == 1, "eval: exactly one --data file is required");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const DomainDataset data = load_dataset(o.data[0]);
  require(data.labeled(), "eval: dataset '" + o.data[0] + "' has no labels");
  const Model model = o.domain.empty() ? ckpt.model : apply_domain(ckpt.model, ckpt.bank, o.domain);
  const Metrics m = evaluate(model, data);

  json report{{"config_hash", ckpt.provenance.config_hash},
              {"seed", ckpt.provenance.seed},
              {"dataset", data.domain_id},
              {"statistics", model.active_domain().empty() ? std::string("running") : model.active_domain()},
              {"count", m.count},
              {"accuracy", m.accuracy},
              {"mean_loss", m.mean_loss}};
  json per_class = json::array();
  for (const auto& a : m.per_class_accuracy) per_class.push_back(a ? json(*a) : json(nullptr));
  report["per_class_accuracy"] = per_class;
  const std::string text = report.dump() + "\n";
  std::cout << text;
  if (!o.out.empty()) {
    const std::string rel = "eval_" + data.domain_id + (o.domain.empty() ? "" : "@" + o.domain) + ".json";
    io::write_text_file(fs::path(o.out) / rel, text, o.overwrite);
    write_manifest(o.out, "eval", input_files(o), {rel}, ckpt.provenance.config_hash, ckpt.provenance.seed,
                   o.overwrite, rel.substr(5, rel.size() - 10));
  }
  return kOk;
}

int cmd_analyze(const Options& o) {
  require(!o.checkpoint.empty(), "analyze: --checkpoint is required");
  require(!o.out.empty(), "analyze: --out is required");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  std::vector<DomainDataset> data;
  for (const auto& p : o.data) data.push_back(load_dataset(p));
  const fs::path dir = o.out;
  const auto layers = default_probe_layers(ckpt.model);
  EstimationOptions est;
  if (!o.estimation_mode.empty()) est.mode = parse_estimation_mode(o.estimation_mode);
  if (o.batch_size) est.batch_size = *o.batch_size;

  std::string rel;
  if (o.which == "divergence") {
    require(data.size() == 2, "analyze divergence: pass --data source --data target");
    AdaptResult adapted = adapt(ckpt.model, data[1].without_labels(), data[1].domain_id, est, ckpt.bank);
    const auto reports = feature_divergence_profile(ckpt.model, data[0], data[1], layers, &adapted.bank, data[1].domain_id);
    rel = "divergence.csv";
    io::write_text_file(dir / rel, divergence_to_csv(reports), o.overwrite);
    for (const auto& r : reports)
      std::printf("%s\t%s\tmean %.6f\n", r.layer_name.c_str(), std::string(condition_name(r.condition)).c_str(), r.mean);
  } else if (o.which == "pilot") {
    require(data.size() >= 2, "analyze pilot: pass at least two --data files");
    const auto r = pilot_separability(ckpt.model, data, layers, est.batch_size, ckpt.provenance.seed);
    rel = "pilot_vectors.csv";
    io::write_text_file(dir / rel, stat_vectors_to_csv(r.vectors), o.overwrite);
    for (const auto& [layer, acc] : r.accuracy) std::printf("%s\tprobe_accuracy %.6f\n", layer.c_str(), acc);
  } else if (o.which == "sensitivity") {
    require(data.size() == 1, "analyze sensitivity: pass one --data target file");
    std::vector<std::size_t> counts{1, 2, 4, 8, 16, 32, 0};
    if (o.batches) counts = {*o.batches, 0};
    const auto t = sensitivity_sweep(ckpt.model, data[0], counts, est.batch_size, 10, ckpt.provenance.seed, est);
    rel = "sensitivity.csv";
    io::write_text_file(dir / rel, sensitivity_to_csv(t), o.overwrite);
    std::printf("baseline\t%.6f\n", t.baseline_accuracy);
    for (const auto& row : t.rows)
      std::printf("%zu\t%.6f\t%.6f\n", row.batch_count, row.mean_accuracy, row.std_accuracy);
  } else {
    throw ConfigError("analyze: --which must be divergence, pilot or sensitivity");
  }
  write_manifest(dir, "analyze-" + o.which, input_files(o), {rel}, ckpt.provenance.config_hash, ckpt.provenance.seed,
                 o.overwrite);
  return kOk;
}

int cmd_repro(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const PipelineResult r = run_pipeline(cfg, run_dir(o, cfg), o.overwrite);
  std::printf("%-12s %-13s %9s\n", "domain", "condition", "accuracy");
  for (const auto& row : r.accuracy)
    std::printf("%-12s %-13s %9.4f\n", row.domain.c_str(), row.condition.c_str(), row.accuracy);
  for (const auto& f : r.assertion_failures) std::cerr << "assertion failed: " << f << '\n';
  return r.assertion_failures.empty() ? kOk : kAssertion;
}

int cmd_describe(const Options& o) {
  require(!o.checkpoint.empty(), "describe-checkpoint: --checkpoint is required");
  std::cout << describe_checkpoint(load_checkpoint(o.checkpoint));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch normalization and AdaBN experiments"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "Run directory");
    sub->add_flag("--overwrite", o.overwrite, "Replace existing outputs");
  };
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)");
    sub->add_option("--seed", o.seed, "Override the master seed");
  };
  auto add_estimation = [&](CLI::App* sub) {
    sub->add_option("--estimation-mode", o.estimation_mode, "sequential or simultaneous")
        ->check(CLI::IsMember({"sequential", "simultaneous"}));
    sub->add_option("--batches", o.batches, "Number of target mini-batches to estimate from (0 = all)");
    sub->add_option("--batch-size", o.batch_size, "Mini-batch size used for estimation")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the configured domains");
  add_config(gen);
  add_common(gen);

  auto* tr = app.add_subcommand("train", "Train on the source domains");
  add_config(tr);
  add_common(tr);
  tr->add_option("--data", o.data, "Source dataset files (default: generate from config)");

  auto* ad = app.add_subcommand("adapt", "Estimate target BN statistics and install them");
  add_common(ad);
  add_estimation(ad);
  ad->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  ad->add_option("--data", o.data, "Target dataset file")->required();
  ad->add_option("--domain", o.domain, "Domain id (default: the dataset's)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled dataset");
  add_common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  ev->add_option("--data", o.data, "Dataset file")->required();
  ev->add_option("--domain", o.domain, "Bank domain to normalize with (default: as stored)");

  auto* an = app.add_subcommand("analyze", "Divergence, pilot separability or sensitivity analysis");
  add_common(an);
  add_estimation(an);
  an->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  an->add_option("--data", o.data, "Dataset files")->required();
  an->add_option("--which", o.which, "divergence | pilot | sensitivity")
      ->required()
      ->check(CLI::IsMember({"divergence", "pilot", "sensitivity"}));

  auto* rp = app.add_subcommand("repro", "Run gen, train, adapt, eval and analyze end to end");
  add_config(rp);
  add_common(rp);
  add_estimation(rp);

  auto* ds = app.add_subcommand("describe-checkpoint", "Print a checkpoint summary");
  ds->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (tr->parsed()) return cmd_train(o);
    if (ad->parsed()) return cmd_adapt(o);
    if (ev->parsed()) return cmd_eval(o);
    if (an->parsed()) return cmd_analyze(o);
    if (rp->parsed()) return cmd_repro(o);
    if (ds->parsed()) return cmd_describe(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const IncompleteBankError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "file error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "file error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kAssertion;
  }
  return kUsage;
}
