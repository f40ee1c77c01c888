#include "adabn/experiment.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <set>
#include <sstream>

#include "adabn/binary_io.hpp"
#include "adabn/checkpoint.hpp"
#include "adabn/errors.hpp"

namespace adabn {

using nlohmann::json;

namespace {

// ---- strict config reading ----

void expect_object(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(path + "/" + key + ": unknown key");
  }
}

const json* child(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

std::string read_string(const json& j, const char* key, const std::string& path, std::string fallback) {
  const json* v = child(j, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(path + "/" + key + ": expected a string");
  return v->get<std::string>();
}

double read_number(const json& j, const char* key, const std::string& path, double fallback) {
  const json* v = child(j, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError(path + "/" + key + ": expected a number");
  return v->get<double>();
}

std::uint64_t read_uint(const json& j, const char* key, const std::string& path, std::uint64_t fallback) {
  const json* v = child(j, key);
  if (!v) return fallback;
  if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
    throw ConfigError(path + "/" + key + ": expected a nonnegative integer");
  }
  return v->get<std::uint64_t>();
}

bool read_bool(const json& j, const char* key, const std::string& path, bool fallback) {
  const json* v = child(j, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(path + "/" + key + ": expected a boolean");
  return v->get<bool>();
}

std::vector<double> read_numbers(const json& v, const std::string& path) {
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array() || v.empty()) throw ConfigError(path + ": expected a number or a non-empty array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(path + "/" + std::to_string(i) + ": expected a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

std::vector<std::size_t> read_sizes(const json& j, const char* key, const std::string& path,
                                    std::vector<std::size_t> fallback) {
  const json* v = child(j, key);
  if (!v) return fallback;
  if (!v->is_array()) throw ConfigError(path + "/" + key + ": expected an array of integers");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    const json& e = (*v)[i];
    if (!e.is_number_integer() || e.get<std::int64_t>() < 0) {
      throw ConfigError(path + "/" + key + "/" + std::to_string(i) + ": expected a nonnegative integer");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

ShiftSpec parse_shift(const json& j, const std::string& path) {
  expect_object(j, path, {"input_shift", "input_scale", "rotation_angle", "noise_sigma", "seed"});
  ShiftSpec s;
  if (const json* v = child(j, "input_shift")) s.input_shift = read_numbers(*v, path + "/input_shift");
  if (const json* v = child(j, "input_scale")) s.input_scale = read_numbers(*v, path + "/input_scale");
  for (double x : s.input_scale)
    if (!(x > 0.0)) throw ConfigError(path + "/input_scale: scales must be positive");
  if (const json* v = child(j, "rotation_angle"); v && !v->is_null()) {
    if (!v->is_number()) throw ConfigError(path + "/rotation_angle: expected a number or null");
    s.rotation_angle = v->get<double>();
  }
  s.noise_sigma = read_number(j, "noise_sigma", path, 0.0);
  if (!(s.noise_sigma >= 0.0)) throw ConfigError(path + "/noise_sigma: must be nonnegative");
  s.seed = read_uint(j, "seed", path, 0);
  return s;
}

json shift_to_json(const ShiftSpec& s) {
  json j;
  j["input_shift"] = s.input_shift;
  j["input_scale"] = s.input_scale;
  j["rotation_angle"] = s.rotation_angle ? json(*s.rotation_angle) : json(nullptr);
  j["noise_sigma"] = s.noise_sigma;
  j["seed"] = s.seed;
  return j;
}

}  // namespace

std::vector<const DomainConfig*> ExperimentConfig::sources() const {
  std::vector<const DomainConfig*> out;
  for (const auto& d : domains)
    if (d.role == "source") out.push_back(&d);
  return out;
}

std::vector<const DomainConfig*> ExperimentConfig::targets() const {
  std::vector<const DomainConfig*> out;
  for (const auto& d : domains)
    if (d.role == "target") out.push_back(&d);
  return out;
}

std::string_view estimation_mode_name(EstimationMode mode) {
  return mode == EstimationMode::kSequential ? "sequential" : "simultaneous";
}

EstimationMode parse_estimation_mode(std::string_view name) {
  if (name == "sequential") return EstimationMode::kSequential;
  if (name == "simultaneous") return EstimationMode::kSimultaneous;
  throw ConfigError("estimation mode must be 'sequential' or 'simultaneous', got '" + std::string(name) + "'");
}

ExperimentConfig parse_config(const json& j) {
  expect_object(j, "", {"experiment_id", "seed", "generator", "domains", "model", "train", "adapt", "analysis",
                        "output_dir"});
  ExperimentConfig cfg;
  cfg.experiment_id = read_string(j, "experiment_id", "", cfg.experiment_id);
  if (cfg.experiment_id.empty()) throw ConfigError("/experiment_id: must be non-empty");
  cfg.seed = read_uint(j, "seed", "", 0);
  cfg.output_dir = read_string(j, "output_dir", "", cfg.output_dir);

  if (const json* g = child(j, "generator")) {
    const std::string p = "/generator";
    expect_object(*g, p, {"kind", "class_count", "per_class", "dim", "separation", "image_size"});
    auto& gc = cfg.generator;
    gc.kind = read_string(*g, "kind", p, gc.kind);
    if (gc.kind != "blobs" && gc.kind != "digits") throw ConfigError(p + "/kind: expected 'blobs' or 'digits'");
    gc.class_count = read_uint(*g, "class_count", p, gc.class_count);
    gc.per_class = read_uint(*g, "per_class", p, gc.per_class);
    gc.dim = read_uint(*g, "dim", p, gc.dim);
    gc.separation = read_number(*g, "separation", p, gc.separation);
    gc.image_size = read_uint(*g, "image_size", p, gc.image_size);
    if (gc.class_count == 0 || gc.per_class == 0 || gc.dim == 0) throw ConfigError(p + ": counts must be positive");
    if (!(gc.separation > 0.0)) throw ConfigError(p + "/separation: must be positive");
    if (gc.kind == "digits" && gc.image_size < 8) throw ConfigError(p + "/image_size: must be at least 8");
  }

  const json* doms = child(j, "domains");
  if (!doms || !doms->is_array() || doms->empty()) throw ConfigError("/domains: expected a non-empty array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < doms->size(); ++i) {
    const std::string p = "/domains/" + std::to_string(i);
    const json& d = (*doms)[i];
    expect_object(d, p, {"id", "role", "seed", "shift", "class_offsets"});
    DomainConfig dc;
    dc.id = read_string(d, "id", p, "");
    if (dc.id.empty()) throw ConfigError(p + "/id: required non-empty string");
    if (!ids.insert(dc.id).second) throw ConfigError(p + "/id: duplicate domain id '" + dc.id + "'");
    dc.role = read_string(d, "role", p, "");
    if (dc.role != "source" && dc.role != "target") throw ConfigError(p + "/role: expected 'source' or 'target'");
    dc.seed = read_uint(d, "seed", p, 0);
    if (const json* s = child(d, "shift"); s && !s->is_null()) dc.shift = parse_shift(*s, p + "/shift");
    if (const json* c = child(d, "class_offsets")) {
      if (!c->is_array()) throw ConfigError(p + "/class_offsets: expected an array");
      for (std::size_t k = 0; k < c->size(); ++k)
        dc.class_offsets.push_back(read_numbers((*c)[k], p + "/class_offsets/" + std::to_string(k)));
    }
    cfg.domains.push_back(std::move(dc));
  }
  if (cfg.sources().empty()) throw ConfigError("/domains: at least one source domain is required");

  if (const json* m = child(j, "model")) {
    const std::string p = "/model";
    expect_object(*m, p, {"preset", "hidden", "width"});
    cfg.model.preset = read_string(*m, "preset", p, cfg.model.preset);
    if (cfg.model.preset != "mlp" && cfg.model.preset != "convnet") {
      throw ConfigError(p + "/preset: expected 'mlp' or 'convnet'");
    }
    cfg.model.hidden = read_sizes(*m, "hidden", p, cfg.model.hidden);
    cfg.model.width = read_uint(*m, "width", p, cfg.model.width);
  }

  cfg.train.seed = cfg.seed;
  if (const json* t = child(j, "train")) {
    const std::string p = "/train";
    expect_object(*t, p, {"base_lr", "lr_drop_factor", "lr_drop_every", "epochs", "batch_size", "frozen_layers",
                          "per_layer_lr_scale", "validation_fraction", "seed"});
    auto& tc = cfg.train;
    tc.base_lr = read_number(*t, "base_lr", p, tc.base_lr);
    tc.lr_drop_factor = read_number(*t, "lr_drop_factor", p, tc.lr_drop_factor);
    tc.lr_drop_every = read_uint(*t, "lr_drop_every", p, tc.lr_drop_every);
    tc.epochs = read_uint(*t, "epochs", p, tc.epochs);
    tc.batch_size = read_uint(*t, "batch_size", p, tc.batch_size);
    tc.validation_fraction = read_number(*t, "validation_fraction", p, tc.validation_fraction);
    tc.seed = read_uint(*t, "seed", p, cfg.seed);
    if (const json* f = child(*t, "frozen_layers")) {
      if (!f->is_array()) throw ConfigError(p + "/frozen_layers: expected an array of strings");
      for (std::size_t i = 0; i < f->size(); ++i) {
        if (!(*f)[i].is_string()) throw ConfigError(p + "/frozen_layers/" + std::to_string(i) + ": expected a string");
        tc.frozen_layers.insert((*f)[i].get<std::string>());
      }
    }
    if (const json* s = child(*t, "per_layer_lr_scale")) {
      if (!s->is_object()) throw ConfigError(p + "/per_layer_lr_scale: expected an object");
      for (const auto& [k, v] : s->items()) {
        if (!v.is_number()) throw ConfigError(p + "/per_layer_lr_scale/" + k + ": expected a number");
        tc.per_layer_lr_scale[k] = v.get<double>();
      }
    }
    try {
      tc.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(p + ": " + e.what());
    }
  }

  if (const json* a = child(j, "adapt")) {
    const std::string p = "/adapt";
    expect_object(*a, p, {"estimation_mode", "batch_size", "batches"});
    try {
      cfg.adapt.mode = parse_estimation_mode(read_string(*a, "estimation_mode", p, "sequential"));
    } catch (const ConfigError& e) {
      throw ConfigError(p + "/estimation_mode: " + e.what());
    }
    cfg.adapt.batch_size = read_uint(*a, "batch_size", p, cfg.adapt.batch_size);
    cfg.adapt.batches = read_uint(*a, "batches", p, cfg.adapt.batches);
    if (cfg.adapt.batch_size == 0) throw ConfigError(p + "/batch_size: must be positive");
  }

  if (const json* a = child(j, "analysis")) {
    const std::string p = "/analysis";
    expect_object(*a, p, {"divergence", "pilot", "pilot_batch_size", "sensitivity", "sensitivity_batch_counts",
                          "sensitivity_trials"});
    auto& ac = cfg.analysis;
    ac.divergence = read_bool(*a, "divergence", p, ac.divergence);
    ac.pilot = read_bool(*a, "pilot", p, ac.pilot);
    ac.pilot_batch_size = read_uint(*a, "pilot_batch_size", p, ac.pilot_batch_size);
    ac.sensitivity = read_bool(*a, "sensitivity", p, ac.sensitivity);
    ac.sensitivity_batch_counts = read_sizes(*a, "sensitivity_batch_counts", p, ac.sensitivity_batch_counts);
    ac.sensitivity_trials = read_uint(*a, "sensitivity_trials", p, ac.sensitivity_trials);
    if (ac.sensitivity_trials == 0) throw ConfigError(p + "/sensitivity_trials: must be positive");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["experiment_id"] = cfg.experiment_id;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  const auto& g = cfg.generator;
  j["generator"] = {{"kind", g.kind},         {"class_count", g.class_count}, {"per_class", g.per_class},
                    {"dim", g.dim},           {"separation", g.separation},   {"image_size", g.image_size}};
  j["domains"] = json::array();
  for (const auto& d : cfg.domains) {
    json dj{{"id", d.id}, {"role", d.role}, {"seed", d.seed}};
    dj["shift"] = d.shift ? shift_to_json(*d.shift) : json(nullptr);
    if (!d.class_offsets.empty()) dj["class_offsets"] = d.class_offsets;
    j["domains"].push_back(std::move(dj));
  }
  j["model"] = {{"preset", cfg.model.preset}, {"hidden", cfg.model.hidden}, {"width", cfg.model.width}};
  const auto& t = cfg.train;
  j["train"] = {{"base_lr", t.base_lr},
                {"lr_drop_factor", t.lr_drop_factor},
                {"lr_drop_every", t.lr_drop_every},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"frozen_layers", t.frozen_layers},
                {"per_layer_lr_scale", t.per_layer_lr_scale},
                {"validation_fraction", t.validation_fraction},
                {"seed", t.seed}};
  j["adapt"] = {{"estimation_mode", std::string(estimation_mode_name(cfg.adapt.mode))},
                {"batch_size", cfg.adapt.batch_size},
                {"batches", cfg.adapt.batches}};
  const auto& a = cfg.analysis;
  j["analysis"] = {{"divergence", a.divergence},
                   {"pilot", a.pilot},
                   {"pilot_batch_size", a.pilot_batch_size},
                   {"sensitivity", a.sensitivity},
                   {"sensitivity_batch_counts", a.sensitivity_batch_counts},
                   {"sensitivity_trials", a.sensitivity_trials}};
  return j;
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.experiment_id = "default";
  cfg.seed = 2016;
  cfg.generator = {"blobs", 4, 600, 16, 4.0, 12};
  ShiftSpec shift;
  shift.input_shift.assign(16, 3.0);
  for (std::size_t i = 1; i < 16; i += 2) shift.input_shift[i] = -3.0;
  shift.input_scale = {1.5};
  shift.seed = 7;
  cfg.domains = {{"source", "source", 101, std::nullopt, {}}, {"target", "target", 202, shift, {}}};
  cfg.model = {"mlp", {32, 32}, 8};
  cfg.train.base_lr = 0.05;
  cfg.train.lr_drop_factor = 0.1;
  cfg.train.lr_drop_every = 40;
  cfg.train.epochs = 60;
  cfg.train.batch_size = 64;
  cfg.train.seed = cfg.seed;
  cfg.output_dir = "runs/default";
  return cfg;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(config_to_json(cfg).dump()); }

DomainDataset generate_domain(const ExperimentConfig& cfg, const DomainConfig& domain) {
  const auto& g = cfg.generator;
  DomainDataset d = g.kind == "digits" ? make_digits_grid(g.per_class, g.image_size, domain.seed, domain.id)
                                       : make_blobs(g.class_count, g.per_class, g.dim, g.separation, domain.seed, domain.id);
  if (domain.shift) d = shift_domain(d, *domain.shift, domain.id);
  if (!domain.class_offsets.empty()) d = shift_domain_class_conditional(d, domain.class_offsets, domain.id);
  return d;
}

std::vector<DomainDataset> generate_domains(const ExperimentConfig& cfg) {
  std::vector<DomainDataset> out;
  for (const auto& d : cfg.domains) out.push_back(generate_domain(cfg, d));
  return out;
}

Model build_model(const ExperimentConfig& cfg) {
  const auto& g = cfg.generator;
  if (cfg.model.preset == "convnet") {
    return make_convnet(1, g.kind == "digits" ? g.image_size : 12, g.kind == "digits" ? 10 : g.class_count, cfg.seed,
                        cfg.model.width);
  }
  if (g.kind == "digits") return make_mlp(g.image_size * g.image_size, cfg.model.hidden, 10, cfg.seed);
  return make_mlp(g.dim, cfg.model.hidden, g.class_count, cfg.seed);
}

EstimationOptions estimation_options(const AdaptConfig& cfg) {
  EstimationOptions o;
  o.mode = cfg.mode;
  o.batch_size = cfg.batch_size;
  return o;
}

namespace {

struct RunWriter {
  std::filesystem::path dir;
  bool overwrite;
  std::vector<std::string>& files;

  void text(const std::string& rel, const std::string& body) {
    io::write_text_file(dir / rel, body, overwrite);
    files.push_back(rel);
  }
};

json report_record(const ExperimentConfig& cfg, const std::string& hash, const std::string& kind) {
  return {{"experiment_id", cfg.experiment_id}, {"config_hash", hash}, {"seed", cfg.seed}, {"kind", kind}};
}

DomainDataset estimation_subset(const DomainDataset& target, const AdaptConfig& cfg) {
  if (cfg.batches == 0 || cfg.batches * cfg.batch_size >= target.size()) return target.without_labels();
  std::vector<std::size_t> rows(cfg.batches * cfg.batch_size);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return target.subset(rows).without_labels();
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, bool overwrite) {
  PipelineResult result;
  RunWriter w{out_dir, overwrite, result.files};
  const std::string hash = config_hash(cfg);
  std::ostringstream records;

  // gen
  const std::vector<DomainDataset> data = generate_domains(cfg);
  for (const auto& d : data) {
    const std::string rel = "data/" + d.domain_id + ".adset";
    save_dataset(d, out_dir / rel, overwrite);
    result.files.push_back(rel);
  }
  std::vector<DomainDataset> sources, targets;
  for (std::size_t i = 0; i < cfg.domains.size(); ++i) (cfg.domains[i].role == "source" ? sources : targets).push_back(data[i]);

  // train
  TrainResult trained = train(build_model(cfg), std::span<const DomainDataset>(sources), cfg.train);
  w.text("train_log.tsv", trained.log.to_tsv());
  const Model& model = trained.model;

  // One bank entry set per source domain. A single source keeps its running
  // statistics; several sources each get their own estimate.
  BnStatsBank bank;
  const EstimationOptions est = estimation_options(cfg.adapt);
  if (sources.size() == 1) {
    store_running_stats(bank, model, sources[0].domain_id);
  } else {
    for (const auto& s : sources) store_estimate(bank, s.domain_id, estimate_domain_stats(model, s.without_labels(), est));
  }
  const Provenance prov{cfg.seed, hash};
  save_checkpoint(make_checkpoint(model, bank, prov), out_dir / "model.ckpt", overwrite);
  result.files.push_back("model.ckpt");

  auto record_accuracy = [&](const std::string& domain, const std::string& condition, const Metrics& m) {
    result.accuracy.push_back({domain, condition, m.accuracy, m.mean_loss});
    json r = report_record(cfg, hash, "accuracy");
    r["domain"] = domain;
    r["condition"] = condition;
    r["accuracy"] = m.accuracy;
    r["mean_loss"] = m.mean_loss;
    records << r.dump() << '\n';
  };

  // eval: sources
  for (const auto& s : sources) {
    const Metrics base = evaluate(model, s);
    const Metrics own = evaluate(apply_domain(model, bank, s.domain_id), s);
    record_accuracy(s.domain_id, "baseline", base);
    record_accuracy(s.domain_id, "source_stats", own);
    if (sources.size() == 1 && own.accuracy != base.accuracy) {
      result.assertion_failures.push_back("source accuracy changed under its own statistics");
    }
  }

  // adapt + eval: targets
  BnStatsBank full_bank = bank;
  for (const auto& t : targets) {
    const Metrics base = evaluate(model, t);
    AdaptResult adapted = adapt(model, estimation_subset(t, cfg.adapt), t.domain_id, est, bank);
    const Metrics after = evaluate(adapted.model, t);
    record_accuracy(t.domain_id, "baseline", base);
    record_accuracy(t.domain_id, "adabn", after);
    for (const auto& warn : adapted.warnings) {
      json r = report_record(cfg, hash, "warning");
      r["message"] = warn;
      records << r.dump() << '\n';
    }
    if (!(after.accuracy > base.accuracy)) {
      result.assertion_failures.push_back("AdaBN did not improve target '" + t.domain_id + "'");
    }
    save_checkpoint(make_checkpoint(adapted.model, adapted.bank, prov), out_dir / ("adapted_" + t.domain_id + ".ckpt"),
                    overwrite);
    result.files.push_back("adapted_" + t.domain_id + ".ckpt");
    for (const auto& [key, stats] : adapted.bank.entries()) full_bank.put(key.first, key.second, stats);
  }

  {
    std::ostringstream csv;
    csv.precision(10);
    csv << "domain,condition,accuracy,mean_loss\n";
    for (const auto& r : result.accuracy) csv << r.domain << ',' << r.condition << ',' << r.accuracy << ',' << r.mean_loss << '\n';
    w.text("results.csv", csv.str());
  }

  // analyze (first source vs first target)
  if (!targets.empty()) {
    const DomainDataset& src = sources.front();
    const DomainDataset& tgt = targets.front();
    const auto layers = default_probe_layers(model);
    if (cfg.analysis.divergence) {
      result.divergence = feature_divergence_profile(model, src, tgt, layers, &full_bank, tgt.domain_id);
      w.text("divergence.csv", divergence_to_csv(result.divergence));
      for (const auto& d : result.divergence) {
        json r = report_record(cfg, hash, "divergence");
        r["layer"] = d.layer_name;
        r["condition"] = std::string(condition_name(d.condition));
        r["mean"] = d.mean;
        r["features"] = d.divergences.size();
        r["excluded_features"] = d.excluded_features;
        records << r.dump() << '\n';
      }
    }
    if (cfg.analysis.pilot) {
      const std::vector<DomainDataset> pair{src, tgt};
      result.pilot = pilot_separability(model, pair, layers, cfg.analysis.pilot_batch_size, cfg.seed);
      w.text("pilot_vectors.csv", stat_vectors_to_csv(result.pilot->vectors));
      for (const auto& [layer, acc] : result.pilot->accuracy) {
        json r = report_record(cfg, hash, "pilot");
        r["layer"] = layer;
        r["probe_accuracy"] = acc;
        r["test_vectors"] = result.pilot->test_count;
        records << r.dump() << '\n';
      }
    }
    if (cfg.analysis.sensitivity) {
      std::vector<std::size_t> counts = cfg.analysis.sensitivity_batch_counts;
      counts.push_back(0);
      result.sensitivity = sensitivity_sweep(model, tgt, counts, cfg.adapt.batch_size, cfg.analysis.sensitivity_trials,
                                             cfg.seed, est);
      w.text("sensitivity.csv", sensitivity_to_csv(*result.sensitivity));
      for (const auto& row : result.sensitivity->rows) {
        json r = report_record(cfg, hash, "sensitivity");
        r["batches"] = row.batch_count;
        r["mean_accuracy"] = row.mean_accuracy;
        r["std_accuracy"] = row.std_accuracy;
        r["with_replacement"] = row.with_replacement;
        records << r.dump() << '\n';
      }
    }
  }

  for (const auto& f : result.assertion_failures) {
    json r = report_record(cfg, hash, "assertion_failure");
    r["message"] = f;
    records << r.dump() << '\n';
  }
  w.text("report.jsonl", records.str());

  json manifest = report_record(cfg, hash, "manifest");
  manifest["tool_version"] = "1.0.0";
  manifest["config"] = config_to_json(cfg);
  manifest["files"] = json::array();
  for (const auto& f : result.files) {
    manifest["files"].push_back({{"path", f}, {"sha256", file_sha256(out_dir / f)}});
  }
  manifest["assertions_passed"] = result.assertion_failures.empty();
  io::write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n", overwrite);
  result.files.push_back("manifest.json");
  return result;
}

}  // namespace adabn
