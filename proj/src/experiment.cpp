#include "varnn/experiment.hpp"

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json_util.hpp"

namespace varnn {

using nlohmann::json;
using detail::check_keys;
using detail::json_number;

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

CellKind cell_from_string(const std::string& s) {
  if (s == "gru") return CellKind::Gru;
  if (s == "lstm") return CellKind::Lstm;
  throw std::invalid_argument("config: cell must be 'gru' or 'lstm', got '" + s + "'");
}

const char* cell_to_string(CellKind k) { return k == CellKind::Gru ? "gru" : "lstm"; }

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.model.hidden < 1) throw std::invalid_argument("config: model.hidden must be >= 1");
  if (cfg.model.controls < 0) throw std::invalid_argument("config: model.controls must be >= 0");
  if (!(cfg.model.sample_rate > 0)) throw std::invalid_argument("config: model.sample_rate must be > 0");
  if (!(cfg.margins.spectral > 0.0 && cfg.margins.spectral < 1.0)) {
    throw std::invalid_argument("config: margins.spectral must be in (0, 1)");
  }
  if (!(cfg.margins.gate > 0.0 && cfg.margins.gate < 1.0)) {
    throw std::invalid_argument("config: margins.gate must be in (0, 1)");
  }
  if (!(cfg.train.learning_rate > 0.0)) {
    throw std::invalid_argument("config: train.learning_rate must be > 0");
  }
  if (cfg.train.batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
  if (cfg.train.tbptt_length < 1) throw std::invalid_argument("config: train.tbptt_length must be >= 1");
  if (cfg.train.epochs < 0) throw std::invalid_argument("config: train.epochs must be >= 0");
  if (cfg.train.loss != "mae") throw std::invalid_argument("config: train.loss must be 'mae'");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  try {
    check_keys(j, {"seed", "out_dir", "model", "margins", "train", "dataset", "measurement"},
               "config");
    cfg.seed = j.value("seed", uint64_t{0});
    cfg.out_dir = j.value("out_dir", std::string{});
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, {"cell", "hidden", "controls", "stable", "skip_gain", "sample_rate"},
                 "config model");
      cfg.model.cell = cell_from_string(m.value("cell", std::string("gru")));
      cfg.model.hidden = m.value("hidden", 16);
      cfg.model.controls = m.value("controls", 2);
      cfg.model.stable = m.value("stable", false);
      cfg.model.skip_gain = m.value("skip_gain", 1.0);
      cfg.model.sample_rate = m.value("sample_rate", 48000.0);
    }
    if (j.contains("margins")) {
      const json& m = j.at("margins");
      check_keys(m, {"spectral", "gate"}, "config margins");
      cfg.margins.spectral = m.value("spectral", 1e-3);
      cfg.margins.gate = m.value("gate", 1e-3);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t,
                 {"learning_rate", "weight_decay", "batch_size", "tbptt_length", "epochs", "loss"},
                 "config train");
      cfg.train.learning_rate = t.value("learning_rate", 3e-4);
      cfg.train.weight_decay = t.value("weight_decay", 0.0);
      cfg.train.batch_size = t.value("batch_size", 32);
      cfg.train.tbptt_length = t.value("tbptt_length", 1024);
      cfg.train.epochs = t.value("epochs", 10);
      cfg.train.loss = t.value("loss", std::string("mae"));
    }
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      check_keys(d, {"train_manifest", "eval_manifest", "synthetic"}, "config dataset");
      cfg.train_manifest = d.value("train_manifest", std::string{});
      cfg.eval_manifest = d.value("eval_manifest", std::string{});
      if (d.contains("synthetic")) {
        const json& s = d.at("synthetic");
        check_keys(s,
                   {"n_train", "n_eval", "sample_seconds", "sample_rate", "control_jitter",
                    "silence_seconds", "device"},
                   "config dataset.synthetic");
        SynthDatasetConfig sc;
        sc.n_train = s.value("n_train", 64);
        sc.n_eval = s.value("n_eval", 16);
        sc.sample_seconds = s.value("sample_seconds", 1.0);
        sc.sample_rate = s.value("sample_rate", 48000);
        sc.control_jitter = s.value("control_jitter", 0.25);
        sc.silence_seconds = s.value("silence_seconds", 0.0);
        if (s.contains("device")) {
          const json& dv = s.at("device");
          check_keys(dv, {"drive_db_max", "cutoff_min_hz", "cutoff_max_hz", "output_level"},
                     "config dataset.synthetic.device");
          sc.device.drive_db_max = dv.value("drive_db_max", 30.0);
          sc.device.cutoff_min_hz = dv.value("cutoff_min_hz", 500.0);
          sc.device.cutoff_max_hz = dv.value("cutoff_max_hz", 20000.0);
          sc.device.output_level = dv.value("output_level", 0.5);
        }
        cfg.synthetic = sc;
      }
    }
    if (j.contains("measurement")) {
      const json& m = j.at("measurement");
      check_keys(m,
                 {"sample_rate", "init_noise_seconds", "settle_seconds", "measure_seconds",
                  "init_noise_amplitude", "init_control_value", "smooth_cutoff_hz"},
                 "config measurement");
      cfg.measurement.sample_rate = m.value("sample_rate", 48000.0);
      cfg.measurement.init_noise_seconds = m.value("init_noise_seconds", 0.2);
      cfg.measurement.settle_seconds = m.value("settle_seconds", 1.0);
      cfg.measurement.measure_seconds = m.value("measure_seconds", 1.0);
      cfg.measurement.init_noise_amplitude = m.value("init_noise_amplitude", 1.0);
      cfg.measurement.init_control_value = m.value("init_control_value", 0.0);
      cfg.measurement.smooth_cutoff_hz = m.value("smooth_cutoff_hz", 10.0);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  cfg.train.seed = cfg.seed;
  if (cfg.model.stable && cfg.model.cell == CellKind::Lstm) {
    cfg.model.gate_mode = GateMode::coupled_stable(cfg.margins.gate);
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path.has_parent_path() ? path.parent_path() : ".");
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["model"] = {{"cell", cell_to_string(cfg.model.cell)}, {"hidden", cfg.model.hidden},
                {"controls", cfg.model.controls},         {"stable", cfg.model.stable},
                {"skip_gain", cfg.model.skip_gain},       {"sample_rate", cfg.model.sample_rate}};
  j["margins"] = {{"spectral", cfg.margins.spectral}, {"gate", cfg.margins.gate}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"weight_decay", cfg.train.weight_decay},
                {"batch_size", cfg.train.batch_size},
                {"tbptt_length", cfg.train.tbptt_length},
                {"epochs", cfg.train.epochs},
                {"loss", cfg.train.loss}};
  json d;
  d["train_manifest"] = cfg.train_manifest;
  d["eval_manifest"] = cfg.eval_manifest;
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    d["synthetic"] = {{"n_train", s.n_train},
                      {"n_eval", s.n_eval},
                      {"sample_seconds", s.sample_seconds},
                      {"sample_rate", s.sample_rate},
                      {"control_jitter", s.control_jitter},
                      {"silence_seconds", s.silence_seconds},
                      {"device",
                       {{"drive_db_max", s.device.drive_db_max},
                        {"cutoff_min_hz", s.device.cutoff_min_hz},
                        {"cutoff_max_hz", s.device.cutoff_max_hz},
                        {"output_level", s.device.output_level}}}};
  }
  j["dataset"] = d;
  j["measurement"] = {{"sample_rate", cfg.measurement.sample_rate},
                      {"init_noise_seconds", cfg.measurement.init_noise_seconds},
                      {"settle_seconds", cfg.measurement.settle_seconds},
                      {"measure_seconds", cfg.measurement.measure_seconds},
                      {"init_noise_amplitude", cfg.measurement.init_noise_amplitude},
                      {"init_control_value", cfg.measurement.init_control_value},
                      {"smooth_cutoff_hz", cfg.measurement.smooth_cutoff_hz}};
  return j.dump(2) + "\n";
}

ExperimentConfig apply_overrides(ExperimentConfig cfg, const CliOverrides& ov) {
  if (ov.seed) {
    cfg.seed = *ov.seed;
    cfg.train.seed = *ov.seed;
  }
  if (ov.out_dir) cfg.out_dir = *ov.out_dir;
  if (ov.cell) cfg.model.cell = cell_from_string(*ov.cell);
  if (ov.stable) cfg.model.stable = *ov.stable;
  if (cfg.model.stable && cfg.model.cell == CellKind::Lstm) {
    cfg.model.gate_mode = GateMode::coupled_stable(cfg.margins.gate);
  } else if (!cfg.model.stable) {
    cfg.model.gate_mode = GateMode::standard();
  }
  return cfg;
}

namespace {

std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg,
                                      const std::filesystem::path& out_dir) {
  if (!out_dir.empty()) return out_dir;
  if (!cfg.out_dir.empty()) return cfg.base_dir / cfg.out_dir;
  throw std::invalid_argument("no output directory (set out_dir in the config or pass --out)");
}

void echo_config(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  write_file_atomic(out_dir / "effective_config.json", experiment_config_json(cfg));
}

struct LoadedData {
  std::vector<Sample> train_samples;
  std::vector<Sample> eval_samples;
  NormalizationStats stats;
};

LoadedData load_training_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                              std::ostream& log) {
  std::filesystem::path train_man, eval_man, base;
  if (!cfg.train_manifest.empty()) {
    train_man = cfg.base_dir / cfg.train_manifest;
    eval_man = cfg.eval_manifest.empty() ? std::filesystem::path{} : cfg.base_dir / cfg.eval_manifest;
    base = train_man.parent_path();
  } else if (cfg.synthetic) {
    const auto data_dir = out_dir / "data";
    log << "generating synthetic dataset into " << data_dir.string() << "\n";
    generate_synthetic_dataset(*cfg.synthetic, data_dir, cfg.seed);
    train_man = data_dir / "train_manifest.json";
    eval_man = data_dir / "eval_manifest.json";
    base = data_dir;
  } else {
    throw std::invalid_argument("config: dataset section must name manifests or a synthetic config");
  }

  DatasetManifest tm = load_manifest(train_man);
  if (tm.entries.empty()) throw std::invalid_argument("train manifest has no samples");
  if (static_cast<int>(tm.control_names.size()) != cfg.model.controls) {
    throw std::invalid_argument("dataset has " + std::to_string(tm.control_names.size()) +
                                " controls but model.controls = " +
                                std::to_string(cfg.model.controls));
  }
  LoadedData d;
  auto [ts, st] = load_and_normalize(tm, train_man.parent_path(), std::nullopt);
  d.train_samples = std::move(ts);
  d.stats = st;
  if (!eval_man.empty() && std::filesystem::exists(eval_man)) {
    DatasetManifest em = load_manifest(eval_man);
    auto [es, st2] = load_and_normalize(em, eval_man.parent_path(), st);
    d.eval_samples = std::move(es);
  }
  return d;
}

void write_history_csv(const std::vector<EpochRow>& history, const std::filesystem::path& path) {
  std::string csv = "epoch,train_mae,eval_mae,eval_mae_db,constraints\n";
  for (const auto& r : history) {
    csv += std::to_string(r.epoch) + "," + fmt17(r.train_mae) + "," + fmt17(r.eval_mae) + "," +
           fmt17(r.eval_mae_db) + "," + (r.constraints_pass ? "pass" : "fail") + "\n";
  }
  write_file_atomic(path, csv);
}

Checkpoint make_checkpoint(const ExperimentConfig& cfg, const TrainResult& res,
                           const FreeParams& params, const NormalizationStats& stats) {
  Checkpoint ck;
  ck.config = cfg;
  ck.params = params;
  ck.adam = res.adam;
  ck.norm = stats;
  ck.rng_seed = cfg.seed;
  SeededRng rng(cfg.seed);
  const uint64_t* st = rng.state();
  std::copy(st, st + 4, ck.rng_state.begin());
  ck.spectral = res.spectral;
  ck.best_eval_mae = res.best_eval_mae;
  ck.best_epoch = res.best_epoch;
  return ck;
}

Checkpoint load_checkpoint_checked(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument("checkpoint not found: " + path.string());
  }
  return load_checkpoint(path);
}

}  // namespace

int cmd_synth_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir_arg,
                   bool force, std::ostream& log) {
  if (!cfg.synthetic) {
    throw std::invalid_argument("config: synth-data needs a dataset.synthetic section");
  }
  namespace fs = std::filesystem;
  const fs::path out_dir = resolve_out_dir(cfg, out_dir_arg);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
    throw std::invalid_argument("output directory " + out_dir.string() +
                                " is not empty (pass --force to overwrite)");
  }
  fs::create_directories(out_dir);
  generate_synthetic_dataset(*cfg.synthetic, out_dir, cfg.seed);
  echo_config(cfg, out_dir);
  log << "wrote " << cfg.synthetic->n_train << " train / " << cfg.synthetic->n_eval
      << " eval samples (" << cfg.synthetic->sample_seconds << " s at "
      << cfg.synthetic->sample_rate << " Hz) to " << out_dir.string() << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir_arg, int runs,
              std::ostream& log) {
  if (runs < 1) throw std::invalid_argument("--runs must be >= 1");
  namespace fs = std::filesystem;
  const fs::path out_dir = resolve_out_dir(cfg, out_dir_arg);
  fs::create_directories(out_dir);
  echo_config(cfg, out_dir);
  LoadedData data = load_training_data(cfg, out_dir, log);
  log << "training " << (cfg.model.stable ? "stable " : "") << cell_to_string(cfg.model.cell)
      << " (hidden " << cfg.model.hidden << ") on " << data.train_samples.size() << " samples\n";

  std::vector<double> best_losses;
  bool any_diverged = false;
  for (int r = 0; r < runs; ++r) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<uint64_t>(r);
    run_cfg.train.seed = run_cfg.seed;
    const fs::path run_dir = runs == 1 ? out_dir : out_dir / ("run_" + std::to_string(r));
    fs::create_directories(run_dir);

    TrainResult res = train(run_cfg.model, run_cfg.margins, run_cfg.train, data.train_samples,
                            data.eval_samples);
    write_history_csv(res.history, run_dir / "history.csv");
    for (const auto& row : res.history) {
      log << "run " << r << " epoch " << row.epoch << ": train_mae " << fmt17(row.train_mae)
          << " eval_mae_db " << fmt2(row.eval_mae_db) << " constraints "
          << (row.constraints_pass ? "pass" : "fail") << "\n";
    }
    if (res.diverged) {
      log << "run " << r << ": training diverged (non-finite loss); partial history kept\n";
      any_diverged = true;
      continue;
    }
    save_checkpoint(make_checkpoint(run_cfg, res, res.final_params, data.stats),
                    run_dir / "checkpoint_final.json");
    save_checkpoint(make_checkpoint(run_cfg, res, res.best_params, data.stats),
                    run_dir / "checkpoint_best.json");
    best_losses.push_back(res.best_eval_mae);
    log << "run " << r << ": best eval MAE " << fmt17(res.best_eval_mae) << " ("
        << fmt2(20.0 * std::log10(res.best_eval_mae)) << " dB) at epoch " << res.best_epoch
        << "\n";
  }

  if (static_cast<int>(best_losses.size()) >= 2) {
    RunAggregate agg = aggregate_runs(best_losses, 0.95);
    json j;
    j["n"] = agg.n;
    j["mean_linear"] = agg.mean_linear;
    j["ci_low_linear"] = agg.ci_low_linear;
    j["ci_high_linear"] = agg.ci_high_linear;
    j["mean_db"] = json_number(agg.mean_db);
    j["ci_low_db_offset"] = json_number(agg.ci_low_db_offset);
    j["ci_high_db_offset"] = json_number(agg.ci_high_db_offset);
    j["formatted"] = fmt2(agg.mean_db) + " (" + fmt2(agg.ci_low_db_offset) + ", +" +
                     fmt2(agg.ci_high_db_offset) + ")";
    write_file_atomic(out_dir / "runs_aggregate.json", j.dump(2) + "\n");
    log << "aggregate over " << agg.n << " runs: " << j["formatted"].get<std::string>() << " dB\n";
  }
  return any_diverged ? 1 : 0;
}

int cmd_eval(const std::filesystem::path& checkpoint_path,
             const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
             std::ostream& log) {
  Checkpoint ck = load_checkpoint_checked(checkpoint_path);
  DatasetManifest man = load_manifest(manifest_path);
  if (man.entries.empty()) throw std::invalid_argument("eval manifest has no samples");
  std::vector<Sample> samples =
      load_and_normalize(man, manifest_path.parent_path(), ck.norm).first;
  Model model = checkpoint_model(ck);
  const double linear = dataset_mae(model, samples);
  const double db = linear > 0.0 ? 20.0 * std::log10(linear)
                                 : -std::numeric_limits<double>::infinity();
  json j;
  j["manifest"] = manifest_path.filename().string();
  j["n_samples"] = samples.size();
  j["mae"] = linear;
  j["mae_db"] = json_number(db);
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "eval_report.json", j.dump(2) + "\n");
  log << "eval MAE " << fmt17(linear) << " (" << fmt2(db) << " dB) over " << samples.size()
      << " samples\n";
  return 0;
}

int cmd_measure(const std::filesystem::path& checkpoint_path, const std::string& scenario,
                bool trace, const std::filesystem::path& out_dir, std::ostream& log) {
  Checkpoint ck = load_checkpoint_checked(checkpoint_path);
  Model model = checkpoint_model(ck);
  std::vector<ScheduleKind> kinds;
  if (scenario == "smooth") {
    kinds = {ScheduleKind::SmoothSweep};
  } else if (scenario == "random") {
    kinds = {ScheduleKind::RandomUniform};
  } else if (scenario == "both") {
    kinds = {ScheduleKind::SmoothSweep, ScheduleKind::RandomUniform};
  } else {
    throw std::invalid_argument("--scenario must be smooth, random, or both");
  }

  std::filesystem::create_directories(out_dir);
  json scen;
  for (ScheduleKind k : kinds) {
    EnergyReport rep = measure_noise(model, k, ck.config.measurement, ck.config.seed, trace);
    scen[rep.scenario] = {{"energy_dbfs", json_number(rep.energy_dbfs)}};
    log << rep.scenario << ": "
        << (std::isinf(rep.energy_dbfs) ? std::string("-inf") : fmt2(rep.energy_dbfs))
        << " dBFS\n";
    if (trace) {
      std::vector<std::string> names;
      for (int i = 0; i < model.config.controls; ++i) names.push_back("ctrl_" + std::to_string(i));
      export_trace(rep, out_dir / ("trace_" + rep.scenario + ".csv"), names);
    }
  }
  json j;
  j["checkpoint"] = checkpoint_path.filename().string();
  j["scenarios"] = scen;
  write_file_atomic(out_dir / "measure_report.json", j.dump(2) + "\n");
  return 0;
}

int cmd_verify(const std::filesystem::path& checkpoint_path, const std::filesystem::path& out_dir,
               std::ostream& log) {
  Checkpoint ck = load_checkpoint_checked(checkpoint_path);
  Model model = checkpoint_model(ck);
  const bool stable = ck.config.model.stable;

  ConstraintReport rep;
  double gate_bound = 0.0;
  bool has_gate_bound = false;
  if (ck.config.model.cell == CellKind::Gru) {
    rep = verify_gru(model.gru(), ck.config.margins);
  } else {
    rep = verify_lstm(model.lstm(), ck.config.margins);
    SeededRng rng = SeededRng(ck.config.seed).split(777);
    gate_bound = verify_lstm_gate_bound(model.lstm(), model.config.gate_mode, 100000, rng);
    has_gate_bound = true;
    rep.add("gate_sum_inf_norm", gate_bound, 1.0, gate_bound < 1.0);
  }

  json checks = json::array();
  for (const auto& c : rep.checks) {
    checks.push_back({{"name", c.name},
                      {"measured", json_number(c.measured)},
                      {"limit", json_number(c.limit)},
                      {"pass", c.pass}});
    log << c.name << ": measured " << fmt17(c.measured) << " limit " << fmt17(c.limit) << " -> "
        << (c.pass ? "pass" : "FAIL") << "\n";
  }
  json j;
  j["checkpoint"] = checkpoint_path.filename().string();
  j["stable"] = stable;
  j["cell"] = ck.config.model.cell == CellKind::Gru ? "gru" : "lstm";
  j["checks"] = checks;
  j["all_pass"] = rep.all_pass;
  if (has_gate_bound) j["gate_bound_samples"] = 100000;
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "verify_report.json", j.dump(2) + "\n");

  if (stable && !rep.all_pass) {
    log << "constraint verification FAILED\n";
    return 1;
  }
  log << (stable ? "all constraints pass\n" : "unconstrained model: values reported informationally\n");
  return 0;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"control-conditioned GRU/LSTM virtual-analog models with stability constraints"};
  app.require_subcommand(1);

  std::string config_path, out_dir, cell, scenario = "both", checkpoint_path, manifest_path;
  uint64_t seed = 0;
  bool stable = false, trace = false, force = false;
  int runs = 1;

  auto* synth = app.add_subcommand("synth-data", "generate the synthetic conditioned dataset");
  synth->add_option("--config", config_path, "experiment config JSON")->required();
  synth->add_option("--seed", seed, "override the config seed");
  synth->add_option("--out", out_dir, "output directory");
  synth->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* tr = app.add_subcommand("train", "train a model per the config");
  tr->add_option("--config", config_path, "experiment config JSON")->required();
  tr->add_option("--seed", seed, "override the config seed");
  tr->add_option("--out", out_dir, "output directory");
  tr->add_flag("--stable", stable, "train the stability-constrained variant");
  tr->add_option("--cell", cell, "cell kind (gru|lstm)")
      ->check(CLI::IsMember({"gru", "lstm"}));
  tr->add_option("--runs", runs, "number of training runs (aggregated)")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")->required();
  ev->add_option("--manifest", manifest_path, "dataset manifest JSON")->required();
  ev->add_option("--out", out_dir, "output directory");

  auto* me = app.add_subcommand("measure", "run the conditioning-noise protocol on a checkpoint");
  me->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")->required();
  me->add_option("--scenario", scenario, "smooth | random | both")
      ->check(CLI::IsMember({"smooth", "random", "both"}));
  me->add_flag("--trace", trace, "export per-sample trace CSVs");
  me->add_option("--out", out_dir, "output directory");

  auto* ve = app.add_subcommand("verify", "re-check the stability constraints of a checkpoint");
  ve->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")->required();
  ve->add_option("--out", out_dir, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand(synth) || app.got_subcommand(tr)) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      CliOverrides ov;
      if (app.got_subcommand(synth)) {
        if (synth->count("--seed") > 0) ov.seed = seed;
        cfg = apply_overrides(cfg, ov);
        return cmd_synth_data(cfg, out_dir, force, out);
      }
      if (tr->count("--seed") > 0) ov.seed = seed;
      if (tr->count("--stable") > 0) ov.stable = stable;
      if (tr->count("--cell") > 0) ov.cell = cell;
      cfg = apply_overrides(cfg, ov);
      return cmd_train(cfg, out_dir, runs, out);
    }
    const std::filesystem::path out_p = out_dir.empty() ? "." : std::filesystem::path(out_dir);
    if (app.got_subcommand(ev)) return cmd_eval(checkpoint_path, manifest_path, out_p, out);
    if (app.got_subcommand(me)) return cmd_measure(checkpoint_path, scenario, trace, out_p, out);
    if (app.got_subcommand(ve)) return cmd_verify(checkpoint_path, out_p, out);
    err << "error: no subcommand\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace varnn
