#include <fstream>

#include "json_util.hpp"
#include "varnn/experiment.hpp"

namespace varnn {

using nlohmann::json;
using detail::check_keys;
using detail::json_number;
using detail::number_from_json;

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

static json params_to_json(const FreeParams& fp) {
  json blocks = json::array();
  for (const auto& b : fp.blocks) {
    blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  }
  return {{"blocks", blocks}, {"values", fp.values}};
}

static FreeParams params_from_json(const json& j) {
  check_keys(j, {"blocks", "values"}, "checkpoint free_params");
  FreeParams fp;
  fp.values = j.at("values").get<std::vector<double>>();
  size_t offset = 0;
  for (const auto& jb : j.at("blocks")) {
    check_keys(jb, {"name", "rows", "cols"}, "checkpoint param block");
    ParamBlock b;
    b.name = jb.at("name").get<std::string>();
    b.rows = jb.at("rows").get<int>();
    b.cols = jb.at("cols").get<int>();
    b.offset = offset;
    offset += b.size();
    fp.blocks.push_back(std::move(b));
  }
  if (offset != fp.values.size()) {
    throw std::invalid_argument("checkpoint free_params: block layout does not match value count");
  }
  return fp;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  json j;
  j["format_version"] = ck.format_version;
  j["config"] = json::parse(experiment_config_json(ck.config));
  j["free_params"] = params_to_json(ck.params);
  j["optimizer"] = {{"step", ck.adam.step}, {"beta1", ck.adam.beta1}, {"beta2", ck.adam.beta2},
                    {"eps", ck.adam.eps},   {"m", ck.adam.m},         {"v", ck.adam.v}};
  j["normalization"] = {{"max_abs", ck.norm.max_abs}};
  j["rng"] = {{"seed", ck.rng_seed},
              {"state", std::vector<uint64_t>(ck.rng_state.begin(), ck.rng_state.end())}};
  j["spectral"] = {{"initialized", ck.spectral.pi.initialized},
                   {"u", ck.spectral.pi.u},
                   {"v", ck.spectral.pi.v}};
  j["best_eval_mae"] = json_number(ck.best_eval_mae);
  j["best_epoch"] = ck.best_epoch;
  write_file_atomic(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("load_checkpoint: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: " + path.string() + ": " + e.what());
  }
  check_keys(j,
             {"format_version", "config", "free_params", "optimizer", "normalization", "rng",
              "spectral", "best_eval_mae", "best_epoch"},
             "checkpoint");
  Checkpoint ck;
  ck.format_version = j.at("format_version").get<int>();
  if (ck.format_version != kCheckpointFormatVersion) {
    throw std::invalid_argument("load_checkpoint: " + path.string() + ": format version " +
                                std::to_string(ck.format_version) + " not supported (expected " +
                                std::to_string(kCheckpointFormatVersion) + ")");
  }
  ck.config = parse_experiment_config(j.at("config").dump(), path.parent_path());
  ck.params = params_from_json(j.at("free_params"));

  const json& jo = j.at("optimizer");
  check_keys(jo, {"step", "beta1", "beta2", "eps", "m", "v"}, "checkpoint optimizer");
  ck.adam.step = jo.at("step").get<int64_t>();
  ck.adam.beta1 = jo.at("beta1").get<double>();
  ck.adam.beta2 = jo.at("beta2").get<double>();
  ck.adam.eps = jo.at("eps").get<double>();
  ck.adam.m = jo.at("m").get<Vector>();
  ck.adam.v = jo.at("v").get<Vector>();

  ck.norm.max_abs = j.at("normalization").at("max_abs").get<double>();

  const json& jr = j.at("rng");
  check_keys(jr, {"seed", "state"}, "checkpoint rng");
  ck.rng_seed = jr.at("seed").get<uint64_t>();
  const auto st = jr.at("state").get<std::vector<uint64_t>>();
  if (st.size() != 4) throw std::invalid_argument("load_checkpoint: rng state must have 4 words");
  std::copy(st.begin(), st.end(), ck.rng_state.begin());

  const json& js = j.at("spectral");
  check_keys(js, {"initialized", "u", "v"}, "checkpoint spectral");
  ck.spectral.pi.initialized = js.at("initialized").get<bool>();
  ck.spectral.pi.u = js.at("u").get<Vector>();
  ck.spectral.pi.v = js.at("v").get<Vector>();

  ck.best_eval_mae = number_from_json(j.at("best_eval_mae"), "checkpoint best_eval_mae");
  ck.best_epoch = j.at("best_epoch").get<int>();
  return ck;
}

Model checkpoint_model(const Checkpoint& ck) {
  return materialize_fresh(ck.config.model, ck.config.margins, ck.params).model;
}

}  // namespace varnn
