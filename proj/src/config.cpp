#include "ebmm/config.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ebmm/errors.hpp"

namespace ebmm {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + path + " " + what);
}

double get_double(const json& v, const std::string& path) {
  if (!v.is_number()) bad(path, "must be a number");
  return v.get<double>();
}

long get_long(const json& v, const std::string& path) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    bad(path, "must be an integer");
  return v.get<long>();
}

int get_int(const json& v, const std::string& path) {
  const long x = get_long(v, path);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    bad(path, "out of range");
  return static_cast<int>(x);
}

std::uint64_t get_u64(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const long long x = v.get<long long>();
    if (x < 0) bad(path, "must be >= 0");
    return static_cast<std::uint64_t>(x);
  }
  bad(path, "must be an unsigned integer");
}

bool get_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) bad(path, "must be a boolean");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) bad(path, "must be a string");
  return v.get<std::string>();
}

const json& expect_object(const json& v, const std::string& path) {
  if (!v.is_object()) bad(path, "must be an object");
  return v;
}

void parse_dataset(const json& obj, DatasetSpec& spec) {
  for (const auto& [key, v] : expect_object(obj, "dataset").items()) {
    const std::string path = "dataset." + key;
    if (key == "family") {
      const std::string f = get_string(v, path);
      if (f == "gmm_pair")
        spec.family = DatasetFamily::GmmPair;
      else if (f == "bitmap_digits")
        spec.family = DatasetFamily::BitmapDigits;
      else
        bad(path, "must be \"gmm_pair\" or \"bitmap_digits\"");
    } else if (key == "classes") {
      spec.classes = get_int(v, path);
    } else if (key == "modalities") {
      spec.modalities = get_int(v, path);
    } else if (key == "noise") {
      spec.noise = get_double(v, path);
    } else if (key == "n_train") {
      spec.n_train = get_int(v, path);
    } else if (key == "n_test") {
      spec.n_test = get_int(v, path);
    } else if (key == "seed") {
      spec.seed = get_u64(v, path);
    } else if (key == "radius") {
      spec.radius = get_double(v, path);
    } else if (key == "background_a") {
      spec.background_a = get_double(v, path);
    } else if (key == "background_b") {
      spec.background_b = get_double(v, path);
    } else if (key == "train_path") {
      spec.train_path = get_string(v, path);
    } else if (key == "test_path") {
      spec.test_path = get_string(v, path);
    } else {
      bad(path, "is not a recognized key");
    }
  }
}

void parse_model(const json& obj, ModelSpec& spec) {
  for (const auto& [key, v] : expect_object(obj, "model").items()) {
    const std::string path = "model." + key;
    if (key == "latent_dim") {
      spec.latent_dim = get_int(v, path);
    } else if (key == "hidden_units") {
      spec.hidden_units = get_int(v, path);
    } else if (key == "hidden_layers") {
      spec.hidden_layers = get_int(v, path);
    } else if (key == "energy_hidden") {
      spec.energy_hidden = get_int(v, path);
    } else if (key == "energy_layers") {
      spec.energy_layers = get_int(v, path);
    } else if (key == "observation_variance") {
      spec.observation_variance = get_double(v, path);
    } else if (key == "reference") {
      const std::string r = get_string(v, path);
      if (r == "gaussian")
        spec.reference = ReferenceKind::Gaussian;
      else if (r == "laplace")
        spec.reference = ReferenceKind::Laplace;
      else
        bad(path, "must be \"gaussian\" or \"laplace\"");
    } else if (key == "w_dim") {
      spec.w_dim = get_int(v, path);
    } else {
      bad(path, "is not a recognized key");
    }
  }
}

void parse_train(const json& obj, TrainConfig& cfg) {
  for (const auto& [key, v] : expect_object(obj, "train").items()) {
    const std::string path = "train." + key;
    if (key == "iterations") {
      cfg.iterations = get_long(v, path);
    } else if (key == "batch_size") {
      cfg.batch_size = get_int(v, path);
    } else if (key == "lr_model") {
      cfg.lr_model = get_double(v, path);
    } else if (key == "lr_ebm") {
      cfg.lr_ebm = get_double(v, path);
    } else if (key == "checkpoint_interval") {
      cfg.checkpoint_interval = get_long(v, path);
    } else if (key == "extension") {
      cfg.extension = get_bool(v, path);
    } else if (key == "freeze_energy") {
      cfg.freeze_energy = get_bool(v, path);
    } else {
      bad(path, "is not a recognized key");
    }
  }
}

void parse_langevin(const json& obj, LangevinConfig& cfg) {
  for (const auto& [key, v] : expect_object(obj, "langevin").items()) {
    const std::string path = "langevin." + key;
    if (key == "steps") {
      cfg.steps = get_int(v, path);
    } else if (key == "step_size") {
      cfg.step_size = get_double(v, path);
    } else if (key == "n_chains") {
      cfg.n_chains = get_int(v, path);
    } else if (key == "snapshot_steps") {
      if (!v.is_array()) bad(path, "must be an array of integers");
      cfg.snapshot_steps.clear();
      for (const auto& s : v) cfg.snapshot_steps.push_back(get_int(s, path));
    } else if (key == "seed") {
      cfg.seed = get_u64(v, path);
    } else {
      bad(path, "is not a recognized key");
    }
  }
}

void parse_eval(const json& obj, EvalConfig& cfg) {
  for (const auto& [key, v] : expect_object(obj, "eval").items()) {
    const std::string path = "eval." + key;
    if (key == "n_samples") {
      cfg.n_samples = get_int(v, path);
    } else if (key == "classifier_epochs") {
      cfg.classifier_epochs = get_int(v, path);
    } else if (key == "classifier_hidden") {
      cfg.classifier_hidden = get_int(v, path);
    } else if (key == "classifier_seed") {
      cfg.classifier_seed = get_u64(v, path);
    } else if (key == "sampled_cross") {
      cfg.sampled_cross = get_bool(v, path);
    } else if (key == "partition_samples") {
      cfg.partition_samples = get_long(v, path);
    } else {
      bad(path, "is not a recognized key");
    }
  }
}

void parse_ablate(const json& obj, AblateConfig& cfg) {
  auto int_list = [](const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) bad(path, "must be a non-empty array");
    std::vector<int> out;
    for (const auto& s : v) out.push_back(get_int(s, path));
    return out;
  };
  for (const auto& [key, v] : expect_object(obj, "ablate").items()) {
    const std::string path = "ablate." + key;
    if (key == "hidden_units") {
      cfg.hidden_units = int_list(v, path);
    } else if (key == "layers") {
      cfg.layers = int_list(v, path);
    } else if (key == "steps") {
      cfg.steps = int_list(v, path);
    } else if (key == "seeds") {
      if (!v.is_array() || v.empty()) bad(path, "must be a non-empty array");
      cfg.seeds.clear();
      for (const auto& s : v) cfg.seeds.push_back(get_u64(s, path));
    } else {
      bad(path, "is not a recognized key");
    }
  }
}

}  // namespace

RunConfig config_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");

  RunConfig cfg;
  for (const auto& [key, v] : root.items()) {
    if (key == "schema") {
      cfg.schema = get_int(v, "schema");
    } else if (key == "seed") {
      cfg.seed = get_u64(v, "seed");
    } else if (key == "out_dir") {
      cfg.out_dir = get_string(v, "out_dir");
    } else if (key == "dataset") {
      parse_dataset(v, cfg.dataset);
    } else if (key == "model") {
      parse_model(v, cfg.model);
    } else if (key == "train") {
      parse_train(v, cfg.train);
    } else if (key == "langevin") {
      parse_langevin(v, cfg.langevin);
    } else if (key == "eval") {
      parse_eval(v, cfg.eval);
    } else if (key == "ablate") {
      parse_ablate(v, cfg.ablate);
    } else {
      bad(key, "is not a recognized key");
    }
  }
  if (cfg.schema != 1) throw ConfigError("config: schema must be 1");

  // The train loop and sampler read their seed and sampler settings through
  // TrainConfig; keep those mirrors coherent with the top-level fields.
  cfg.train.seed = cfg.seed;
  cfg.train.langevin = cfg.langevin;
  return cfg;
}

std::string config_to_json_text(const RunConfig& cfg) {
  json root;
  root["schema"] = cfg.schema;
  root["seed"] = cfg.seed;
  root["out_dir"] = cfg.out_dir;

  json& d = root["dataset"];
  d["family"] = cfg.dataset.family == DatasetFamily::GmmPair ? "gmm_pair"
                                                             : "bitmap_digits";
  d["classes"] = cfg.dataset.classes;
  d["modalities"] = cfg.dataset.modalities;
  d["noise"] = cfg.dataset.noise;
  d["n_train"] = cfg.dataset.n_train;
  d["n_test"] = cfg.dataset.n_test;
  d["seed"] = cfg.dataset.seed;
  d["radius"] = cfg.dataset.radius;
  d["background_a"] = cfg.dataset.background_a;
  d["background_b"] = cfg.dataset.background_b;
  d["train_path"] = cfg.dataset.train_path;
  d["test_path"] = cfg.dataset.test_path;

  json& m = root["model"];
  m["latent_dim"] = cfg.model.latent_dim;
  m["hidden_units"] = cfg.model.hidden_units;
  m["hidden_layers"] = cfg.model.hidden_layers;
  m["energy_hidden"] = cfg.model.energy_hidden;
  m["energy_layers"] = cfg.model.energy_layers;
  m["observation_variance"] = cfg.model.observation_variance;
  m["reference"] =
      cfg.model.reference == ReferenceKind::Gaussian ? "gaussian" : "laplace";
  m["w_dim"] = cfg.model.w_dim;

  json& t = root["train"];
  t["iterations"] = cfg.train.iterations;
  t["batch_size"] = cfg.train.batch_size;
  t["lr_model"] = cfg.train.lr_model;
  t["lr_ebm"] = cfg.train.lr_ebm;
  t["checkpoint_interval"] = cfg.train.checkpoint_interval;
  t["extension"] = cfg.train.extension;
  t["freeze_energy"] = cfg.train.freeze_energy;

  json& l = root["langevin"];
  l["steps"] = cfg.langevin.steps;
  l["step_size"] = cfg.langevin.step_size;
  l["n_chains"] = cfg.langevin.n_chains;
  l["snapshot_steps"] = cfg.langevin.snapshot_steps;
  l["seed"] = cfg.langevin.seed;

  json& e = root["eval"];
  e["n_samples"] = cfg.eval.n_samples;
  e["classifier_epochs"] = cfg.eval.classifier_epochs;
  e["classifier_hidden"] = cfg.eval.classifier_hidden;
  e["classifier_seed"] = cfg.eval.classifier_seed;
  e["sampled_cross"] = cfg.eval.sampled_cross;
  e["partition_samples"] = cfg.eval.partition_samples;

  json& a = root["ablate"];
  a["hidden_units"] = cfg.ablate.hidden_units;
  a["layers"] = cfg.ablate.layers;
  a["steps"] = cfg.ablate.steps;
  a["seeds"] = cfg.ablate.seeds;

  return root.dump(2) + "\n";
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return config_from_json_text(buf.str());
}

std::string digest_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string config_digest(const RunConfig& cfg) {
  RunConfig reduced = cfg;
  reduced.out_dir.clear();
  reduced.dataset.train_path.clear();
  reduced.dataset.test_path.clear();
  reduced.eval = EvalConfig{};
  reduced.ablate = AblateConfig{};
  return digest_hex(config_to_json_text(reduced));
}

}  // namespace ebmm
