#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ebmm/data.hpp"
#include "ebmm/langevin.hpp"
#include "ebmm/trainer.hpp"

namespace ebmm {

struct EvalConfig {
  int n_samples = 2000;        // unconditional draws for joint coherence
  int classifier_epochs = 40;
  int classifier_hidden = 32;
  std::uint64_t classifier_seed = 11;
  bool sampled_cross = false;  // stochastic z for cross coherence
  long partition_samples = 200000;
};

struct AblateConfig {
  std::vector<int> hidden_units = {32, 64};  // energy net width D
  std::vector<int> layers = {4, 6};          // energy net depth L
  std::vector<int> steps = {30, 50};         // sampler steps S
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

/// One experiment, serialized as strict JSON: schema must equal 1, unknown
/// keys are rejected, missing keys take the defaults shown in the struct
/// definitions. `train.seed` and `train.langevin` are not separate file
/// fields; they mirror the top-level `seed` and `langevin` sections.
struct RunConfig {
  int schema = 1;
  std::uint64_t seed = 42;
  std::string out_dir = "runs/out";
  DatasetSpec dataset;
  ModelSpec model;
  TrainConfig train;
  LangevinConfig langevin;
  EvalConfig eval;
  AblateConfig ablate;
};

RunConfig config_from_json_text(const std::string& text);
/// Canonical form: every field explicit, keys sorted. Parse of the output
/// reproduces the config exactly.
std::string config_to_json_text(const RunConfig& cfg);
/// Reads and parses; file-read trouble raises IoError, malformed or invalid
/// content raises ConfigError.
RunConfig load_config(const std::string& path);
/// FNV-1a of a string, 16 hex digits.
std::string digest_hex(const std::string& text);
/// Digest of the training-determining subset of the config: seed, dataset
/// spec (paths excluded), model, train, and sampler sections. Output
/// directory, file locations, and evaluation settings do not participate, so
/// a checkpoint stays resumable after being moved or re-scored differently.
std::string config_digest(const RunConfig& cfg);

}  // namespace ebmm
