#pragma once

#include <string>
#include <vector>

#include "ebmm/coherence.hpp"
#include "ebmm/config.hpp"
#include "ebmm/data.hpp"
#include "ebmm/trainer.hpp"

namespace ebmm {

/// Command-line overrides layered on top of the config file.
struct RunnerOptions {
  bool has_seed = false;
  std::uint64_t seed = 0;
  std::string out_dir;       // empty = keep the config's
  bool freeze_energy = false;
  bool extension = false;
  std::string resume;        // checkpoint stem; empty = fresh start
};

/// Applies overrides, fills default dataset paths under out_dir, and  keeps
/// the train-section mirrors (seed, sampler) coherent. Every command runs on
/// a resolved config.
RunConfig resolve_config(RunConfig cfg, const RunnerOptions& opt);

/// cfg.model with the modality-factor extent forced to 0 unless the
/// extension is enabled, so base runs carry no w machinery at all.
ModelSpec effective_model_spec(const RunConfig& cfg);

/// Deterministic model construction for a resolved config: parameters from a
/// fixed substream of the run seed; freeze_energy zeroes the energy net's
/// output layer so the prior is exactly the reference distribution.
ModelBundle init_run_model(const RunConfig& cfg,
                           const std::vector<int>& view_dims);

/// Full training pass with no file output; used by the ablation grid.
ModelBundle train_in_memory(const RunConfig& cfg, const Dataset& train);

/// Per-modality classifiers for coherence scoring, trained on demand and
/// cached under out_dir keyed by a digest of (dataset spec, classifier
/// settings). A present-but-corrupt cache raises ArtifactError.
std::vector<ClassifierModel> eval_classifiers(const RunConfig& cfg,
                                              const Dataset& train,
                                              const Dataset& test);

struct EvalScores {
  double joint = 0.0;
  CrossCoherence cross;
  std::vector<double> classifier_acc;  // held-out, per modality
  double normalized_elbo = 0.0;        // objective minus log partition
  double log_partition = 0.0;
};

/// All evaluation metrics for one model, seeded from fixed substreams of
/// cfg.seed. with_elbo = false skips the objective and partition estimates
/// (the expensive part the ablation grid does not need).
EvalScores evaluate_model(ModelBundle& model, const RunConfig& cfg,
                          const std::vector<ClassifierModel>& classifiers,
                          const Dataset& test, bool with_elbo);

// The CLI verbs. Each loads the config at config_path, resolves it against
// opt, and reports through exceptions: ConfigError, IoError/ParseError,
// DivergenceError, ArtifactError map onto process exit codes 2, 3, 4, 5.
void run_gen_data(const std::string& config_path, const RunnerOptions& opt);
void run_train(const std::string& config_path, const RunnerOptions& opt);
void run_eval(const std::string& config_path, const std::string& checkpoint,
              const RunnerOptions& opt);
void run_ablate(const std::string& config_path, const RunnerOptions& opt);
void run_chain_viz(const std::string& config_path,
                   const std::string& checkpoint, const RunnerOptions& opt);

}  // namespace ebmm
