#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ebmm/data.hpp"
#include "ebmm/langevin.hpp"
#include "ebmm/nets.hpp"
#include "ebmm/trainer.hpp"

namespace ebmm {

/// Per-modality label predictor trained on real data only; used to score
/// generated samples, never trained on them.
struct ClassifierModel {
  MlpParams mlp;  // view extent -> hidden -> class logits, tanh hidden
  int modality = 0;
  int classes = 0;
  double held_out_accuracy = 0.0;
};

struct ClassifierConfig {
  int epochs = 40;
  int hidden = 32;
  int batch_size = 64;
  double lr = 3e-3;
  std::uint64_t seed = 11;
};

/// Cross-entropy training on `train`, accuracy measured on `test`.
/// Deterministic in (datasets, modality, config).
ClassifierModel train_classifier(const Dataset& train, const Dataset& test,
                                 int modality, const ClassifierConfig& cfg);

/// Argmax class per row of x.
std::vector<int> classify(const ClassifierModel& clf, const Tensor& x);
/// Softmax probability of the argmax class per row of x.
std::vector<double> confidences(const ClassifierModel& clf, const Tensor& x);

/// Fraction of sample indices on which every modality's prediction agrees.
/// With a single modality this is identically 1.
double all_agree_fraction(const std::vector<std::vector<int>>& predictions);

/// Noiseless decode of every modality from latent rows z. With w_dim > 0
/// each modality's w is taken from `w_draws` (one [n x w_dim] tensor per
/// modality; pass {} to use zeros, the w-prior mean).
std::vector<Tensor> decode_all(const ModelBundle& model, const Tensor& z,
                               const std::vector<Tensor>& w_draws = {});

/// Unconditional generation coherence: run prior chains, decode every
/// modality, score the all-agree fraction. Extension models draw each
/// modality's w from its standard-normal prior (seeded).
double joint_coherence(const ModelBundle& model,
                       const std::vector<ClassifierModel>& classifiers,
                       int n_samples, const LangevinConfig& langevin,
                       std::uint64_t w_seed);

struct CrossCoherence {
  double overall = 0.0;
  /// pair[i][j]: modality i conditioning, modality j generated; the diagonal
  /// is unused and stays 0.
  std::vector<std::vector<double>> pair;
};

/// Conditional generation coherence over a labeled test set: encode view i,
/// take the expert mean (or a reparameterized draw when `sampled`), decode
/// view j, compare the classifier's prediction with the true label.
/// Extension models decode with w = 0.
CrossCoherence cross_coherence(const ModelBundle& model,
                               const std::vector<ClassifierModel>& classifiers,
                               const Dataset& test, bool sampled,
                               std::uint64_t seed);

/// Mean over samples and modalities of the classifier confidence on decoded
/// views.
double mean_confidence(const std::vector<ClassifierModel>& classifiers,
                       const std::vector<Tensor>& decoded);

/// Runs chains with the config's snapshot schedule, decodes every snapshot,
/// and writes one text matrix per (step, modality) to
/// dir/chain_s<step>_m<modality>.txt. Extension w draws are fixed per chain
/// across steps, so files differ only through z. Returns the file paths in
/// write order.
std::vector<std::string> chain_transition_dump(const ModelBundle& model,
                                               const LangevinConfig& langevin,
                                               const std::string& dir,
                                               std::uint64_t w_seed);

}  // namespace ebmm
