#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ebmm/data.hpp"
#include "ebmm/langevin.hpp"
#include "ebmm/moe.hpp"
#include "ebmm/nets.hpp"
#include "ebmm/prior.hpp"
#include "ebmm/rng.hpp"
#include "ebmm/tensor.hpp"

namespace ebmm {

struct ModelSpec {
  int latent_dim = 2;
  int hidden_units = 64;   // encoder / generator width
  int hidden_layers = 2;   // encoder / generator depth
  int energy_hidden = 64;
  int energy_layers = 4;
  double observation_variance = 1.0;
  ReferenceKind reference = ReferenceKind::Gaussian;
  int w_dim = 0;  // modality-specific factor extent; 0 disables the factor
};

/// All learnable state. When w_dim > 0 each generator reads the
/// concatenation (z, w_i) and each modality gets a w encoder; with w_dim == 0
/// no w machinery exists at all, so the two configurations are bitwise
/// comparable.
struct ModelBundle {
  int m = 0;
  int latent_dim = 0;
  int w_dim = 0;
  std::shared_ptr<EnergyNet> energy_net;
  EbmPrior prior;
  std::vector<EncoderNet> encoders;
  std::vector<GeneratorNet> generators;
  std::vector<EncoderNet> w_encoders;
};

/// Component initializations draw from fixed substreams of rng, so adding
/// the w extension does not disturb the z-side parameters.
ModelBundle init_model(const ModelSpec& spec, const std::vector<int>& view_dims,
                       const RngStream& rng);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Encoder / generator / w-encoder parameters, fixed order and naming.
std::vector<NamedParam> model_params(ModelBundle& model);
/// Energy parameters, prefix "energy".
std::vector<NamedParam> energy_params(ModelBundle& model);
std::vector<NamedParam> all_params(ModelBundle& model);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::unordered_map<std::string, Tensor> m1, m2;
  long t = 0;

  /// Create zero moment slots for any params not seen yet.
  void ensure(const std::vector<NamedParam>& params);
};

/// One update from the gradients stored in the params. ascend treats stored
/// gradients as an uphill direction. Visits params in vector order.
void adam_step(AdamState& state, const AdamConfig& cfg,
               std::vector<NamedParam>& params, bool ascend);

/// Every random input of one objective evaluation, drawn up front so tests
/// can hold the noise fixed while perturbing parameters.
struct ElboNoise {
  std::vector<Tensor> z_eps;    // per expert [batch x d]
  std::vector<Tensor> w_eps;    // per modality [batch x w_dim]
  std::vector<Tensor> cross_w;  // slot i*m+j, j != i: prior w draws
};
ElboNoise draw_elbo_noise(int m, int batch, int d, int w_dim, RngStream& rng);

/// Per-sample rows of the objective's pieces, for regrouping identities.
struct ElboRows {
  std::vector<Tensor> recon_rows;  // per expert i: sum_j log p(x_j | z_i)
  std::vector<Tensor> prior_rows;  // per expert i: f(z_i) + log p0(z_i)
  std::vector<Tensor> logq_rows;   // per expert i: log q(z_i | X)
  Tensor objective_rows;           // [batch]
};

struct ElboTerms {
  std::vector<std::vector<double>> recon;  // [i][j]: batch-mean log p(x_j|z_i)
  std::vector<double> prior_term;          // per expert
  std::vector<double> neg_mixture_logq;    // per expert
  std::vector<double> w_kl;                // per modality; empty if w_dim == 0
  double objective = 0.0;
  Tensor objective_node;      // size-1, tracked when any input is watched
  std::vector<Tensor> draws;  // per expert z_i [batch x d]
};

/// Builds the full objective on the tape:
///   (1/m) sum_i [ sum_j log p(x_j|z_i,...) + f(z_i) + log p0(z_i)
///                 - log q(z_i|X) ]  -  sum_j KL(q(w_j|x_j) || p0(w))
/// with one reparameterized draw z_i per expert. Reconstruction of modality
/// j from expert i uses the inferred w_j when j == i and a prior w draw
/// otherwise; the whole w sum vanishes when w_dim == 0. Energy parameters
/// receive gradient only if the caller watched them.
ElboTerms elbo_terms(Tape& tape, ModelBundle& model, const Batch& batch,
                     const ElboNoise& noise, ElboRows* rows = nullptr);

/// Two-phase energy gradient: accumulates
///   d/d(alpha) [ mean f(positive) - mean f(negative) ]
/// into the energy params' grads (an uphill direction for the objective) and
/// returns the value of that difference. Sample coordinates are constants.
double accumulate_ebm_gradient(EnergyModel& energy, const Tensor& positive_z,
                               const Tensor& negative_z);

struct TrainConfig {
  long iterations = 2000;
  int batch_size = 64;
  double lr_model = 1e-3;
  double lr_ebm = 1e-4;
  long checkpoint_interval = 500;
  LangevinConfig langevin;  // negative-phase sampler; seed is re-derived per
                            // iteration from the run seed
  std::uint64_t seed = 42;
  bool extension = false;
  bool freeze_energy = false;
};

struct IterationRecord {
  long iter = 0;
  double elbo = 0.0;
  double recon_mean = 0.0;     // (1/m) sum_i sum_j recon[i][j]
  double prior_term = 0.0;     // (1/m) sum_i prior_term[i]
  double entropy_term = 0.0;   // (1/m) sum_i neg_mixture_logq[i]
  double grad_norm_model = 0.0;
  double grad_norm_ebm = 0.0;
  double wall_ms = 0.0;
};

/// One iteration in the documented order: (1) per-expert posterior draws,
/// (2) short-run chains for negatives, (3) encoder/generator update,
/// (4) energy update from the two phases. freeze_energy skips (2) and (4)
/// entirely. All randomness comes from substreams of (seed, iter), so a step
/// is a pure function of (model, batch, config, optimizer state, iter).
IterationRecord train_step(ModelBundle& model, const Batch& batch,
                           const TrainConfig& cfg, AdamState& model_state,
                           AdamState& ebm_state, long iter);

/// Entry point for models carrying the modality-specific factor; with
/// w_dim == 0 it degenerates to train_step exactly.
IterationRecord train_step_extended(ModelBundle& model, const Batch& batch,
                                    const TrainConfig& cfg,
                                    AdamState& model_state,
                                    AdamState& ebm_state, long iter);

struct TrainHooks {
  std::function<void(const IterationRecord&)> on_record;
  /// Called with the completed-iteration count at every checkpoint interval
  /// and once more at the end (also for iterations == 0).
  std::function<void(long)> on_checkpoint;
};

/// Iterations start_iter..iterations-1 over shuffled minibatches: one
/// epoch-sized permutation per epoch, ragged tail dropped, so the batch for
/// iteration t is a pure function of (dataset, seed, t) and resumed runs
/// see the very same batches.
void train_loop(ModelBundle& model, const Dataset& train,
                const TrainConfig& cfg, AdamState& model_state,
                AdamState& ebm_state, long start_iter,
                const TrainHooks& hooks);

}  // namespace ebmm
