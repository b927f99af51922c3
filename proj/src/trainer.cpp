#include "ebmm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "ebmm/errors.hpp"

namespace ebmm {

namespace {

double mean_of(const Tensor& rows) {
  double s = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) s += rows.data()[i];
  return s / static_cast<double>(rows.size());
}

double grad_l2(const std::vector<NamedParam>& params) {
  double s = 0.0;
  for (const NamedParam& p : params) {
    if (!p.tensor.has_grad()) continue;
    const double* g = p.tensor.grad_data();
    for (std::size_t i = 0; i < p.tensor.size(); ++i) s += g[i] * g[i];
  }
  return std::sqrt(s);
}

int encoder_input_extent(const EncoderNet& net) {
  return net.trunk.layers.front().weight.shape()[1];
}

}  // namespace

ModelBundle init_model(const ModelSpec& spec, const std::vector<int>& view_dims,
                       const RngStream& rng) {
  if (spec.latent_dim < 1) throw ConfigError("model.latent_dim must be >= 1");
  if (spec.hidden_units < 1 || spec.energy_hidden < 1)
    throw ConfigError("model widths must be >= 1");
  if (spec.hidden_layers < 1 || spec.energy_layers < 1)
    throw ConfigError("model depths must be >= 1");
  if (spec.observation_variance <= 0.0)
    throw ConfigError("model.observation_variance must be positive");
  if (spec.w_dim < 0) throw ConfigError("model.w_dim must be >= 0");
  if (view_dims.empty()) throw ConfigError("model needs at least one modality");

  ModelBundle b;
  b.m = static_cast<int>(view_dims.size());
  b.latent_dim = spec.latent_dim;
  b.w_dim = spec.w_dim;

  RngStream r_energy = rng.substream(1);
  b.energy_net = std::make_shared<EnergyNet>(init_energy(
      spec.latent_dim, spec.energy_hidden, spec.energy_layers, r_energy));
  b.prior.energy = std::make_shared<NetEnergy>(b.energy_net);
  b.prior.reference = ReferenceDistribution{spec.reference, spec.latent_dim};

  for (int i = 0; i < b.m; ++i) {
    RngStream re = rng.substream(100 + 10 * static_cast<std::uint64_t>(i));
    b.encoders.push_back(init_encoder(view_dims[i], spec.hidden_units,
                                      spec.hidden_layers, spec.latent_dim,
                                      re));
    RngStream rg = rng.substream(101 + 10 * static_cast<std::uint64_t>(i));
    b.generators.push_back(init_generator(
        spec.latent_dim + spec.w_dim, spec.hidden_units, spec.hidden_layers,
        view_dims[i], spec.observation_variance, rg));
    if (spec.w_dim > 0) {
      RngStream rw = rng.substream(102 + 10 * static_cast<std::uint64_t>(i));
      b.w_encoders.push_back(init_encoder(view_dims[i], spec.hidden_units,
                                          spec.hidden_layers, spec.w_dim, rw));
    }
  }
  return b;
}

std::vector<NamedParam> model_params(ModelBundle& model) {
  std::vector<NamedParam> out;
  ParamVisitor grab = [&](const std::string& name, Tensor& t) {
    out.push_back({name, t});
  };
  for (int i = 0; i < model.m; ++i) {
    visit_params(model.encoders[i], "enc" + std::to_string(i), grab);
    visit_params(model.generators[i], "gen" + std::to_string(i), grab);
    if (model.w_dim > 0)
      visit_params(model.w_encoders[i], "wenc" + std::to_string(i), grab);
  }
  return out;
}

std::vector<NamedParam> energy_params(ModelBundle& model) {
  std::vector<NamedParam> out;
  visit_params(*model.energy_net, "energy",
               [&](const std::string& name, Tensor& t) {
                 out.push_back({name, t});
               });
  return out;
}

std::vector<NamedParam> all_params(ModelBundle& model) {
  std::vector<NamedParam> out = model_params(model);
  std::vector<NamedParam> e = energy_params(model);
  out.insert(out.end(), e.begin(), e.end());
  return out;
}

void AdamState::ensure(const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) {
    if (m1.find(p.name) == m1.end()) {
      m1.emplace(p.name, Tensor::zeros(p.tensor.shape()));
      m2.emplace(p.name, Tensor::zeros(p.tensor.shape()));
    }
  }
}

void adam_step(AdamState& state, const AdamConfig& cfg,
               std::vector<NamedParam>& params, bool ascend) {
  state.ensure(params);
  ++state.t;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const double sign = ascend ? -1.0 : 1.0;
  for (NamedParam& p : params) {
    double* m1 = state.m1.at(p.name).data();
    double* m2 = state.m2.at(p.name).data();
    double* v = p.tensor.data();
    const double* g = p.tensor.has_grad() ? p.tensor.grad_data() : nullptr;
    for (std::size_t k = 0; k < p.tensor.size(); ++k) {
      const double gk = sign * (g ? g[k] : 0.0);
      m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * gk;
      m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * gk * gk;
      v[k] -= cfg.lr * (m1[k] / bias1) / (std::sqrt(m2[k] / bias2) + cfg.eps);
    }
  }
}

ElboNoise draw_elbo_noise(int m, int batch, int d, int w_dim, RngStream& rng) {
  ElboNoise noise;
  for (int i = 0; i < m; ++i) {
    Tensor eps({batch, d});
    rng.fill_normal(eps.data(), eps.size());
    noise.z_eps.push_back(eps);
  }
  if (w_dim > 0) {
    for (int i = 0; i < m; ++i) {
      Tensor eps({batch, w_dim});
      rng.fill_normal(eps.data(), eps.size());
      noise.w_eps.push_back(eps);
    }
    noise.cross_w.resize(static_cast<std::size_t>(m) * m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        if (i == j) continue;
        Tensor w({batch, w_dim});
        rng.fill_normal(w.data(), w.size());
        noise.cross_w[static_cast<std::size_t>(i) * m + j] = w;
      }
  }
  return noise;
}

ElboTerms elbo_terms(Tape& tape, ModelBundle& model, const Batch& batch,
                     const ElboNoise& noise, ElboRows* rows) {
  const int m = model.m;
  const int B = batch.size();
  if (static_cast<int>(batch.views.size()) != m)
    throw DimensionError("batch has " + std::to_string(batch.views.size()) +
                         " views, model expects " + std::to_string(m));
  for (int i = 0; i < m; ++i) {
    if (batch.views[i].shape()[1] != encoder_input_extent(model.encoders[i]))
      throw DimensionError("view " + std::to_string(i) +
                           " extent does not match encoder input");
  }
  if (static_cast<int>(noise.z_eps.size()) != m)
    throw ContractError("elbo noise: z draw per expert required");

  const bool with_w = model.w_dim > 0;

  // Posterior factors and stratified draws.
  std::vector<EncoderOutput> enc(m);
  std::vector<Tensor> z(m);
  for (int i = 0; i < m; ++i) {
    enc[i] = encoder_forward(tape, model.encoders[i], batch.views[i]);
    z[i] = reparam_sample(tape, enc[i], noise.z_eps[i]);
  }
  std::vector<EncoderOutput> wenc(with_w ? m : 0);
  std::vector<Tensor> w_self(with_w ? m : 0);
  std::vector<Tensor> w_kl_rows(with_w ? m : 0);
  if (with_w) {
    if (static_cast<int>(noise.w_eps.size()) != m ||
        noise.cross_w.size() != static_cast<std::size_t>(m) * m)
      throw ContractError("elbo noise: w draws incomplete");
    for (int i = 0; i < m; ++i) {
      wenc[i] = encoder_forward(tape, model.w_encoders[i], batch.views[i]);
      w_self[i] = reparam_sample(tape, wenc[i], noise.w_eps[i]);
      w_kl_rows[i] = gaussian_kl_standard(tape, wenc[i]);
    }
  }

  ElboTerms terms;
  terms.recon.assign(m, std::vector<double>(m, 0.0));
  if (rows) *rows = ElboRows{};

  Tensor total_rows;
  for (int i = 0; i < m; ++i) {
    Tensor recon_i;
    for (int j = 0; j < m; ++j) {
      Tensor input = z[i];
      if (with_w) {
        const Tensor& wj = (j == i)
                               ? w_self[j]
                               : noise.cross_w[static_cast<std::size_t>(i) * m + j];
        input = tape.concat_cols(z[i], wj);
      }
      Tensor decoded = generator_forward(tape, model.generators[j], input);
      Tensor rows_ij = tape.gaussian_log_density(
          batch.views[j], decoded,
          Tensor::scalar(model.generators[j].observation_variance));
      terms.recon[i][j] = mean_of(rows_ij);
      recon_i = recon_i.defined() ? tape.add(recon_i, rows_ij) : rows_ij;
    }
    Tensor prior_i = log_unnormalized_density_rows(tape, model.prior, z[i]);
    Tensor logq_i = mixture_log_density(tape, enc, z[i]);
    terms.prior_term.push_back(mean_of(prior_i));
    terms.neg_mixture_logq.push_back(-mean_of(logq_i));
    terms.draws.push_back(z[i]);

    Tensor acc_i = tape.sub(tape.add(recon_i, prior_i), logq_i);
    total_rows = total_rows.defined() ? tape.add(total_rows, acc_i) : acc_i;
    if (rows) {
      rows->recon_rows.push_back(recon_i);
      rows->prior_rows.push_back(prior_i);
      rows->logq_rows.push_back(logq_i);
    }
  }
  total_rows = tape.scale(total_rows, 1.0 / m);
  if (with_w) {
    for (int j = 0; j < m; ++j) {
      terms.w_kl.push_back(mean_of(w_kl_rows[j]));
      total_rows = tape.sub(total_rows, w_kl_rows[j]);
    }
  }

  terms.objective_node = tape.mean(total_rows);
  terms.objective = terms.objective_node.value();
  if (rows) rows->objective_rows = total_rows;
  (void)B;
  if (!std::isfinite(terms.objective))
    throw DivergenceError("non-finite objective", -1);
  return terms;
}

double accumulate_ebm_gradient(EnergyModel& energy, const Tensor& positive_z,
                               const Tensor& negative_z) {
  if (!positive_z.defined() || !negative_z.defined())
    throw ContractError("ebm gradient needs both sample phases");
  Tape tape;
  std::vector<Tensor> params = energy.params();
  for (Tensor& p : params) tape.watch(p);
  Tensor pos_mean = tape.mean(energy.forward_rows(tape, positive_z));
  Tensor neg_mean = tape.mean(energy.forward_rows(tape, negative_z));
  Tensor gap = tape.sub(pos_mean, neg_mean);
  tape.backward(gap);
  return gap.value();
}

IterationRecord train_step(ModelBundle& model, const Batch& batch,
                           const TrainConfig& cfg, AdamState& model_state,
                           AdamState& ebm_state, long iter) {
  RngStream root(cfg.seed);
  const std::uint64_t base = static_cast<std::uint64_t>(iter) * 8;

  RngStream noise_rng = root.substream(base + 0);
  ElboNoise noise = draw_elbo_noise(model.m, batch.size(), model.latent_dim,
                                    model.w_dim, noise_rng);

  // (1) Posterior draws + objective graph.
  Tape tape;
  std::vector<NamedParam> mp = model_params(model);
  for (NamedParam& p : mp) {
    p.tensor.zero_grad();
    tape.watch(p.tensor);
  }
  ElboTerms terms;
  try {
    terms = elbo_terms(tape, model, batch, noise);
  } catch (const DivergenceError& e) {
    throw DivergenceError(
        std::string(e.what()) + " (iteration " + std::to_string(iter) + ")",
        iter);
  }

  // (2) Negative-phase chains from the current prior.
  Tensor negatives;
  if (!cfg.freeze_energy) {
    LangevinConfig lc = cfg.langevin;
    lc.snapshot_steps.clear();
    lc.seed = root.substream(base + 1).seed();
    try {
      negatives = run_chains(model.prior, lc).final_samples;
    } catch (const DivergenceError& e) {
      throw DivergenceError(
          std::string(e.what()) + " (iteration " + std::to_string(iter) + ")",
          iter);
    }
  }

  // (3) Encoder/generator ascent on the objective.
  tape.backward(tape.neg(terms.objective_node));
  const double grad_norm_model = grad_l2(mp);
  if (!std::isfinite(grad_norm_model))
    throw DivergenceError(
        "non-finite model gradient (iteration " + std::to_string(iter) + ")",
        iter);
  AdamConfig model_adam;
  model_adam.lr = cfg.lr_model;
  adam_step(model_state, model_adam, mp, /*ascend=*/false);

  // (4) Two-phase energy update; positives are the detached draw union.
  double grad_norm_ebm = 0.0;
  if (!cfg.freeze_energy) {
    std::vector<NamedParam> ep = energy_params(model);
    for (NamedParam& p : ep) p.tensor.zero_grad();
    const int B = batch.size();
    Tensor positives({model.m * B, model.latent_dim});
    for (int i = 0; i < model.m; ++i)
      std::memcpy(positives.data() +
                      static_cast<std::size_t>(i) * B * model.latent_dim,
                  terms.draws[i].data(),
                  static_cast<std::size_t>(B) * model.latent_dim *
                      sizeof(double));
    accumulate_ebm_gradient(*model.prior.energy, positives, negatives);
    grad_norm_ebm = grad_l2(ep);
    if (!std::isfinite(grad_norm_ebm))
      throw DivergenceError(
          "non-finite energy gradient (iteration " + std::to_string(iter) +
              ")",
          iter);
    AdamConfig ebm_adam;
    ebm_adam.lr = cfg.lr_ebm;
    adam_step(ebm_state, ebm_adam, ep, /*ascend=*/true);
    model.prior.energy->notify_params_changed();
  }

  IterationRecord rec;
  rec.iter = iter;
  rec.elbo = terms.objective;
  double recon_sum = 0.0, prior_sum = 0.0, entropy_sum = 0.0;
  for (int i = 0; i < model.m; ++i) {
    for (int j = 0; j < model.m; ++j) recon_sum += terms.recon[i][j];
    prior_sum += terms.prior_term[i];
    entropy_sum += terms.neg_mixture_logq[i];
  }
  rec.recon_mean = recon_sum / model.m;
  rec.prior_term = prior_sum / model.m;
  rec.entropy_term = entropy_sum / model.m;
  rec.grad_norm_model = grad_norm_model;
  rec.grad_norm_ebm = grad_norm_ebm;
  return rec;
}

IterationRecord train_step_extended(ModelBundle& model, const Batch& batch,
                                    const TrainConfig& cfg,
                                    AdamState& model_state,
                                    AdamState& ebm_state, long iter) {
  if (model.w_dim > 0 &&
      model.w_encoders.size() != static_cast<std::size_t>(model.m))
    throw ContractError("extended model is missing w encoders");
  return train_step(model, batch, cfg, model_state, ebm_state, iter);
}

void train_loop(ModelBundle& model, const Dataset& train,
                const TrainConfig& cfg, AdamState& model_state,
                AdamState& ebm_state, long start_iter,
                const TrainHooks& hooks) {
  if (cfg.iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.size() < 1) throw ConfigError("training dataset is empty");
  if (start_iter < 0 || start_iter > cfg.iterations)
    throw ContractError("start iteration outside the run range");

  const int B = std::min<long>(cfg.batch_size, train.size());
  const long batches_per_epoch = train.size() / B;
  RngStream root(cfg.seed);

  std::vector<int> perm(train.size());
  long perm_epoch = -1;
  auto refresh_perm = [&](long epoch) {
    for (int i = 0; i < train.size(); ++i) perm[i] = i;
    RngStream r = root.substream(0x45D0C000ull + static_cast<std::uint64_t>(epoch));
    for (int i = train.size() - 1; i > 0; --i)
      std::swap(perm[i], perm[r.uniform_int(i + 1)]);
    perm_epoch = epoch;
  };

  for (long t = start_iter; t < cfg.iterations; ++t) {
    const long epoch = t / batches_per_epoch;
    const long slot = t % batches_per_epoch;
    if (epoch != perm_epoch) refresh_perm(epoch);
    std::vector<int> idx(perm.begin() + slot * B,
                         perm.begin() + slot * B + B);
    Batch batch = make_batch(train, idx);

    const auto t0 = std::chrono::steady_clock::now();
    IterationRecord rec =
        train_step(model, batch, cfg, model_state, ebm_state, t);
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    if (hooks.on_record) hooks.on_record(rec);
    if (hooks.on_checkpoint && cfg.checkpoint_interval > 0 &&
        (t + 1) % cfg.checkpoint_interval == 0 && t + 1 < cfg.iterations)
      hooks.on_checkpoint(t + 1);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(cfg.iterations);
}

}  // namespace ebmm
