#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "ebmm/nets.hpp"
#include "ebmm/rng.hpp"
#include "ebmm/tensor.hpp"

namespace ebmm {

enum class ReferenceKind { Gaussian, Laplace };

/// Fixed base distribution with iid coordinates: standard Gaussian or
/// standard Laplace. The Laplace log density uses subgradient 0 at
/// coordinates that are exactly zero.
struct ReferenceDistribution {
  ReferenceKind kind = ReferenceKind::Gaussian;
  int dim = 0;

  /// Per-row log density of [batch x dim] points, differentiable in z.
  Tensor log_density_rows(Tape& tape, const Tensor& z) const;
  /// [n x dim] iid draws.
  Tensor sample(int n, RngStream& rng) const;
};

/// Energy function over latent points. Implementations expose their
/// parameters so optimizers and gradient checks can reach them; the version
/// counter lets caches notice parameter updates.
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;
  /// Energy per row: [batch x dim] -> [batch].
  virtual Tensor forward_rows(Tape& tape, const Tensor& z) const = 0;
  virtual std::vector<Tensor> params() { return {}; }

  void notify_params_changed() { ++version_; }
  std::uint64_t version() const { return version_; }

 private:
  std::uint64_t version_ = 0;
};

/// MLP-backed energy.
class NetEnergy : public EnergyModel {
 public:
  explicit NetEnergy(std::shared_ptr<EnergyNet> net) : net_(std::move(net)) {}
  Tensor forward_rows(Tape& tape, const Tensor& z) const override;
  std::vector<Tensor> params() override;
  EnergyNet& net() { return *net_; }

 private:
  std::shared_ptr<EnergyNet> net_;
};

/// f(z) = -0.5 * coeff * |z|^2, differentiable in coeff. Closed-form
/// companion for sampler and partition diagnostics.
class QuadraticEnergy : public EnergyModel {
 public:
  explicit QuadraticEnergy(double coeff) : coeff_(Tensor::scalar(coeff)) {}
  Tensor forward_rows(Tape& tape, const Tensor& z) const override;
  std::vector<Tensor> params() override { return {coeff_}; }
  Tensor& coeff() { return coeff_; }

 private:
  Tensor coeff_;
};

/// f(z) = z . w, differentiable in w.
class LinearEnergy : public EnergyModel {
 public:
  explicit LinearEnergy(Tensor w) : w_(std::move(w)) {}
  Tensor forward_rows(Tape& tape, const Tensor& z) const override;
  std::vector<Tensor> params() override { return {w_}; }
  Tensor& weights() { return w_; }

 private:
  Tensor w_;  // [dim]
};

/// Exponentially tilted reference: density proportional to exp(f(z)) * p0(z).
/// The normalizer is never needed for sampling or training; it is estimated
/// on demand for diagnostics and cached until the energy's parameters change.
struct EbmPrior {
  std::shared_ptr<EnergyModel> energy;
  ReferenceDistribution reference;

  mutable bool partition_cached = false;
  mutable double partition_value = 0.0;
  mutable long partition_samples = 0;
  mutable std::uint64_t partition_version = 0;
};

/// log[exp(f(z)) * p0(z)] per row (normalizer omitted): [batch x dim] ->
/// [batch]. Differentiable in z and the energy parameters.
Tensor log_unnormalized_density_rows(Tape& tape, const EbmPrior& prior,
                                     const Tensor& z);

/// d/dz of the unnormalized log density, evaluated without touching any
/// caller tape. Input is untouched; result is [batch x dim], untracked.
Tensor grad_log_density_z(const EbmPrior& prior, const Tensor& z);

/// log Z estimated as log mean exp(f) over n_samples reference draws.
/// Cached per prior instance; reused while (n_samples, energy version) are
/// unchanged, recomputed otherwise.
double estimate_log_partition(const EbmPrior& prior, long n_samples,
                              RngStream& rng);

}  // namespace ebmm
