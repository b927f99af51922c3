#include "ebmm/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ebmm/errors.hpp"

namespace ebmm {

namespace {
constexpr double kLog2 = 0.69314718055994530941723212145818;
}

Tensor ReferenceDistribution::log_density_rows(Tape& tape,
                                               const Tensor& z) const {
  if (z.rank() != 2 || z.shape()[1] != dim)
    throw DimensionError("reference expects [n x " + std::to_string(dim) +
                         "], got " + z.shape_str());
  if (kind == ReferenceKind::Gaussian) {
    return tape.gaussian_log_density(z, Tensor::scalar(0.0),
                                     Tensor::scalar(1.0));
  }
  // Laplace: -sum |z_k| - dim * log 2. relu(z) + relu(-z) realizes |z| with
  // derivative 0 at exactly 0.
  Tensor abs = tape.add(tape.activation(z, Activation::Relu),
                        tape.activation(tape.neg(z), Activation::Relu));
  return tape.add_scalar(tape.neg(tape.sum_rows(abs)), -dim * kLog2);
}

Tensor ReferenceDistribution::sample(int n, RngStream& rng) const {
  Tensor out({n, dim});
  if (kind == ReferenceKind::Gaussian) {
    rng.fill_normal(out.data(), out.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = rng.laplace();
  }
  return out;
}

Tensor NetEnergy::forward_rows(Tape& tape, const Tensor& z) const {
  Tensor f = energy_forward(tape, *net_, z);
  return tape.reshape(f, {f.shape()[0]});
}

std::vector<Tensor> NetEnergy::params() {
  std::vector<Tensor> out;
  visit_params(*net_, "f", [&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

Tensor QuadraticEnergy::forward_rows(Tape& tape, const Tensor& z) const {
  const int n = z.shape()[0];
  Tensor sq = tape.sum_rows(tape.mul(z, z));  // [n]
  // sq * coeff via a [n x 1] * [1 x 1] product keeps coeff differentiable.
  Tensor prod = tape.matmul(tape.reshape(sq, {n, 1}),
                            tape.reshape(coeff_, {1, 1}));
  return tape.scale(tape.reshape(prod, {n}), -0.5);
}

Tensor LinearEnergy::forward_rows(Tape& tape, const Tensor& z) const {
  const int n = z.shape()[0];
  Tensor prod = tape.matmul(z, tape.reshape(w_, {w_.cols(), 1}));
  return tape.reshape(prod, {n});
}

Tensor log_unnormalized_density_rows(Tape& tape, const EbmPrior& prior,
                                     const Tensor& z) {
  if (!prior.energy) throw ContractError("prior has no energy model");
  return tape.add(prior.energy->forward_rows(tape, z),
                  prior.reference.log_density_rows(tape, z));
}

Tensor grad_log_density_z(const EbmPrior& prior, const Tensor& z) {
  Tensor point = z.clone();
  Tape tape;
  tape.watch(point);
  Tensor rows = log_unnormalized_density_rows(tape, prior, point);
  // Rows are independent per point, so the gradient of the sum is the
  // per-row gradient.
  tape.backward(tape.sum(rows));
  return point.grad();
}

double estimate_log_partition(const EbmPrior& prior, long n_samples,
                              RngStream& rng) {
  if (n_samples <= 0) throw ContractError("partition estimate needs samples");
  const std::uint64_t version = prior.energy->version();
  if (prior.partition_cached && prior.partition_samples == n_samples &&
      prior.partition_version == version)
    return prior.partition_value;

  // Streaming log-mean-exp over blocks: track the running max of f and the
  // sum of exp(f - max), rescaling when a new max appears.
  const int block = 8192;
  double running_max = -std::numeric_limits<double>::infinity();
  double running_sum = 0.0;
  long done = 0;
  Tape tape;  // nothing watched: evaluation only
  while (done < n_samples) {
    const int n = static_cast<int>(std::min<long>(block, n_samples - done));
    Tensor z = prior.reference.sample(n, rng);
    Tensor f = prior.energy->forward_rows(tape, z);
    for (int i = 0; i < n; ++i) {
      const double v = f.at(i);
      if (v > running_max) {
        running_sum *= std::exp(running_max - v);
        running_max = v;
      }
      running_sum += std::exp(v - running_max);
    }
    done += n;
  }
  prior.partition_value =
      running_max + std::log(running_sum / static_cast<double>(n_samples));
  prior.partition_cached = true;
  prior.partition_samples = n_samples;
  prior.partition_version = version;
  return prior.partition_value;
}

}  // namespace ebmm
