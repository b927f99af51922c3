#include "ebmm/langevin.hpp"

#include <cmath>
#include <string>

#include "ebmm/errors.hpp"

namespace ebmm {

Tensor langevin_step(const EbmPrior& prior, const Tensor& z, double step_size,
                     std::vector<RngStream>& rngs) {
  if (z.rank() != 2)
    throw DimensionError("langevin_step expects [n x dim], got " +
                         z.shape_str());
  const int n = z.shape()[0];
  const int d = z.shape()[1];
  if (static_cast<int>(rngs.size()) != n)
    throw ContractError("langevin_step needs one rng per chain");

  Tensor grad = grad_log_density_z(prior, z);
  const double half_sq = 0.5 * step_size * step_size;

  Tensor out({n, d});
  for (int c = 0; c < n; ++c) {
    for (int k = 0; k < d; ++k) {
      const double g = grad.at(c, k);
      if (!std::isfinite(g))
        throw DivergenceError(
            "non-finite langevin drift in chain " + std::to_string(c), c);
      out.data()[static_cast<std::size_t>(c) * d + k] =
          z.at(c, k) + half_sq * g + step_size * rngs[c].normal();
    }
  }
  return out;
}

ChainResult run_chains(const EbmPrior& prior, const LangevinConfig& config) {
  if (config.n_chains <= 0) throw ContractError("n_chains must be positive");
  if (config.steps < 0) throw ContractError("steps must be >= 0");
  if (!(config.step_size > 0.0))
    throw ContractError("step_size must be positive");
  int prev = -1;
  for (int s : config.snapshot_steps) {
    if (s < 0 || s > config.steps || s <= prev)
      throw ContractError("snapshot steps must be strictly increasing within "
                          "[0, steps]");
    prev = s;
  }

  const int n = config.n_chains;
  const int d = prior.reference.dim;
  RngStream root(config.seed);
  std::vector<RngStream> rngs;
  rngs.reserve(n);
  for (int c = 0; c < n; ++c)
    rngs.push_back(root.substream(static_cast<std::uint64_t>(c)));

  // Chain c's initial point comes from its own stream, then the stream keeps
  // feeding that chain's noise.
  Tensor z({n, d});
  for (int c = 0; c < n; ++c) {
    Tensor row = prior.reference.sample(1, rngs[c]);
    for (int k = 0; k < d; ++k)
      z.data()[static_cast<std::size_t>(c) * d + k] = row.at(0, k);
  }

  ChainResult result;
  std::size_t next_snapshot = 0;
  auto maybe_snapshot = [&](int step) {
    if (next_snapshot < config.snapshot_steps.size() &&
        config.snapshot_steps[next_snapshot] == step) {
      result.trace.snapshots.emplace_back(step, z.clone());
      ++next_snapshot;
    }
  };

  maybe_snapshot(0);
  for (int step = 1; step <= config.steps; ++step) {
    z = langevin_step(prior, z, config.step_size, rngs);
    maybe_snapshot(step);
  }

  result.final_samples = z;
  return result;
}

}  // namespace ebmm
