#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ebmm/prior.hpp"
#include "ebmm/rng.hpp"
#include "ebmm/tensor.hpp"

namespace ebmm {

struct LangevinConfig {
  int steps = 50;
  double step_size = 0.1;
  int n_chains = 64;
  /// Steps at which to snapshot the chain states, strictly increasing,
  /// each within [0, steps]. Step 0 is the initialization. Empty = none.
  std::vector<int> snapshot_steps;
  std::uint64_t seed = 0;
};

struct ChainTrace {
  /// (step, [n_chains x dim]) in schedule order.
  std::vector<std::pair<int, Tensor>> snapshots;
};

struct ChainResult {
  Tensor final_samples;  // [n_chains x dim]
  ChainTrace trace;
};

/// One unadjusted Langevin step on every row of z:
///   z' = z + (step_size^2 / 2) * grad log p(z) + step_size * eps
/// with eps ~ N(0, I) drawn row-wise from rngs[row]. The drift uses the
/// unnormalized density, whose gradient equals the normalized one. z is left
/// unmodified. A non-finite gradient row raises DivergenceError carrying the
/// row (chain) index.
Tensor langevin_step(const EbmPrior& prior, const Tensor& z, double step_size,
                     std::vector<RngStream>& rngs);

/// Run n_chains independent chains for `steps` steps from iid reference
/// draws. Chain c consumes only the substream (seed, c), so a chain's whole
/// trajectory is a pure function of (prior, seed, c): prefixes of two runs
/// with different n_chains agree bitwise.
ChainResult run_chains(const EbmPrior& prior, const LangevinConfig& config);

}  // namespace ebmm
