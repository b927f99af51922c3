#pragma once

#include <vector>

#include "ebmm/nets.hpp"
#include "ebmm/rng.hpp"
#include "ebmm/tensor.hpp"

namespace ebmm {

/// Per-modality posterior factors for one batch, aligned [batch x dim].
struct PosteriorBundle {
  std::vector<EncoderOutput> experts;
};

/// Reparameterized draw z = mean + exp(logvar / 2) * eps. eps enters as a
/// constant, so gradients flow to mean and logvar only.
Tensor reparam_sample(Tape& tape, const EncoderOutput& expert,
                      const Tensor& eps);
/// Same, drawing eps ~ N(0, I) from rng.
Tensor reparam_sample(Tape& tape, const EncoderOutput& expert, RngStream& rng);

/// Per-row log density of the uniform mixture over expert Gaussians:
/// log (1/m) sum_i N(z; mean_i, diag exp(logvar_i)), giving [batch].
/// Invariant under expert order, and with m copies of one expert it equals
/// that expert's own log density bitwise.
Tensor mixture_log_density(Tape& tape,
                           const std::vector<EncoderOutput>& experts,
                           const Tensor& z);

/// Per-row KL(N(mean, diag exp(logvar)) || N(0, I)), giving [batch].
Tensor gaussian_kl_standard(Tape& tape, const EncoderOutput& expert);

}  // namespace ebmm
