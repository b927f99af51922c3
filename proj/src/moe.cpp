#include "ebmm/moe.hpp"

#include "ebmm/errors.hpp"

namespace ebmm {

Tensor reparam_sample(Tape& tape, const EncoderOutput& expert,
                      const Tensor& eps) {
  Tensor stddev = tape.exp(tape.scale(expert.logvar, 0.5));
  return tape.add(expert.mean, tape.mul(stddev, eps));
}

Tensor reparam_sample(Tape& tape, const EncoderOutput& expert,
                      RngStream& rng) {
  Tensor eps(expert.mean.shape());
  rng.fill_normal(eps.data(), eps.size());
  return reparam_sample(tape, expert, eps);
}

Tensor mixture_log_density(Tape& tape,
                           const std::vector<EncoderOutput>& experts,
                           const Tensor& z) {
  if (experts.empty()) throw ContractError("mixture needs at least one expert");
  std::vector<Tensor> component_rows;
  component_rows.reserve(experts.size());
  for (const EncoderOutput& e : experts) {
    component_rows.push_back(
        tape.gaussian_log_density(z, e.mean, tape.exp(e.logvar)));
  }
  if (component_rows.size() == 1) return component_rows[0];
  return tape.log_mean_exp(tape.stack_cols(component_rows));
}

Tensor gaussian_kl_standard(Tape& tape, const EncoderOutput& expert) {
  // 0.5 * sum_k [ exp(lv) + mean^2 - 1 - lv ]
  Tensor inner = tape.add_scalar(
      tape.sub(tape.add(tape.exp(expert.logvar),
                        tape.mul(expert.mean, expert.mean)),
               expert.logvar),
      -1.0);
  return tape.scale(tape.sum_rows(inner), 0.5);
}

}  // namespace ebmm
