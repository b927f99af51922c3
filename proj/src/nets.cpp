#include "ebmm/nets.hpp"

#include <cmath>

#include "ebmm/errors.hpp"

namespace ebmm {

DenseLayer init_dense(int in, int out, RngStream& rng) {
  if (in <= 0 || out <= 0) throw ContractError("layer extents must be positive");
  const double limit = std::sqrt(6.0 / (in + out));
  Tensor w({out, in});
  for (std::size_t i = 0; i < w.size(); ++i)
    w.data()[i] = rng.uniform(-limit, limit);
  return {w, Tensor({out})};
}

MlpParams init_mlp(const std::vector<int>& extents, Activation hidden,
                   Activation output, RngStream& rng) {
  if (extents.size() < 2) throw ContractError("mlp needs at least one layer");
  MlpParams mlp;
  mlp.hidden = hidden;
  mlp.output = output;
  for (std::size_t i = 0; i + 1 < extents.size(); ++i)
    mlp.layers.push_back(init_dense(extents[i], extents[i + 1], rng));
  return mlp;
}

void zero_layer(DenseLayer& layer) {
  std::fill(layer.weight.data(), layer.weight.data() + layer.weight.size(), 0.0);
  std::fill(layer.bias.data(), layer.bias.data() + layer.bias.size(), 0.0);
}

Tensor dense_forward(Tape& tape, const DenseLayer& layer, const Tensor& x) {
  return tape.add(tape.matmul(x, layer.weight, /*transpose_b=*/true),
                  layer.bias);
}

Tensor mlp_forward(Tape& tape, const MlpParams& mlp, const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    h = dense_forward(tape, mlp.layers[i], h);
    const bool last = i + 1 == mlp.layers.size();
    h = tape.activation(h, last ? mlp.output : mlp.hidden);
  }
  return h;
}

Tensor generator_forward(Tape& tape, const GeneratorNet& net, const Tensor& z) {
  return mlp_forward(tape, net.mlp, z);
}

Tensor generator_sample(Tape& tape, const GeneratorNet& net, const Tensor& z,
                        RngStream& rng) {
  Tensor mean = generator_forward(tape, net, z);
  Tensor noise(mean.shape());
  rng.fill_normal(noise.data(), noise.size());
  const double sd = std::sqrt(net.observation_variance);
  for (std::size_t i = 0; i < noise.size(); ++i) noise.data()[i] *= sd;
  return tape.add(mean, noise);
}

EncoderOutput encoder_forward(Tape& tape, const EncoderNet& net,
                              const Tensor& x) {
  Tensor h = mlp_forward(tape, net.trunk, x);
  return {dense_forward(tape, net.mean_head, h),
          dense_forward(tape, net.logvar_head, h)};
}

Tensor energy_forward(Tape& tape, const EnergyNet& net, const Tensor& z) {
  return mlp_forward(tape, net.mlp, z);
}

EncoderNet init_encoder(int in, int hidden, int hidden_layers, int out,
                        RngStream& rng) {
  std::vector<int> extents{in};
  for (int i = 0; i < hidden_layers; ++i) extents.push_back(hidden);
  EncoderNet net;
  // The trunk's last layer is still a hidden layer, so it gets the hidden
  // activation too.
  net.trunk = init_mlp(extents, Activation::Tanh, Activation::Tanh, rng);
  net.mean_head = init_dense(hidden, out, rng);
  net.logvar_head = init_dense(hidden, out, rng);
  return net;
}

GeneratorNet init_generator(int in, int hidden, int hidden_layers, int out,
                            double observation_variance, RngStream& rng) {
  std::vector<int> extents{in};
  for (int i = 0; i < hidden_layers; ++i) extents.push_back(hidden);
  extents.push_back(out);
  GeneratorNet net;
  net.mlp = init_mlp(extents, Activation::Tanh, Activation::Identity, rng);
  net.observation_variance = observation_variance;
  return net;
}

EnergyNet init_energy(int in, int width, int layers, RngStream& rng) {
  std::vector<int> extents{in};
  for (int i = 0; i < layers; ++i) extents.push_back(width);
  extents.push_back(1);
  EnergyNet net;
  net.mlp = init_mlp(extents, Activation::Softplus, Activation::Identity, rng);
  return net;
}

void visit_params(MlpParams& mlp, const std::string& prefix,
                  const ParamVisitor& fn) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    fn(prefix + ".w" + std::to_string(i), mlp.layers[i].weight);
    fn(prefix + ".b" + std::to_string(i), mlp.layers[i].bias);
  }
}

void visit_params(EncoderNet& net, const std::string& prefix,
                  const ParamVisitor& fn) {
  visit_params(net.trunk, prefix + ".trunk", fn);
  fn(prefix + ".mean.w", net.mean_head.weight);
  fn(prefix + ".mean.b", net.mean_head.bias);
  fn(prefix + ".logvar.w", net.logvar_head.weight);
  fn(prefix + ".logvar.b", net.logvar_head.bias);
}

void visit_params(GeneratorNet& net, const std::string& prefix,
                  const ParamVisitor& fn) {
  visit_params(net.mlp, prefix, fn);
}

void visit_params(EnergyNet& net, const std::string& prefix,
                  const ParamVisitor& fn) {
  visit_params(net.mlp, prefix, fn);
}

}  // namespace ebmm
