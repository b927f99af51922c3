#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ebmm/rng.hpp"
#include "ebmm/tensor.hpp"

namespace ebmm {

/// Affine layer; weight is [out x in], bias [out].
struct DenseLayer {
  Tensor weight;
  Tensor bias;
};

struct MlpParams {
  std::vector<DenseLayer> layers;
  Activation hidden = Activation::Tanh;
  Activation output = Activation::Identity;
};

/// Gaussian observation model: mlp gives the mean, a single fixed variance
/// is shared by every output coordinate.
struct GeneratorNet {
  MlpParams mlp;
  double observation_variance = 1.0;
};

struct EncoderOutput {
  Tensor mean;
  Tensor logvar;
};

/// Shared trunk with separate affine mean / log-variance heads.
struct EncoderNet {
  MlpParams trunk;
  DenseLayer mean_head;
  DenseLayer logvar_head;
};

/// Scalar-valued MLP; the raw output is the energy value f(z).
struct EnergyNet {
  MlpParams mlp;
};

/// Weights drawn uniform on +-sqrt(6/(in+out)), biases zero. Draw order is
/// row-major per layer, layers in order, so initialization is a pure
/// function of (extents, rng state).
DenseLayer init_dense(int in, int out, RngStream& rng);
/// extents = {in, hidden..., out}.
MlpParams init_mlp(const std::vector<int>& extents, Activation hidden,
                   Activation output, RngStream& rng);
void zero_layer(DenseLayer& layer);

Tensor dense_forward(Tape& tape, const DenseLayer& layer, const Tensor& x);
/// x is [batch x in] -> [batch x out].
Tensor mlp_forward(Tape& tape, const MlpParams& mlp, const Tensor& x);

/// Noiseless decoded mean, [batch x out].
Tensor generator_forward(Tape& tape, const GeneratorNet& net, const Tensor& z);
/// Mean plus sqrt(observation_variance) * eps with eps drawn from rng.
Tensor generator_sample(Tape& tape, const GeneratorNet& net, const Tensor& z,
                        RngStream& rng);
EncoderOutput encoder_forward(Tape& tape, const EncoderNet& net,
                              const Tensor& x);
/// Energy value per row, [batch x 1].
Tensor energy_forward(Tape& tape, const EnergyNet& net, const Tensor& z);

/// hidden_layers hidden layers of hidden units each, tanh.
EncoderNet init_encoder(int in, int hidden, int hidden_layers, int out,
                        RngStream& rng);
GeneratorNet init_generator(int in, int hidden, int hidden_layers, int out,
                            double observation_variance, RngStream& rng);
/// layers hidden layers of width units, softplus, linear scalar readout.
EnergyNet init_energy(int in, int width, int layers, RngStream& rng);

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
void visit_params(MlpParams& mlp, const std::string& prefix,
                  const ParamVisitor& fn);
void visit_params(EncoderNet& net, const std::string& prefix,
                  const ParamVisitor& fn);
void visit_params(GeneratorNet& net, const std::string& prefix,
                  const ParamVisitor& fn);
void visit_params(EnergyNet& net, const std::string& prefix,
                  const ParamVisitor& fn);

}  // namespace ebmm
