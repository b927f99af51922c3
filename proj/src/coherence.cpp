#include "ebmm/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ebmm/errors.hpp"
#include "ebmm/moe.hpp"
#include "ebmm/rng.hpp"

namespace ebmm {

namespace {

std::vector<NamedParam> classifier_params(MlpParams& mlp) {
  std::vector<NamedParam> out;
  visit_params(mlp, "clf", [&](const std::string& name, Tensor& t) {
    out.push_back({name, t});
  });
  return out;
}

Tensor view_tensor(const Dataset& ds, int modality) {
  const int n = ds.size();
  Tensor x({n, ds.dims[modality]});
  std::copy(ds.views[modality].begin(), ds.views[modality].end(), x.data());
  return x;
}

void write_text_atomic(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path);
}

}  // namespace

ClassifierModel train_classifier(const Dataset& train, const Dataset& test,
                                 int modality, const ClassifierConfig& cfg) {
  if (modality < 0 || modality >= train.modalities)
    throw ContractError("classifier modality index out of range");
  if (train.size() < 1) throw ConfigError("classifier training set is empty");
  const int K = train.classes;
  const int dim = train.dims[modality];

  RngStream root(cfg.seed);
  ClassifierModel clf;
  clf.modality = modality;
  clf.classes = K;
  {
    RngStream init =
        root.substream(1000 + static_cast<std::uint64_t>(modality));
    clf.mlp = init_mlp({dim, cfg.hidden, K}, Activation::Tanh,
                       Activation::Identity, init);
  }

  const int n = train.size();
  const int B = std::min(cfg.batch_size, n);
  const long batches = n / B;
  AdamState opt;
  AdamConfig adam;
  adam.lr = cfg.lr;
  std::vector<int> perm(n);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < n; ++i) perm[i] = i;
    RngStream shuffle = root.substream(
        0x5AFF000ull + static_cast<std::uint64_t>(modality) * 100000 + epoch);
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[shuffle.uniform_int(i + 1)]);

    for (long b = 0; b < batches; ++b) {
      Tensor x({B, dim});
      Tensor onehot({B, K});
      for (int r = 0; r < B; ++r) {
        const int idx = perm[b * B + r];
        const double* src =
            train.views[modality].data() + static_cast<std::size_t>(idx) * dim;
        std::copy(src, src + dim, x.data() + static_cast<std::size_t>(r) * dim);
        onehot.data()[static_cast<std::size_t>(r) * K + train.labels[idx]] =
            1.0;
      }
      Tape tape;
      std::vector<NamedParam> params = classifier_params(clf.mlp);
      for (NamedParam& p : params) {
        p.tensor.zero_grad();
        tape.watch(p.tensor);
      }
      Tensor logits = mlp_forward(tape, clf.mlp, x);
      Tensor ce_rows =
          tape.sub(tape.logsumexp(logits), tape.sum_rows(tape.mul(logits, onehot)));
      tape.backward(tape.mean(ce_rows));
      adam_step(opt, adam, params, /*ascend=*/false);
    }
  }

  if (test.size() > 0) {
    const std::vector<int> preds = classify(clf, view_tensor(test, modality));
    int hits = 0;
    for (int r = 0; r < test.size(); ++r)
      if (preds[r] == test.labels[r]) ++hits;
    clf.held_out_accuracy = static_cast<double>(hits) / test.size();
  }
  return clf;
}

std::vector<int> classify(const ClassifierModel& clf, const Tensor& x) {
  Tape tape;
  Tensor logits = mlp_forward(tape, clf.mlp, x);
  const int n = logits.shape()[0];
  const int K = logits.shape()[1];
  std::vector<int> preds(n);
  for (int r = 0; r < n; ++r) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (logits.at(r, k) > logits.at(r, best)) best = k;
    preds[r] = best;
  }
  return preds;
}

std::vector<double> confidences(const ClassifierModel& clf, const Tensor& x) {
  Tape tape;
  Tensor logits = mlp_forward(tape, clf.mlp, x);
  const int n = logits.shape()[0];
  const int K = logits.shape()[1];
  std::vector<double> conf(n);
  for (int r = 0; r < n; ++r) {
    double top = logits.at(r, 0);
    for (int k = 1; k < K; ++k) top = std::max(top, logits.at(r, k));
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(logits.at(r, k) - top);
    conf[r] = 1.0 / denom;  // exp(top - top) / sum
  }
  return conf;
}

double all_agree_fraction(const std::vector<std::vector<int>>& predictions) {
  if (predictions.empty()) throw ContractError("no prediction lists");
  const std::size_t n = predictions[0].size();
  if (n == 0) throw ContractError("no samples to score");
  for (const auto& p : predictions)
    if (p.size() != n) throw ContractError("prediction lists disagree on n");
  std::size_t agree = 0;
  for (std::size_t r = 0; r < n; ++r) {
    bool all = true;
    for (std::size_t i = 1; i < predictions.size() && all; ++i)
      all = predictions[i][r] == predictions[0][r];
    agree += all;
  }
  return static_cast<double>(agree) / static_cast<double>(n);
}

std::vector<Tensor> decode_all(const ModelBundle& model, const Tensor& z,
                               const std::vector<Tensor>& w_draws) {
  const int n = z.shape()[0];
  std::vector<Tensor> decoded;
  Tape tape;
  for (int j = 0; j < model.m; ++j) {
    Tensor input = z;
    if (model.w_dim > 0) {
      Tensor w = w_draws.empty() ? Tensor::zeros({n, model.w_dim})
                                 : w_draws[j];
      input = tape.concat_cols(z, w);
    }
    decoded.push_back(generator_forward(tape, model.generators[j], input));
  }
  return decoded;
}

double joint_coherence(const ModelBundle& model,
                       const std::vector<ClassifierModel>& classifiers,
                       int n_samples, const LangevinConfig& langevin,
                       std::uint64_t w_seed) {
  if (static_cast<int>(classifiers.size()) != model.m)
    throw ContractError("one classifier per modality required");
  LangevinConfig lc = langevin;
  lc.n_chains = n_samples;
  lc.snapshot_steps.clear();
  Tensor z = run_chains(model.prior, lc).final_samples;

  std::vector<Tensor> w_draws;
  if (model.w_dim > 0) {
    RngStream root(w_seed);
    for (int j = 0; j < model.m; ++j) {
      RngStream rj = root.substream(static_cast<std::uint64_t>(j));
      Tensor w({n_samples, model.w_dim});
      rj.fill_normal(w.data(), w.size());
      w_draws.push_back(w);
    }
  }
  const std::vector<Tensor> decoded = decode_all(model, z, w_draws);
  std::vector<std::vector<int>> preds;
  for (int j = 0; j < model.m; ++j)
    preds.push_back(classify(classifiers[j], decoded[j]));
  return all_agree_fraction(preds);
}

CrossCoherence cross_coherence(const ModelBundle& model,
                               const std::vector<ClassifierModel>& classifiers,
                               const Dataset& test, bool sampled,
                               std::uint64_t seed) {
  if (static_cast<int>(classifiers.size()) != model.m)
    throw ContractError("one classifier per modality required");
  if (test.size() < 1) throw ConfigError("cross-coherence test set is empty");
  const int n = test.size();

  CrossCoherence result;
  result.pair.assign(model.m, std::vector<double>(model.m, 0.0));
  double total = 0.0;
  int pairs = 0;
  RngStream root(seed);

  for (int i = 0; i < model.m; ++i) {
    Tape tape;
    const Tensor x = view_tensor(test, i);
    EncoderOutput enc = encoder_forward(tape, model.encoders[i], x);
    Tensor z = enc.mean;
    if (sampled) {
      RngStream ri = root.substream(static_cast<std::uint64_t>(i));
      Tensor eps({n, model.latent_dim});
      ri.fill_normal(eps.data(), eps.size());
      z = reparam_sample(tape, enc, eps);
    }
    const std::vector<Tensor> decoded = decode_all(model, z);
    for (int j = 0; j < model.m; ++j) {
      if (j == i) continue;
      const std::vector<int> preds = classify(classifiers[j], decoded[j]);
      int hits = 0;
      for (int r = 0; r < n; ++r)
        if (preds[r] == test.labels[r]) ++hits;
      const double score = static_cast<double>(hits) / n;
      result.pair[i][j] = score;
      total += score;
      ++pairs;
    }
  }
  result.overall = pairs ? total / pairs : 1.0;
  return result;
}

double mean_confidence(const std::vector<ClassifierModel>& classifiers,
                       const std::vector<Tensor>& decoded) {
  if (classifiers.size() != decoded.size())
    throw ContractError("one decoded batch per classifier required");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < classifiers.size(); ++j) {
    const std::vector<double> conf = confidences(classifiers[j], decoded[j]);
    for (double c : conf) total += c;
    count += conf.size();
  }
  return total / static_cast<double>(count);
}

std::vector<std::string> chain_transition_dump(const ModelBundle& model,
                                               const LangevinConfig& langevin,
                                               const std::string& dir,
                                               std::uint64_t w_seed) {
  if (langevin.snapshot_steps.empty())
    throw ContractError("chain dump needs a snapshot schedule");
  if (langevin.snapshot_steps.front() != 0 ||
      langevin.snapshot_steps.back() != langevin.steps)
    throw ContractError("snapshot schedule must include steps 0 and S");

  const ChainResult chains = run_chains(model.prior, langevin);

  std::vector<Tensor> w_draws;
  if (model.w_dim > 0) {
    RngStream root(w_seed);
    for (int j = 0; j < model.m; ++j) {
      RngStream rj = root.substream(static_cast<std::uint64_t>(j));
      Tensor w({langevin.n_chains, model.w_dim});
      rj.fill_normal(w.data(), w.size());
      w_draws.push_back(w);
    }
  }

  std::vector<std::string> paths;
  char buf[40];
  for (const auto& [step, zs] : chains.trace.snapshots) {
    const std::vector<Tensor> decoded = decode_all(model, zs, w_draws);
    for (int j = 0; j < model.m; ++j) {
      std::ostringstream body;
      const Tensor& d = decoded[j];
      for (int r = 0; r < d.shape()[0]; ++r) {
        for (int c = 0; c < d.shape()[1]; ++c) {
          if (c) body << ' ';
          std::snprintf(buf, sizeof(buf), "%.9g", d.at(r, c));
          body << buf;
        }
        body << '\n';
      }
      const std::string path = dir + "/chain_s" + std::to_string(step) + "_m" +
                               std::to_string(j) + ".txt";
      write_text_atomic(path, body.str());
      paths.push_back(path);
    }
  }
  return paths;
}

}  // namespace ebmm
