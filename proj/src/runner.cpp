#include "ebmm/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <thread>

#include "ebmm/checkpoint.hpp"
#include "ebmm/errors.hpp"

namespace ebmm {

namespace {

namespace fs = std::filesystem;

// Substream salts. Everything a command draws comes from a documented
// substream of the run seed, so reruns are bit-reproducible and the
// different consumers can never alias.
constexpr std::uint64_t kSaltModelInit = 0x1017;
constexpr std::uint64_t kSaltEvalJointChains = 0xE7A1;
constexpr std::uint64_t kSaltEvalCross = 0xE7A2;
constexpr std::uint64_t kSaltEvalPartition = 0xE7A3;
constexpr std::uint64_t kSaltEvalJointW = 0xE7A4;
constexpr std::uint64_t kSaltEvalElboNoise = 0xE7A5;
constexpr std::uint64_t kSaltChainViz = 0xC417;
constexpr std::uint64_t kSaltChainVizW = 0xC418;

std::uint64_t derived_seed(std::uint64_t run_seed, std::uint64_t salt) {
  return RngStream(run_seed).substream(salt).seed();
}

void ensure_parent_dir(const std::string& path) {
  const fs::path dir = fs::path(path).parent_path();
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create directory " + dir.string() + ": " +
                  ec.message());
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void atomic_write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    const std::size_t n = std::fwrite(text.data(), 1, text.size(), f);
    const bool ok = (n == text.size()) && (std::fclose(f) == 0);
    if (!ok) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path);
}

void sync_mirrors(RunConfig& cfg) {
  cfg.train.seed = cfg.seed;
  cfg.train.langevin = cfg.langevin;
}

/// Every tensor a training checkpoint persists: parameters plus optimizer
/// moments (slots created on the spot so the set is the same no matter when
/// the checkpoint is cut). t_model / t_ebm are caller-owned size-1 tensors
/// mirroring the optimizer step counters.
std::vector<CheckpointEntry> train_state_entries(ModelBundle& model,
                                                 AdamState& model_state,
                                                 AdamState& ebm_state,
                                                 Tensor& t_model,
                                                 Tensor& t_ebm) {
  auto mp = model_params(model);
  auto ep = energy_params(model);
  model_state.ensure(mp);
  ebm_state.ensure(ep);

  std::vector<CheckpointEntry> entries;
  for (auto& p : mp) entries.push_back({p.name, p.tensor});
  for (auto& p : ep) entries.push_back({p.name, p.tensor});
  for (auto& p : mp) {
    entries.push_back({"opt.m." + p.name, model_state.m1.at(p.name)});
    entries.push_back({"opt.v." + p.name, model_state.m2.at(p.name)});
  }
  for (auto& p : ep) {
    entries.push_back({"opt.m." + p.name, ebm_state.m1.at(p.name)});
    entries.push_back({"opt.v." + p.name, ebm_state.m2.at(p.name)});
  }
  entries.push_back({"opt.t.model", t_model});
  entries.push_back({"opt.t.ebm", t_ebm});
  return entries;
}

Dataset load_dataset_checked(const std::string& path) {
  if (!fs::exists(path))
    throw IoError("dataset " + path + " does not exist (run gen-data first?)");
  return load_dataset(path);
}

std::string format_scores_csv(const EvalScores& s, const RunConfig& cfg,
                              int n_test) {
  std::string out = "metric,value,n,seed\n";
  char line[160];
  auto row = [&](const char* metric, double value, long n,
                 std::uint64_t seed) {
    std::snprintf(line, sizeof(line), "%s,%.9g,%ld,%llu\n", metric, value, n,
                  static_cast<unsigned long long>(seed));
    out += line;
  };
  row("joint_coherence", s.joint, cfg.eval.n_samples, cfg.seed);
  row("cross_coherence", s.cross.overall, n_test, cfg.seed);
  const int m = static_cast<int>(s.classifier_acc.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      char name[48];
      std::snprintf(name, sizeof(name), "cross_m%d_to_m%d", i, j);
      row(name, s.cross.pair[i][j], n_test, cfg.seed);
    }
  for (int i = 0; i < m; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "classifier_acc_m%d", i);
    row(name, s.classifier_acc[i], n_test, cfg.eval.classifier_seed);
  }
  row("normalized_elbo", s.normalized_elbo, n_test, cfg.seed);
  row("log_partition", s.log_partition, cfg.eval.partition_samples, cfg.seed);
  return out;
}

}  // namespace

RunConfig resolve_config(RunConfig cfg, const RunnerOptions& opt) {
  if (opt.has_seed) cfg.seed = opt.seed;
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  if (opt.freeze_energy) cfg.train.freeze_energy = true;
  if (opt.extension) cfg.train.extension = true;
  if (cfg.dataset.train_path.empty())
    cfg.dataset.train_path = cfg.out_dir + "/train.mmds";
  if (cfg.dataset.test_path.empty())
    cfg.dataset.test_path = cfg.out_dir + "/test.mmds";
  sync_mirrors(cfg);
  return cfg;
}

ModelSpec effective_model_spec(const RunConfig& cfg) {
  ModelSpec spec = cfg.model;
  if (!cfg.train.extension) spec.w_dim = 0;
  return spec;
}

ModelBundle init_run_model(const RunConfig& cfg,
                           const std::vector<int>& view_dims) {
  ModelBundle model = init_model(effective_model_spec(cfg), view_dims,
                                 RngStream(cfg.seed).substream(kSaltModelInit));
  if (cfg.train.freeze_energy) {
    // Zero output layer makes f identically 0, so the frozen prior is the
    // reference distribution itself, not a random fixed tilt.
    zero_layer(model.energy_net->mlp.layers.back());
    model.prior.energy->notify_params_changed();
  }
  return model;
}

ModelBundle train_in_memory(const RunConfig& cfg, const Dataset& train) {
  ModelBundle model = init_run_model(cfg, train.dims);
  AdamState model_state, ebm_state;
  train_loop(model, train, cfg.train, model_state, ebm_state, 0, TrainHooks{});
  return model;
}

std::vector<ClassifierModel> eval_classifiers(const RunConfig& cfg,
                                              const Dataset& train,
                                              const Dataset& test) {
  // Cache key: only what determines the trained classifiers. Hashed over the
  // full canonical text (not config_digest, which drops the eval section).
  RunConfig key;
  key.dataset = cfg.dataset;
  key.dataset.train_path.clear();
  key.dataset.test_path.clear();
  key.eval.classifier_epochs = cfg.eval.classifier_epochs;
  key.eval.classifier_hidden = cfg.eval.classifier_hidden;
  key.eval.classifier_seed = cfg.eval.classifier_seed;
  const std::string digest = digest_hex(config_to_json_text(key));
  const std::string stem = cfg.out_dir + "/classifiers_" + digest;

  const int m = train.modalities;
  std::vector<ClassifierModel> classifiers(m);
  std::vector<Tensor> acc(m);
  for (int i = 0; i < m; ++i) acc[i] = Tensor::zeros({1});

  if (fs::exists(stem + ".json")) {
    std::vector<CheckpointEntry> entries;
    RngStream scratch(0);
    for (int i = 0; i < m; ++i) {
      classifiers[i].modality = i;
      classifiers[i].classes = train.classes;
      classifiers[i].mlp =
          init_mlp({train.dims[i], cfg.eval.classifier_hidden, train.classes},
                   Activation::Tanh, Activation::Identity, scratch);
      const std::string prefix = "clf" + std::to_string(i);
      visit_params(classifiers[i].mlp, prefix,
                   [&](const std::string& name, Tensor& t) {
                     entries.push_back({name, t});
                   });
      entries.push_back({prefix + ".acc", acc[i]});
    }
    load_checkpoint(stem, entries);
    for (int i = 0; i < m; ++i)
      classifiers[i].held_out_accuracy = acc[i].value();
    return classifiers;
  }

  ClassifierConfig clf_cfg;
  clf_cfg.epochs = cfg.eval.classifier_epochs;
  clf_cfg.hidden = cfg.eval.classifier_hidden;
  clf_cfg.seed = cfg.eval.classifier_seed;
  std::vector<CheckpointEntry> entries;
  for (int i = 0; i < m; ++i) {
    classifiers[i] = train_classifier(train, test, i, clf_cfg);
    acc[i].data()[0] = classifiers[i].held_out_accuracy;
    const std::string prefix = "clf" + std::to_string(i);
    visit_params(classifiers[i].mlp, prefix,
                 [&](const std::string& name, Tensor& t) {
                   entries.push_back({name, t});
                 });
    entries.push_back({prefix + ".acc", acc[i]});
  }
  ensure_dir(cfg.out_dir);
  save_checkpoint(stem, entries, CheckpointInfo{0, digest});
  return classifiers;
}

EvalScores evaluate_model(ModelBundle& model, const RunConfig& cfg,
                          const std::vector<ClassifierModel>& classifiers,
                          const Dataset& test, bool with_elbo) {
  EvalScores scores;

  LangevinConfig lc = cfg.langevin;
  lc.seed = derived_seed(cfg.seed, kSaltEvalJointChains);
  scores.joint =
      joint_coherence(model, classifiers, cfg.eval.n_samples, lc,
                      derived_seed(cfg.seed, kSaltEvalJointW));
  scores.cross =
      cross_coherence(model, classifiers, test, cfg.eval.sampled_cross,
                      derived_seed(cfg.seed, kSaltEvalCross));
  scores.classifier_acc.resize(classifiers.size());
  for (std::size_t i = 0; i < classifiers.size(); ++i)
    scores.classifier_acc[i] = classifiers[i].held_out_accuracy;

  if (with_elbo) {
    Batch batch = full_batch(test);
    RngStream noise_rng =
        RngStream(cfg.seed).substream(kSaltEvalElboNoise);
    ElboNoise noise = draw_elbo_noise(model.m, batch.size(), model.latent_dim,
                                      model.w_dim, noise_rng);
    Tape tape;
    ElboTerms terms = elbo_terms(tape, model, batch, noise);
    RngStream part_rng = RngStream(cfg.seed).substream(kSaltEvalPartition);
    scores.log_partition = estimate_log_partition(
        model.prior, cfg.eval.partition_samples, part_rng);
    scores.normalized_elbo = terms.objective - scores.log_partition;
  }
  return scores;
}

void run_gen_data(const std::string& config_path, const RunnerOptions& opt) {
  const RunConfig cfg = resolve_config(load_config(config_path), opt);
  const auto [train, test] = generate_dataset(cfg.dataset);
  ensure_dir(cfg.out_dir);
  ensure_parent_dir(cfg.dataset.train_path);
  ensure_parent_dir(cfg.dataset.test_path);
  save_dataset(train, cfg.dataset.train_path);
  save_dataset(test, cfg.dataset.test_path);
  std::printf("gen-data: %s (%d examples), %s (%d examples), family=%s, "
              "classes=%d, modalities=%d\n",
              cfg.dataset.train_path.c_str(), train.size(),
              cfg.dataset.test_path.c_str(), test.size(),
              cfg.dataset.family == DatasetFamily::GmmPair ? "gmm_pair"
                                                           : "bitmap_digits",
              train.classes, train.modalities);
}

void run_train(const std::string& config_path, const RunnerOptions& opt) {
  const RunConfig cfg = resolve_config(load_config(config_path), opt);
  const std::string digest = config_digest(cfg);
  const Dataset train = load_dataset_checked(cfg.dataset.train_path);

  ModelBundle model = init_run_model(cfg, train.dims);
  AdamState model_state, ebm_state;
  Tensor t_model = Tensor::zeros({1});
  Tensor t_ebm = Tensor::zeros({1});
  auto entries =
      train_state_entries(model, model_state, ebm_state, t_model, t_ebm);

  long start_iter = 0;
  if (!opt.resume.empty()) {
    const CheckpointInfo info = load_checkpoint(opt.resume, entries);
    if (info.config_digest != digest)
      throw ArtifactError("checkpoint " + opt.resume + " was produced by a "
                          "different configuration (digest " +
                          info.config_digest + ", expected " + digest + ")");
    model_state.t = static_cast<long>(t_model.value());
    ebm_state.t = static_cast<long>(t_ebm.value());
    start_iter = info.iteration;
    model.prior.energy->notify_params_changed();
  }

  ensure_dir(cfg.out_dir);
  const std::string metrics_path = cfg.out_dir + "/metrics.csv";
  std::FILE* metrics = std::fopen(metrics_path.c_str(), "wb");
  if (!metrics) throw IoError("cannot open " + metrics_path + " for writing");
  std::fputs(
      "iter,elbo,recon_mean,prior_term,entropy_term,grad_norm_model,"
      "grad_norm_ebm,wall_ms\n",
      metrics);
  std::fflush(metrics);

  std::string last_ckpt;
  double last_elbo = std::numeric_limits<double>::quiet_NaN();
  TrainHooks hooks;
  hooks.on_record = [&](const IterationRecord& rec) {
    std::fprintf(metrics, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                 rec.iter, rec.elbo, rec.recon_mean, rec.prior_term,
                 rec.entropy_term, rec.grad_norm_model, rec.grad_norm_ebm,
                 rec.wall_ms);
    std::fflush(metrics);
    last_elbo = rec.elbo;
  };
  hooks.on_checkpoint = [&](long done) {
    t_model.data()[0] = static_cast<double>(model_state.t);
    t_ebm.data()[0] = static_cast<double>(ebm_state.t);
    const std::string stem =
        cfg.out_dir + (done == cfg.train.iterations
                           ? "/ckpt_final"
                           : "/ckpt_" + std::to_string(done));
    save_checkpoint(stem, entries, CheckpointInfo{done, digest});
    last_ckpt = stem;
  };

  try {
    train_loop(model, train, cfg.train, model_state, ebm_state, start_iter,
               hooks);
  } catch (const DivergenceError& e) {
    std::fclose(metrics);
    throw DivergenceError(std::string(e.what()) + "; last checkpoint: " +
                              (last_ckpt.empty() ? "none" : last_ckpt),
                          e.index);
  }
  std::fclose(metrics);

  std::printf("train: %ld iterations done (started at %ld), objective %.9g, "
              "checkpoint %s, metrics %s\n",
              cfg.train.iterations, start_iter, last_elbo, last_ckpt.c_str(),
              metrics_path.c_str());
}

void run_eval(const std::string& config_path, const std::string& checkpoint,
              const RunnerOptions& opt) {
  const RunConfig cfg = resolve_config(load_config(config_path), opt);
  const Dataset train = load_dataset_checked(cfg.dataset.train_path);
  const Dataset test = load_dataset_checked(cfg.dataset.test_path);

  ModelBundle model = init_run_model(cfg, train.dims);
  AdamState model_state, ebm_state;
  Tensor t_model = Tensor::zeros({1});
  Tensor t_ebm = Tensor::zeros({1});
  auto entries =
      train_state_entries(model, model_state, ebm_state, t_model, t_ebm);
  const CheckpointInfo info = load_checkpoint(checkpoint, entries);
  model.prior.energy->notify_params_changed();
  if (info.config_digest != config_digest(cfg))
    std::printf("note: checkpoint config digest %s differs from the current "
                "config's %s; evaluating anyway\n",
                info.config_digest.c_str(), config_digest(cfg).c_str());

  const std::vector<ClassifierModel> classifiers =
      eval_classifiers(cfg, train, test);
  EvalScores scores = evaluate_model(model, cfg, classifiers, test, true);

  ensure_dir(cfg.out_dir);
  const std::string csv = format_scores_csv(scores, cfg, test.size());
  const std::string path = cfg.out_dir + "/scores.csv";
  atomic_write_text(path, csv);
  std::fputs(csv.c_str(), stdout);
  std::printf("eval: wrote %s (checkpoint iteration %ld)\n", path.c_str(),
              info.iteration);
}

void run_ablate(const std::string& config_path, const RunnerOptions& opt) {
  const RunConfig cfg = resolve_config(load_config(config_path), opt);
  const Dataset train = load_dataset_checked(cfg.dataset.train_path);
  const Dataset test = load_dataset_checked(cfg.dataset.test_path);
  const std::vector<ClassifierModel> classifiers =
      eval_classifiers(cfg, train, test);

  struct Cell {
    int D = 0, L = 0, S = 0;
    std::uint64_t seed = 0;
    double joint = std::numeric_limits<double>::quiet_NaN();
    double cross = std::numeric_limits<double>::quiet_NaN();
  };
  std::vector<Cell> cells;
  for (int D : cfg.ablate.hidden_units)
    for (int L : cfg.ablate.layers)
      for (int S : cfg.ablate.steps)
        for (std::uint64_t seed : cfg.ablate.seeds)
          cells.push_back({D, L, S, seed});

  auto run_cell = [&](Cell& cell) {
    RunConfig c = cfg;
    c.model.energy_hidden = cell.D;
    c.model.energy_layers = cell.L;
    c.langevin.steps = cell.S;
    c.seed = cell.seed;
    sync_mirrors(c);
    try {
      ModelBundle model = train_in_memory(c, train);
      EvalScores s = evaluate_model(model, c, classifiers, test, false);
      cell.joint = s.joint;
      cell.cross = s.cross.overall;
    } catch (const std::exception&) {
      // Recorded as nan in the row; remaining cells still run.
    }
  };

  int threads = 1;
  if (const char* env = std::getenv("EBMMOE_THREADS"))
    threads = std::clamp(std::atoi(env), 1, 64);
  threads = std::min<int>(threads, static_cast<int>(cells.size()));

  if (threads <= 1) {
    for (auto& cell : cells) run_cell(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < cells.size();
             i = next.fetch_add(1))
          run_cell(cells[i]);
      });
    for (auto& t : pool) t.join();
  }

  std::string out = "D,L,S,seed,joint,cross\n";
  char line[128];
  for (const Cell& cell : cells) {
    std::snprintf(line, sizeof(line), "%d,%d,%d,%llu,%.9g,%.9g\n", cell.D,
                  cell.L, cell.S, static_cast<unsigned long long>(cell.seed),
                  cell.joint, cell.cross);
    out += line;
  }
  ensure_dir(cfg.out_dir);
  const std::string path = cfg.out_dir + "/ablation.csv";
  atomic_write_text(path, out);
  std::printf("ablate: %zu cells, wrote %s\n", cells.size(), path.c_str());
}

void run_chain_viz(const std::string& config_path,
                   const std::string& checkpoint, const RunnerOptions& opt) {
  const RunConfig cfg = resolve_config(load_config(config_path), opt);
  const auto& schedule = cfg.langevin.snapshot_steps;
  if (schedule.empty() || schedule.front() != 0 ||
      schedule.back() != cfg.langevin.steps)
    throw ConfigError(
        "config: langevin.snapshot_steps must be a non-empty schedule "
        "running from 0 to langevin.steps");

  const Dataset train = load_dataset_checked(cfg.dataset.train_path);
  ModelBundle model = init_run_model(cfg, train.dims);
  AdamState model_state, ebm_state;
  Tensor t_model = Tensor::zeros({1});
  Tensor t_ebm = Tensor::zeros({1});
  auto entries =
      train_state_entries(model, model_state, ebm_state, t_model, t_ebm);
  load_checkpoint(checkpoint, entries);
  model.prior.energy->notify_params_changed();

  LangevinConfig lc = cfg.langevin;
  lc.seed = derived_seed(cfg.seed, kSaltChainViz);
  ensure_dir(cfg.out_dir);
  const std::vector<std::string> files = chain_transition_dump(
      model, lc, cfg.out_dir, derived_seed(cfg.seed, kSaltChainVizW));
  std::printf("chain-viz: wrote %zu files to %s\n", files.size(),
              cfg.out_dir.c_str());
}

}  // namespace ebmm
