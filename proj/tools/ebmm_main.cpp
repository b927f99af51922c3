#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "ebmm.h"

// Thin shell over the C API: parse the command line, forward options, map
// the result code straight onto the process exit code.

int main(int argc, char** argv) {
  CLI::App app{"multimodal latent energy model toolkit"};
  app.require_subcommand(1);

  std::string config, seed, out, resume, checkpoint;
  bool freeze_energy = false;
  bool extension = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "experiment config file (JSON)")
        ->required();
    cmd->add_option("--seed", seed, "override the run seed");
    cmd->add_option("--out", out, "override the output directory");
    cmd->add_flag("--freeze-energy", freeze_energy,
                  "keep the energy at zero: reference-prior baseline");
    cmd->add_flag("--extension", extension,
                  "enable the modality-specific latent factor");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write the dataset files");
  add_common(gen);
  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--resume", resume,
                    "checkpoint stem to continue training from");
  CLI::App* eval = app.add_subcommand("eval", "score a trained checkpoint");
  add_common(eval);
  eval->add_option("checkpoint", checkpoint, "checkpoint stem or manifest")
      ->required();
  CLI::App* ablate =
      app.add_subcommand("ablate", "train and score the config's grid");
  add_common(ablate);
  CLI::App* viz =
      app.add_subcommand("chain-viz", "dump decoded sampler snapshots");
  add_common(viz);
  viz->add_option("checkpoint", checkpoint, "checkpoint stem or manifest")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return EBMM_CONFIG;
  }

  ebmm_session* session = ebmm_open(config.c_str());
  if (!session) {
    std::fprintf(stderr, "error: cannot create session\n");
    return EBMM_INTERNAL;
  }

  int rc = EBMM_OK;
  auto set = [&](const char* key, const char* value) {
    if (rc == EBMM_OK) rc = ebmm_set_option(session, key, value);
  };
  if (!seed.empty()) set("seed", seed.c_str());
  if (!out.empty()) set("out", out.c_str());
  if (freeze_energy) set("freeze-energy", "1");
  if (extension) set("extension", "1");
  if (!resume.empty()) set("resume", resume.c_str());

  if (rc == EBMM_OK) {
    if (gen->parsed())
      rc = ebmm_gen_data(session);
    else if (train->parsed())
      rc = ebmm_train(session);
    else if (eval->parsed())
      rc = ebmm_eval(session, checkpoint.c_str());
    else if (ablate->parsed())
      rc = ebmm_ablate(session);
    else if (viz->parsed())
      rc = ebmm_chain_viz(session, checkpoint.c_str());
  }

  if (rc != EBMM_OK)
    std::fprintf(stderr, "error (%d): %s\n", rc, ebmm_last_error(session));
  ebmm_close(session);
  return rc;
}
