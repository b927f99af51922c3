// Exercises the shared library strictly through the C header. Everything the
// library does here is reachable from plain C; the C++ below is test
// scaffolding only (scratch dirs, byte comparisons).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <ebmm.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

namespace fs = std::filesystem;

// The header promises these double as CLI exit codes, so the values are ABI.
static_assert(EBMM_OK == 0 && EBMM_INTERNAL == 1 && EBMM_CONFIG == 2 &&
                  EBMM_IO == 3 && EBMM_DIVERGED == 4 && EBMM_ARTIFACT == 5,
              "result codes are load-bearing");

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& tag) {
    dir = fs::temp_directory_path() /
          ("ebmm_capi_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const {
    return (dir / name).string();
  }
};

// Closes the session even when an assertion bails out of the test case.
struct Session {
  ebmm_session* s;
  explicit Session(const std::string& config_path)
      : s(ebmm_open(config_path.c_str())) {
    REQUIRE(s != nullptr);
  }
  ~Session() { ebmm_close(s); }
  operator ebmm_session*() const { return s; }
};

std::string last_error(ebmm_session* s) { return ebmm_last_error(s); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Same tiny experiment the runner tests use: trains in well under a second.
// Dataset paths are optional so a second config can point at an existing
// generated set while writing its own artifacts elsewhere.
std::string tiny_config_text(const std::string& out_dir,
                             const std::string& train_path = "",
                             const std::string& test_path = "",
                             bool with_schedule = true) {
  std::ostringstream j;
  j << "{\n"
    << "  \"schema\": 1,\n"
    << "  \"seed\": 42,\n"
    << "  \"out_dir\": \"" << out_dir << "\",\n"
    << "  \"dataset\": {\"family\": \"gmm_pair\", \"classes\": 3, "
       "\"noise\": 0.3, \"n_train\": 64, \"n_test\": 32, \"seed\": 5";
  if (!train_path.empty()) j << ", \"train_path\": \"" << train_path << "\"";
  if (!test_path.empty()) j << ", \"test_path\": \"" << test_path << "\"";
  j << "},\n"
    << "  \"model\": {\"latent_dim\": 2, \"hidden_units\": 8, "
       "\"hidden_layers\": 1, \"energy_hidden\": 8, \"energy_layers\": 2},\n"
    << "  \"train\": {\"iterations\": 10, \"batch_size\": 16, "
       "\"checkpoint_interval\": 5},\n"
    << "  \"langevin\": {\"steps\": 5, \"step_size\": 0.1, \"n_chains\": 16";
  if (with_schedule) j << ", \"snapshot_steps\": [0, 2, 5]";
  j << "},\n"
    << "  \"eval\": {\"n_samples\": 64, \"classifier_epochs\": 5, "
       "\"classifier_hidden\": 8, \"partition_samples\": 10000},\n"
    << "  \"ablate\": {\"hidden_units\": [8], \"layers\": [2], "
       "\"steps\": [5], \"seeds\": [1]}\n"
    << "}\n";
  return j.str();
}

}  // namespace

TEST_CASE("version string is stable") {
  CHECK(std::string(ebmm_version()) == "1.0.0");
}

TEST_CASE("null sessions are rejected, never dereferenced") {
  CHECK(ebmm_open(nullptr) == nullptr);
  ebmm_close(nullptr);  // must be a no-op
  CHECK(std::string(ebmm_last_error(nullptr)) == "null session");
  CHECK(ebmm_set_option(nullptr, "seed", "1") == EBMM_INTERNAL);
  CHECK(ebmm_gen_data(nullptr) == EBMM_INTERNAL);
  CHECK(ebmm_train(nullptr) == EBMM_INTERNAL);
  CHECK(ebmm_eval(nullptr, "ckpt") == EBMM_INTERNAL);
  CHECK(ebmm_ablate(nullptr) == EBMM_INTERNAL);
  CHECK(ebmm_chain_viz(nullptr, "ckpt") == EBMM_INTERNAL);
}

TEST_CASE("seed option accepts unsigned decimals only") {
  // The config path is read lazily by commands, so options can be probed
  // without a real file behind the session.
  Session s("unused.json");

  CHECK(ebmm_set_option(s, "seed", "0") == EBMM_OK);
  CHECK(ebmm_set_option(s, "seed", "123") == EBMM_OK);
  CHECK(ebmm_set_option(s, "seed", "18446744073709551615") == EBMM_OK);
  CHECK(last_error(s).empty());

  for (const char* bad : {"", "abc", "-3", "12x", "0x10", "3.5"}) {
    CAPTURE(bad);
    CHECK(ebmm_set_option(s, "seed", bad) == EBMM_CONFIG);
    CHECK(last_error(s).find("seed") != std::string::npos);
  }
  CHECK(ebmm_set_option(s, "seed", nullptr) == EBMM_CONFIG);
  CHECK(last_error(s) == "option seed needs a value");
  CHECK(last_error(s).find("seed") != std::string::npos);

  // A later success clears the stored message.
  CHECK(ebmm_set_option(s, "seed", "7") == EBMM_OK);
  CHECK(last_error(s).empty());
}

TEST_CASE("remaining options: paths, booleans, unknown keys") {
  Session s("unused.json");

  CHECK(ebmm_set_option(s, nullptr, "x") == EBMM_CONFIG);
  CHECK(last_error(s) == "option key is null");

  CHECK(ebmm_set_option(s, "out", "runs/elsewhere") == EBMM_OK);
  CHECK(ebmm_set_option(s, "out", nullptr) == EBMM_CONFIG);
  CHECK(ebmm_set_option(s, "out", "") == EBMM_CONFIG);
  CHECK(last_error(s) == "option out needs a value");

  for (const char* key : {"freeze-energy", "extension"}) {
    CAPTURE(key);
    CHECK(ebmm_set_option(s, key, nullptr) == EBMM_OK);  // bare flag = on
    for (const char* v : {"1", "true", "on", "0", "false", "off"})
      CHECK(ebmm_set_option(s, key, v) == EBMM_OK);
    CHECK(ebmm_set_option(s, key, "maybe") == EBMM_CONFIG);
    CHECK(last_error(s) ==
          std::string("option ") + key + ": not a boolean: maybe");
  }

  CHECK(ebmm_set_option(s, "resume", "runs/out/ckpt_5") == EBMM_OK);
  CHECK(ebmm_set_option(s, "resume", "") == EBMM_CONFIG);
  CHECK(last_error(s) == "option resume needs a value");

  CHECK(ebmm_set_option(s, "threads", "4") == EBMM_CONFIG);
  CHECK(last_error(s) == "unknown option threads");
}

TEST_CASE("failures surface as stable codes with messages") {
  Scratch tmp("codes");

  SUBCASE("missing config file is an io failure") {
    Session s(tmp.path("nope.json"));
    CHECK(ebmm_gen_data(s) == EBMM_IO);
    CHECK_FALSE(last_error(s).empty());
  }

  SUBCASE("unparsable config text") {
    write_text(tmp.path("bad.json"), "{ this is not json");
    Session s(tmp.path("bad.json"));
    CHECK(ebmm_train(s) == EBMM_CONFIG);
    CHECK(last_error(s).find("config parse") != std::string::npos);
  }

  SUBCASE("unknown config key") {
    write_text(tmp.path("weird.json"), "{\"schema\": 1, \"verbosity\": 3}");
    Session s(tmp.path("weird.json"));
    CHECK(ebmm_gen_data(s) == EBMM_CONFIG);
    CHECK(last_error(s).find("verbosity") != std::string::npos);
  }

  SUBCASE("training without the dataset files") {
    write_text(tmp.path("cfg.json"), tiny_config_text(tmp.path("out")));
    Session s(tmp.path("cfg.json"));
    CHECK(ebmm_train(s) == EBMM_IO);
    CHECK_FALSE(last_error(s).empty());
  }

  SUBCASE("eval rejects a null or empty checkpoint before any io") {
    write_text(tmp.path("cfg.json"), tiny_config_text(tmp.path("out")));
    Session s(tmp.path("cfg.json"));
    CHECK(ebmm_eval(s, nullptr) == EBMM_CONFIG);
    CHECK(last_error(s) == "eval needs a checkpoint path");
    CHECK(ebmm_eval(s, "") == EBMM_CONFIG);
    CHECK(ebmm_chain_viz(s, nullptr) == EBMM_CONFIG);
    CHECK(ebmm_chain_viz(s, "") == EBMM_CONFIG);
  }

  SUBCASE("eval with a nonexistent checkpoint is an artifact failure") {
    write_text(tmp.path("cfg.json"), tiny_config_text(tmp.path("out")));
    Session s(tmp.path("cfg.json"));
    REQUIRE(ebmm_gen_data(s) == EBMM_OK);  // datasets load before checkpoints
    CHECK(ebmm_eval(s, tmp.path("out/ckpt_nope").c_str()) == EBMM_ARTIFACT);
    CHECK(last_error(s).find("missing checkpoint manifest") !=
          std::string::npos);
  }

  SUBCASE("chain viz demands a snapshot schedule") {
    write_text(tmp.path("cfg.json"),
               tiny_config_text(tmp.path("out"), "", "",
                                /*with_schedule=*/false));
    Session s(tmp.path("cfg.json"));
    CHECK(ebmm_chain_viz(s, tmp.path("out/ckpt_final").c_str()) ==
          EBMM_CONFIG);
    CHECK(last_error(s).find("langevin.snapshot_steps") != std::string::npos);
  }
}

TEST_CASE("one session drives the whole verb cycle") {
  Scratch tmp("cycle");
  const std::string out = tmp.path("out");
  write_text(tmp.path("cfg.json"), tiny_config_text(out));
  Session s(tmp.path("cfg.json"));

  REQUIRE(ebmm_gen_data(s) == EBMM_OK);
  CHECK(last_error(s).empty());
  CHECK(fs::exists(out + "/train.mmds"));
  CHECK(fs::exists(out + "/test.mmds"));

  REQUIRE(ebmm_train(s) == EBMM_OK);
  CHECK(fs::exists(out + "/metrics.csv"));
  CHECK(fs::exists(out + "/ckpt_5.json"));
  CHECK(fs::exists(out + "/ckpt_5.bin"));
  CHECK(fs::exists(out + "/ckpt_final.json"));
  CHECK(fs::exists(out + "/ckpt_final.bin"));

  // A trailing extension on the checkpoint argument names the same stem.
  REQUIRE(ebmm_eval(s, (out + "/ckpt_final.json").c_str()) == EBMM_OK);
  CHECK(last_error(s).empty());
  const std::string scores = read_bytes(out + "/scores.csv");
  CHECK(scores.rfind("metric,value", 0) == 0);
  CHECK(scores.find("joint_coherence") != std::string::npos);
  CHECK(scores.find("log_partition") != std::string::npos);

  REQUIRE(ebmm_chain_viz(s, (out + "/ckpt_final.bin").c_str()) == EBMM_OK);
  for (const char* name : {"chain_s0_m0.txt", "chain_s0_m1.txt",
                           "chain_s2_m0.txt", "chain_s2_m1.txt",
                           "chain_s5_m0.txt", "chain_s5_m1.txt"}) {
    CAPTURE(name);
    CHECK(fs::exists(out + "/" + name));
  }

  REQUIRE(ebmm_ablate(s) == EBMM_OK);
  CHECK(fs::exists(out + "/ablation.csv"));

  // A failure after all those successes still reports cleanly.
  CHECK(ebmm_eval(s, (out + "/ckpt_9000").c_str()) == EBMM_ARTIFACT);
  CHECK_FALSE(last_error(s).empty());
}

TEST_CASE("seed and out overrides reach the pipeline") {
  Scratch tmp("overrides");
  // Config points at out dir "a"; every session below redirects it.
  write_text(tmp.path("cfg.json"), tiny_config_text(tmp.path("a")));

  auto train_into = [&](const std::string& out, const char* seed) {
    Session s(tmp.path("cfg.json"));
    REQUIRE(ebmm_set_option(s, "out", out.c_str()) == EBMM_OK);
    REQUIRE(ebmm_set_option(s, "seed", seed) == EBMM_OK);
    REQUIRE(ebmm_gen_data(s) == EBMM_OK);
    REQUIRE(ebmm_train(s) == EBMM_OK);
    return read_bytes(out + "/ckpt_final.bin");
  };

  const std::string run_b = train_into(tmp.path("b"), "1");
  const std::string run_c = train_into(tmp.path("c"), "2");
  const std::string run_d = train_into(tmp.path("d"), "1");

  CHECK_FALSE(fs::exists(tmp.path("a")));  // override fully redirected output
  CHECK(run_b == run_d);                   // same seed, bitwise identical
  CHECK(run_b != run_c);                   // the seed override changed the run
}

TEST_CASE("resume override continues a run bit for bit") {
  Scratch tmp("resume");
  const std::string first = tmp.path("first");
  write_text(tmp.path("cfg.json"), tiny_config_text(first));
  {
    Session s(tmp.path("cfg.json"));
    REQUIRE(ebmm_gen_data(s) == EBMM_OK);
    REQUIRE(ebmm_train(s) == EBMM_OK);
    REQUIRE(fs::exists(first + "/ckpt_5.json"));
  }

  // Same experiment, fresh artifact dir, dataset shared with the first run.
  const std::string second = tmp.path("second");
  write_text(tmp.path("cfg2.json"),
             tiny_config_text(second, first + "/train.mmds",
                              first + "/test.mmds"));
  {
    Session s(tmp.path("cfg2.json"));
    // The ".bin" suffix is tolerated and stripped, as for eval.
    REQUIRE(ebmm_set_option(s, "resume",
                            (first + "/ckpt_5.bin").c_str()) == EBMM_OK);
    REQUIRE(ebmm_train(s) == EBMM_OK);
    CHECK(read_bytes(second + "/ckpt_final.bin") ==
          read_bytes(first + "/ckpt_final.bin"));
  }

  // Overriding the seed changes the config digest, so the checkpoint no
  // longer belongs to the run being resumed.
  {
    Session s(tmp.path("cfg2.json"));
    REQUIRE(ebmm_set_option(s, "resume",
                            (first + "/ckpt_5").c_str()) == EBMM_OK);
    REQUIRE(ebmm_set_option(s, "seed", "999") == EBMM_OK);
    CHECK(ebmm_train(s) == EBMM_ARTIFACT);
    CHECK(last_error(s).find("different configuration") != std::string::npos);
  }
}
