#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ebmm/data.hpp"
#include "ebmm/errors.hpp"

using namespace ebmm;
namespace fs = std::filesystem;

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() /
          ("ebmm_data_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string file(const std::string& name) const {
    return (dir / name).string();
  }
};

DatasetSpec gmm_spec(int k = 3, double noise = 0.3, int n = 3000) {
  DatasetSpec spec;
  spec.family = DatasetFamily::GmmPair;
  spec.classes = k;
  spec.noise = noise;
  spec.n_train = n;
  spec.n_test = 1000;
  spec.seed = 7;
  return spec;
}

// classify by the nearest per-class train mean, one modality at a time
double nearest_center_accuracy(const Dataset& train, const Dataset& test,
                               int modality) {
  const int K = train.classes;
  const int d = train.dims[modality];
  std::vector<std::vector<double>> centers(K, std::vector<double>(d, 0.0));
  std::vector<int> counts(K, 0);
  for (int r = 0; r < train.size(); ++r) {
    const int k = train.labels[r];
    ++counts[k];
    for (int j = 0; j < d; ++j)
      centers[k][j] += train.views[modality][static_cast<std::size_t>(r) * d + j];
  }
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < d; ++j) centers[k][j] /= std::max(1, counts[k]);

  int hits = 0;
  for (int r = 0; r < test.size(); ++r) {
    double best = 1e300;
    int arg = -1;
    for (int k = 0; k < K; ++k) {
      double dist = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff =
            test.views[modality][static_cast<std::size_t>(r) * d + j] -
            centers[k][j];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = k;
      }
    }
    hits += arg == test.labels[r];
  }
  return static_cast<double>(hits) / test.size();
}

}  // namespace

TEST_CASE("quantize9 is idempotent and survives 9-digit text") {
  const double pi = 3.14159265358979323846;
  const double q = quantize9(pi);
  CHECK(quantize9(q) == q);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", q);
  CHECK(std::stod(buf) == q);
  CHECK(quantize9(0.0) == 0.0);
  CHECK(quantize9(-q) == -q);
}

TEST_CASE("gmm pair with zero noise sits exactly on its centers") {
  DatasetSpec spec = gmm_spec(3, 0.0, 120);
  spec.n_test = 30;
  auto [train, test] = generate_dataset(spec);
  REQUIRE(train.modalities == 2);
  REQUIRE(train.dims == std::vector<int>{2, 2});

  for (int r = 0; r < train.size(); ++r) {
    const int k = train.labels[r];
    REQUIRE(k >= 0);
    REQUIRE(k < 3);
    const double ang_a = kTau * k / 3.0;
    // modality B shifts the class one step and rotates half a sector
    const double ang_b = kTau * ((k + 1) % 3) / 3.0 + kTau / 6.0;
    CHECK(train.views[0][2 * r] == quantize9(4.0 * std::cos(ang_a)));
    CHECK(train.views[0][2 * r + 1] == quantize9(4.0 * std::sin(ang_a)));
    CHECK(train.views[1][2 * r] == quantize9(4.0 * std::cos(ang_b)));
    CHECK(train.views[1][2 * r + 1] == quantize9(4.0 * std::sin(ang_b)));
  }
  (void)test;
}

TEST_CASE("gmm pair is nearest-center separable at the default noise") {
  auto [train, test] = generate_dataset(gmm_spec(3, 0.3, 3000));
  CHECK(nearest_center_accuracy(train, test, 0) >= 0.99);
  CHECK(nearest_center_accuracy(train, test, 1) >= 0.99);
}

TEST_CASE("labels are near-uniform for large draws") {
  auto [train, test] = generate_dataset(gmm_spec(3, 0.3, 3000));
  (void)test;
  std::vector<int> counts(3, 0);
  for (int l : train.labels) ++counts[l];
  const double share = 3000.0 / 3.0;
  for (int k = 0; k < 3; ++k) {
    CHECK(counts[k] > share * 0.95);
    CHECK(counts[k] < share * 1.05);
  }
}

TEST_CASE("generation is a pure function of spec and seed") {
  DatasetSpec spec = gmm_spec(4, 0.25, 500);
  auto [a_train, a_test] = generate_dataset(spec);
  auto [b_train, b_test] = generate_dataset(spec);
  CHECK(a_train.labels == b_train.labels);
  CHECK(a_train.views == b_train.views);
  CHECK(a_test.views == b_test.views);

  spec.seed = 8;
  auto [c_train, c_test] = generate_dataset(spec);
  (void)c_test;
  CHECK(a_train.views != c_train.views);

  // train and test splits are themselves distinct streams
  CHECK(a_train.views[0] != a_test.views[0]);
}

TEST_CASE("spec validation rejects out-of-contract requests") {
  DatasetSpec spec = gmm_spec();
  spec.classes = 1;
  CHECK_THROWS_AS(generate_dataset(spec), ConfigError);

  spec = gmm_spec();
  spec.n_train = 25;  // < 10 * classes
  CHECK_THROWS_AS(generate_dataset(spec), ConfigError);

  spec = gmm_spec();
  spec.noise = -0.1;
  CHECK_THROWS_AS(generate_dataset(spec), ConfigError);

  spec = gmm_spec();
  spec.radius = 0.0;
  CHECK_THROWS_AS(generate_dataset(spec), ConfigError);

  spec = gmm_spec();
  spec.family = DatasetFamily::BitmapDigits;
  spec.classes = 11;
  spec.n_train = 200;
  spec.n_test = 200;
  CHECK_THROWS_AS(generate_dataset(spec), ConfigError);
}

TEST_CASE("bitmap digits: noiseless views are per-class constants") {
  DatasetSpec spec;
  spec.family = DatasetFamily::BitmapDigits;
  spec.classes = 4;
  spec.noise = 0.0;
  spec.n_train = 400;
  spec.n_test = 100;
  auto [train, test] = generate_dataset(spec);
  (void)test;
  REQUIRE(train.dims == std::vector<int>{64, 64});

  // collect the first row of each class, then insist every row matches it
  std::vector<std::vector<std::vector<double>>> proto(
      2, std::vector<std::vector<double>>(4));
  for (int r = 0; r < train.size(); ++r) {
    const int k = train.labels[r];
    for (int v = 0; v < 2; ++v) {
      std::vector<double> row(
          train.views[v].begin() + static_cast<std::size_t>(r) * 64,
          train.views[v].begin() + static_cast<std::size_t>(r) * 64 + 64);
      if (proto[v][k].empty())
        proto[v][k] = row;
      else
        CHECK(proto[v][k] == row);
    }
  }

  // modality B is the negative: glyph pixels dark, background bright
  for (int k = 0; k < 4; ++k) {
    REQUIRE(!proto[0][k].empty());
    for (int p = 0; p < 64; ++p) {
      const bool on = proto[0][k][p] == 1.0;
      if (on)
        CHECK(proto[1][k][p] == quantize9(spec.background_b));
      else
        CHECK(proto[0][k][p] == quantize9(spec.background_a));
    }
  }
}

TEST_CASE("bitmap digits: values clamped and template-separable") {
  DatasetSpec spec;
  spec.family = DatasetFamily::BitmapDigits;
  spec.classes = 5;
  spec.noise = 0.1;
  spec.n_train = 1000;
  spec.n_test = 500;
  auto [train, test] = generate_dataset(spec);

  for (int v = 0; v < 2; ++v)
    for (double x : train.views[v]) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }

  CHECK(nearest_center_accuracy(train, test, 0) >= 0.95);
  CHECK(nearest_center_accuracy(train, test, 1) >= 0.95);
}

TEST_CASE("dataset files round-trip bitwise") {
  Scratch scratch;
  auto [train, test] = generate_dataset(gmm_spec(3, 0.3, 120));
  (void)test;
  const std::string path = scratch.file("roundtrip.txt");
  save_dataset(train, path);
  Dataset back = load_dataset(path);
  CHECK(back.modalities == train.modalities);
  CHECK(back.classes == train.classes);
  CHECK(back.dims == train.dims);
  CHECK(back.labels == train.labels);
  CHECK(back.views == train.views);

  // header format is pinned
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "MMDS1 m=2 K=3 n=120 dims=2,2");
}

TEST_CASE("header-only file is a valid empty dataset") {
  Scratch scratch;
  const std::string path = scratch.file("empty.txt");
  std::ofstream(path) << "MMDS1 m=2 K=3 n=0 dims=2,2\n";
  Dataset ds = load_dataset(path);
  CHECK(ds.size() == 0);
  CHECK(ds.modalities == 2);
  CHECK(ds.classes == 3);
  CHECK(ds.dims == std::vector<int>{2, 2});
  CHECK(ds.views[0].empty());
}

TEST_CASE("malformed files raise parse errors with a byte offset") {
  Scratch scratch;
  auto [train, test] = generate_dataset(gmm_spec(3, 0.3, 120));
  (void)test;
  const std::string good = scratch.file("good.txt");
  save_dataset(train, good);

  SUBCASE("truncated mid-row") {
    std::ifstream in(good, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    std::ofstream(scratch.file("cut.txt"), std::ios::binary)
        << text.substr(0, text.size() - 17);
    CHECK_THROWS_WITH_AS(load_dataset(scratch.file("cut.txt")),
                         doctest::Contains("byte"), ParseError);
  }

  SUBCASE("wrong magic") {
    std::ofstream(scratch.file("magic.txt")) << "MMDS9 m=2 K=3 n=0 dims=2,2\n";
    CHECK_THROWS_AS(load_dataset(scratch.file("magic.txt")), ParseError);
  }

  SUBCASE("row count shorter than header") {
    std::ofstream(scratch.file("short.txt"))
        << "MMDS1 m=2 K=2 n=2 dims=1,1\n0,0.5,0.5\n";
    CHECK_THROWS_AS(load_dataset(scratch.file("short.txt")), ParseError);
  }

  SUBCASE("label outside [0, K)") {
    std::ofstream(scratch.file("label.txt"))
        << "MMDS1 m=2 K=2 n=1 dims=1,1\n5,0.5,0.5\n";
    CHECK_THROWS_AS(load_dataset(scratch.file("label.txt")), ParseError);
  }

  SUBCASE("non-numeric value") {
    std::ofstream(scratch.file("nan.txt"))
        << "MMDS1 m=2 K=2 n=1 dims=1,1\n0,zebra,0.5\n";
    CHECK_THROWS_AS(load_dataset(scratch.file("nan.txt")), ParseError);
  }

  SUBCASE("missing file is an io error, not a parse error") {
    CHECK_THROWS_AS(load_dataset(scratch.file("nope.txt")), IoError);
  }
}

TEST_CASE("batches slice rows with their labels") {
  auto [train, test] = generate_dataset(gmm_spec(3, 0.3, 120));
  (void)test;
  Batch b = make_batch(train, {0, 5, 17});
  REQUIRE(b.size() == 3);
  REQUIRE(b.views.size() == 2);
  CHECK(b.views[0].shape() == std::vector<int>{3, 2});
  CHECK(b.labels[1] == train.labels[5]);
  CHECK(b.views[0].at(1, 0) == train.views[0][10]);
  CHECK(b.views[1].at(2, 1) == train.views[1][35]);

  Batch full = full_batch(train);
  CHECK(full.size() == 120);
  CHECK(full.views[0].shape() == std::vector<int>{120, 2});
  CHECK(full.views[0].at(99, 1) == train.views[0][199]);

  CHECK_THROWS_AS(make_batch(train, {}), ContractError);
  CHECK_THROWS_AS(make_batch(train, {120}), ContractError);
  CHECK_THROWS_AS(make_batch(train, {-1}), ContractError);
}
