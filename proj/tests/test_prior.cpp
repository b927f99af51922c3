#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "ebmm/errors.hpp"
#include "ebmm/nets.hpp"
#include "ebmm/prior.hpp"
#include "ebmm/rng.hpp"
#include "ebmm/tensor.hpp"

using namespace ebmm;

namespace {

EbmPrior quadratic_prior(double a, int dim,
                         ReferenceKind kind = ReferenceKind::Gaussian) {
  EbmPrior prior;
  prior.energy = std::make_shared<QuadraticEnergy>(a);
  prior.reference = {kind, dim};
  return prior;
}

EbmPrior net_prior(int dim, RngStream& rng, bool zero_readout = false) {
  auto net = std::make_shared<EnergyNet>(init_energy(dim, 8, 2, rng));
  if (zero_readout) zero_layer(net->mlp.layers.back());
  EbmPrior prior;
  prior.energy = std::make_shared<NetEnergy>(net);
  prior.reference = {ReferenceKind::Gaussian, dim};
  return prior;
}

}  // namespace

TEST_CASE("reference log densities match closed forms") {
  Tape tape;
  ReferenceDistribution gauss2{ReferenceKind::Gaussian, 2};
  Tensor z0({1, 2}, {0.0, 0.0});
  CHECK(gauss2.log_density_rows(tape, z0).at(0) ==
        doctest::Approx(-1.8378770664093453).epsilon(1e-15));

  ReferenceDistribution gauss1{ReferenceKind::Gaussian, 1};
  Tensor zh({1, 1}, {0.5});
  CHECK(gauss1.log_density_rows(tape, zh).at(0) ==
        doctest::Approx(-1.0439385332046727).epsilon(1e-15));

  ReferenceDistribution lap1{ReferenceKind::Laplace, 1};
  Tensor l0({1, 1}, {0.0});
  CHECK(lap1.log_density_rows(tape, l0).at(0) ==
        doctest::Approx(-0.6931471805599453).epsilon(1e-15));

  // two coordinates: -2 log 2 - (|0.5| + |-1|)
  ReferenceDistribution lap2{ReferenceKind::Laplace, 2};
  Tensor lz({1, 2}, {0.5, -1.0});
  CHECK(lap2.log_density_rows(tape, lz).at(0) ==
        doctest::Approx(-2.886294361119891).epsilon(1e-14));
}

TEST_CASE("reference log densities are differentiable in z") {
  ReferenceDistribution gauss{ReferenceKind::Gaussian, 3};
  Tensor z({2, 3}, {0.4, -1.2, 0.7, 0.1, 0.9, -0.3});
  CHECK(finite_difference_check(
            [&](Tape& t, Tensor& p) {
              return t.sum(gauss.log_density_rows(t, p));
            },
            z) < 1e-4);

  // keep Laplace coordinates away from the kink at 0
  ReferenceDistribution lap{ReferenceKind::Laplace, 3};
  Tensor zl({2, 3}, {0.4, -1.2, 0.7, 0.6, 0.9, -0.3});
  CHECK(finite_difference_check(
            [&](Tape& t, Tensor& p) {
              return t.sum(lap.log_density_rows(t, p));
            },
            zl) < 1e-4);
}

TEST_CASE("reference samplers have the right moments") {
  const int n = 200000;
  for (ReferenceKind kind : {ReferenceKind::Gaussian, ReferenceKind::Laplace}) {
    ReferenceDistribution ref{kind, 2};
    RngStream rng(kind == ReferenceKind::Gaussian ? 31 : 32);
    Tensor s = ref.sample(n, rng);
    REQUIRE(s.shape() == std::vector<int>{n, 2});
    const double want_var = kind == ReferenceKind::Gaussian ? 1.0 : 2.0;
    for (int j = 0; j < 2; ++j) {
      double mean = 0.0, m2 = 0.0;
      for (int i = 0; i < n; ++i) mean += s.at(i, j);
      mean /= n;
      for (int i = 0; i < n; ++i) {
        const double d = s.at(i, j) - mean;
        m2 += d * d;
      }
      CHECK(std::abs(mean) < 0.02);
      CHECK(std::abs(m2 / (n - 1) - want_var) < want_var * 0.05);
    }
  }
}

TEST_CASE("zero energy reduces to the reference density exactly") {
  RngStream rng(41);
  for (ReferenceKind kind : {ReferenceKind::Gaussian, ReferenceKind::Laplace}) {
    EbmPrior prior = net_prior(2, rng, /*zero_readout=*/true);
    prior.reference.kind = kind;
    Tape tape;
    Tensor z({3, 2}, {0.0, 0.0, 1.5, -2.0, 0.25, 0.75});
    Tensor lhs = log_unnormalized_density_rows(tape, prior, z);
    Tensor rhs = prior.reference.log_density_rows(tape, z);
    for (int i = 0; i < 3; ++i) CHECK(lhs.at(i) == rhs.at(i));
  }
}

TEST_CASE("quadratic tilt adds its energy to the reference") {
  EbmPrior prior = quadratic_prior(3.0, 1);
  Tape tape;
  Tensor z({1, 1}, {1.0});
  // -0.5*3*1 + gaussian log density at residual 1
  CHECK(log_unnormalized_density_rows(tape, prior, z).at(0) ==
        doctest::Approx(-1.5 - 1.4189385332046727).epsilon(1e-15));

  CHECK_THROWS_AS(
      log_unnormalized_density_rows(tape, prior, Tensor({1, 2})),
      DimensionError);
}

TEST_CASE("linear energy evaluates the dot product") {
  EbmPrior prior;
  prior.energy = std::make_shared<LinearEnergy>(Tensor({2}, {1.0, -2.0}));
  prior.reference = {ReferenceKind::Gaussian, 2};
  Tape tape;
  Tensor z({1, 2}, {3.0, 4.0});
  // z.w = -5, reference log density = -log(2pi) - 12.5
  CHECK(log_unnormalized_density_rows(tape, prior, z).at(0) ==
        doctest::Approx(-5.0 - 1.8378770664093453 - 12.5).epsilon(1e-14));
}

TEST_CASE("adding a constant to the energy shifts the density by it") {
  RngStream rng(43);
  EbmPrior prior = net_prior(2, rng);
  auto& net = static_cast<NetEnergy&>(*prior.energy).net();
  Tensor z({4, 2}, {0.1, 0.2, -0.5, 1.0, 2.0, -2.0, 0.0, 0.0});

  Tape tape;
  Tensor before = log_unnormalized_density_rows(tape, prior, z).clone();
  net.mlp.layers.back().bias.data()[0] += 0.75;
  prior.energy->notify_params_changed();
  Tensor after = log_unnormalized_density_rows(tape, prior, z);
  for (int i = 0; i < 4; ++i)
    CHECK(after.at(i) - before.at(i) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("density gradients in the energy parameters flow") {
  EbmPrior prior = quadratic_prior(2.0, 2);
  auto& quad = static_cast<QuadraticEnergy&>(*prior.energy);
  Tensor z({3, 2}, {1.0, 0.5, -0.25, 2.0, 0.0, -1.0});

  auto f = [&](Tape& t, Tensor& coeff) {
    QuadraticEnergy probe(0.0);
    probe.coeff() = coeff;
    EbmPrior p2 = prior;
    p2.energy = std::make_shared<QuadraticEnergy>(probe);
    return t.sum(log_unnormalized_density_rows(t, p2, z));
  };
  CHECK(finite_difference_check(f, quad.coeff()) < 1e-4);

  EbmPrior lin;
  lin.energy = std::make_shared<LinearEnergy>(Tensor({2}, {0.3, -0.6}));
  lin.reference = {ReferenceKind::Gaussian, 2};
  auto g = [&](Tape& t, Tensor& w) {
    EbmPrior p2 = lin;
    p2.energy = std::make_shared<LinearEnergy>(w);
    return t.sum(log_unnormalized_density_rows(t, p2, z));
  };
  CHECK(finite_difference_check(g, Tensor({2}, {0.3, -0.6})) < 1e-4);
}

TEST_CASE("grad_log_density_z closed forms") {
  RngStream rng(47);
  Tensor z({3, 2}, {1.0, -2.0, 0.5, 0.0, -0.75, 3.0});

  SUBCASE("zero energy, Gaussian: gradient is -z exactly") {
    EbmPrior prior = net_prior(2, rng, /*zero_readout=*/true);
    Tensor g = grad_log_density_z(prior, z);
    REQUIRE(g.shape() == z.shape());
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(g.data()[i] == -z.data()[i]);
  }

  SUBCASE("quadratic tilt: gradient is -(1+a) z") {
    EbmPrior prior = quadratic_prior(3.0, 2);
    Tensor g = grad_log_density_z(prior, z);
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(g.data()[i] == doctest::Approx(-4.0 * z.data()[i]).epsilon(1e-14));
  }

  SUBCASE("Laplace subgradient at zero is zero") {
    EbmPrior prior = net_prior(2, rng, /*zero_readout=*/true);
    prior.reference.kind = ReferenceKind::Laplace;
    Tensor at0({1, 2}, {0.0, 1.0});
    Tensor g = grad_log_density_z(prior, at0);
    CHECK(g.at(0, 0) == 0.0);
    CHECK(g.at(0, 1) == -1.0);
  }
}

TEST_CASE("grad_log_density_z matches finite differences of the density") {
  RngStream rng(53);
  EbmPrior prior = net_prior(3, rng);
  Tensor z({2, 3}, {0.4, -0.2, 0.9, 1.1, -0.6, 0.3});
  Tensor g = grad_log_density_z(prior, z);

  const double h = 1e-5;
  auto density_at = [&](const Tensor& at) {
    Tape t;
    return std::vector<double>{
        log_unnormalized_density_rows(t, prior, at).at(0),
        log_unnormalized_density_rows(t, prior, at).at(1)};
  };
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      Tensor hi = z.clone(), lo = z.clone();
      hi.data()[i * 3 + j] += h;
      lo.data()[i * 3 + j] -= h;
      const double numeric = (density_at(hi)[i] - density_at(lo)[i]) / (2 * h);
      const double analytic = g.at(i, j);
      const double denom =
          std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      CHECK(std::abs(numeric - analytic) / denom < 1e-4);
    }
}

TEST_CASE("grad_log_density_z leaves the caller's world alone") {
  EbmPrior prior = quadratic_prior(1.5, 2);
  Tensor z({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tape outer;
  Tensor watched({1}, {5.0});
  outer.watch(watched);
  const std::size_t before = outer.record_count();

  Tensor g = grad_log_density_z(prior, z);
  CHECK(outer.record_count() == before);
  CHECK(g.has_grad() == false);
  CHECK(z.at(0, 0) == 1.0);
  CHECK(z.at(1, 1) == 4.0);
}

TEST_CASE("partition estimate: zero energy gives exactly zero") {
  RngStream rng(61);
  EbmPrior prior = net_prior(2, rng, /*zero_readout=*/true);
  RngStream draw(7);
  CHECK(estimate_log_partition(prior, 1, draw) == 0.0);
  prior.partition_cached = false;
  CHECK(estimate_log_partition(prior, 5000, draw) == 0.0);
}

TEST_CASE("partition estimate matches the closed form for quadratic tilts") {
  // Z = (1+a)^{-d/2} for f = -0.5 a |z|^2 under a standard Gaussian
  EbmPrior p1 = quadratic_prior(3.0, 1);
  RngStream r1(101);
  const double est1 = estimate_log_partition(p1, 1000000, r1);
  CHECK(std::abs(est1 - (-0.6931471805599453)) < 0.02);

  EbmPrior p2 = quadratic_prior(3.0, 2);
  RngStream r2(102);
  const double est2 = estimate_log_partition(p2, 1000000, r2);
  CHECK(std::abs(est2 - 2.0 * (-0.6931471805599453)) < 0.03);
}

TEST_CASE("partition cache keys on sample count and energy version") {
  EbmPrior prior = quadratic_prior(2.0, 1);
  RngStream r1(111), r2(999);
  const double first = estimate_log_partition(prior, 20000, r1);
  // same n, different rng: cache hit, identical value
  CHECK(estimate_log_partition(prior, 20000, r2) == first);
  // different n: recompute
  const double more = estimate_log_partition(prior, 40000, r2);
  CHECK(more != first);

  auto& quad = static_cast<QuadraticEnergy&>(*prior.energy);
  quad.coeff().data()[0] = 4.0;
  quad.notify_params_changed();
  RngStream r3(111);
  const double changed = estimate_log_partition(prior, 20000, r3);
  CHECK(changed != first);
  // closed form moved from -0.5 log 3 to -0.5 log 5
  CHECK(std::abs(changed - (-0.5 * std::log(5.0))) < 0.05);
}

TEST_CASE("tilted density integrates to one after normalization") {
  // trapezoid over [-8, 8], step 1e-3, d = 1
  const int n = 16001;
  const double step = 1e-3;
  for (double a : {0.0, 2.5, 5.0}) {
    EbmPrior prior = quadratic_prior(a, 1);
    RngStream rng(7000 + static_cast<int>(a * 10));
    const double log_z = estimate_log_partition(prior, 1000000, rng);

    Tensor grid(std::vector<int>{n, 1});
    for (int i = 0; i < n; ++i) grid.data()[i] = -8.0 + i * step;
    Tape tape;
    Tensor ld = log_unnormalized_density_rows(tape, prior, grid);
    double integral = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      integral += w * std::exp(ld.at(i) - log_z);
    }
    integral *= step;
    CAPTURE(a);
    CHECK(integral > 0.99);
    CHECK(integral < 1.01);
  }
}
