#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "ttm/dirichlet.hpp"

using ttm::dirichlet_entropy;
using ttm::dirichlet_kl;
using ttm::DirichletParams;
using ttm::expected_log_pi;
using ttm::mean_kl_to_set;

namespace {

DirichletParams params(std::initializer_list<double> values) {
  Eigen::ArrayXd a(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) a[i++] = v;
  return DirichletParams(a);
}

constexpr double kLn2 = 0.69314718055994530942;

}  // namespace

TEST_CASE("construction rejects invalid concentrations") {
  CHECK_THROWS_AS(params({1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(params({1.0, -2.0}), std::invalid_argument);
  CHECK_THROWS_AS(params({1.0, std::nan("")}), std::invalid_argument);
  CHECK_NOTHROW(params({2.0}));  // K = 1 stays representable
  CHECK_THROWS_AS(dirichlet_entropy(params({2.0})), std::invalid_argument);
  CHECK_THROWS_AS(dirichlet_kl(params({2.0}), params({2.0})), std::invalid_argument);
}

TEST_CASE("expected_log_pi closed forms") {
  const Eigen::ArrayXd a = expected_log_pi(params({1.0, 1.0}));
  CHECK(a[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(a[1] == doctest::Approx(-1.0).epsilon(1e-12));
  const Eigen::ArrayXd b = expected_log_pi(params({2.0, 2.0}));
  CHECK(b[0] == doctest::Approx(-5.0 / 6.0).epsilon(1e-12));
  const Eigen::ArrayXd c = expected_log_pi(params({3.0, 1.0}));
  CHECK(c[0] == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(-11.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("expected_log_pi components are negative and obey the Jensen gap") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> log_range(std::log(0.05), std::log(50.0));
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::ArrayXd gamma(4);
    for (int k = 0; k < 4; ++k) gamma[k] = std::exp(log_range(rng));
    const Eigen::ArrayXd log_pi = expected_log_pi(DirichletParams(gamma));
    CHECK((log_pi < 0.0).all());
    CHECK(log_pi.exp().sum() < 1.0);
  }
}

TEST_CASE("dirichlet_entropy closed forms") {
  CHECK(std::abs(dirichlet_entropy(params({1.0, 1.0}))) < 1e-12);
  CHECK(dirichlet_entropy(params({1.0, 1.0, 1.0})) == doctest::Approx(-kLn2).epsilon(1e-12));
  CHECK(dirichlet_entropy(params({2.0, 1.0})) ==
        doctest::Approx(-kLn2 + 0.5).epsilon(1e-12));
}

TEST_CASE("dirichlet_entropy matches a Monte-Carlo estimate of -E ln p") {
  std::mt19937_64 rng(11);
  const Eigen::ArrayXd gamma = (Eigen::ArrayXd(2) << 2.0, 1.0).finished();
  std::gamma_distribution<double> g2(2.0, 1.0);
  std::gamma_distribution<double> g1(1.0, 1.0);
  double total = 0.0;
  const int samples = 1000000;
  for (int i = 0; i < samples; ++i) {
    const double a = g2(rng);
    const double b = g1(rng);
    Eigen::VectorXd pi(2);
    pi << a / (a + b), b / (a + b);
    total -= oracles::dirichlet_log_pdf(pi, gamma);
  }
  CHECK(total / samples ==
        doctest::Approx(dirichlet_entropy(params({2.0, 1.0}))).epsilon(1e-2));
}

TEST_CASE("dirichlet_kl closed forms and quadrature oracle") {
  CHECK(std::abs(dirichlet_kl(params({3.0, 5.0}), params({3.0, 5.0}))) < 1e-12);
  CHECK(dirichlet_kl(params({2.0, 1.0}), params({1.0, 1.0})) ==
        doctest::Approx(kLn2 - 0.5).epsilon(1e-12));
  CHECK(dirichlet_kl(params({1.0, 1.0}), params({2.0, 1.0})) ==
        doctest::Approx(1.0 - kLn2).epsilon(1e-12));

  // One-dimensional marginals: Dir(2,1) has density 2x on [0,1], Dir(1,1)
  // is uniform. Integrate p ln(p/q) numerically.
  const double kl_pq = oracles::simpson(
      [](double x) { return x < 1e-12 ? 0.0 : 2.0 * x * std::log(2.0 * x); }, 0.0, 1.0, 4096);
  CHECK(kl_pq == doctest::Approx(dirichlet_kl(params({2.0, 1.0}), params({1.0, 1.0})))
                     .epsilon(1e-8));
  // Substituting x = t^2 removes the logarithmic endpoint singularity.
  const double kl_qp = oracles::simpson(
      [](double t) { return t < 1e-15 ? 0.0 : -2.0 * t * std::log(2.0 * t * t); }, 0.0, 1.0,
      16384);
  CHECK(kl_qp == doctest::Approx(dirichlet_kl(params({1.0, 1.0}), params({2.0, 1.0})))
                     .epsilon(1e-6));
}

TEST_CASE("dirichlet_kl asymmetry witness") {
  const double forward = dirichlet_kl(params({2.0, 1.0}), params({1.0, 1.0}));
  const double backward = dirichlet_kl(params({1.0, 1.0}), params({2.0, 1.0}));
  CHECK(std::abs(forward - backward) > 0.05);
}

TEST_CASE("dirichlet_kl nonnegative on random pairs, zero iff equal") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> log_range(std::log(0.05), std::log(50.0));
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::ArrayXd p(3), q(3);
    for (int k = 0; k < 3; ++k) {
      p[k] = std::exp(log_range(rng));
      q[k] = std::exp(log_range(rng));
    }
    const double kl = dirichlet_kl(DirichletParams(p), DirichletParams(q));
    CHECK(kl >= -1e-12);
    CHECK(kl > 1e-10);  // distinct with probability one under this sampler
    CHECK(std::abs(dirichlet_kl(DirichletParams(p), DirichletParams(p))) <= 1e-10);
  }
}

TEST_CASE("dirichlet_kl dimension mismatch is a usage error") {
  CHECK_THROWS_AS(dirichlet_kl(params({1.0, 1.0}), params({1.0, 1.0, 1.0})),
                  std::invalid_argument);
}

TEST_CASE("entropy decreases when symmetric gamma is scaled up") {
  for (double base : {1.0, 1.5, 3.0}) {
    double previous = dirichlet_entropy(params({base, base, base}));
    for (double c : {1.5, 2.0, 4.0, 10.0}) {
      const double scaled = dirichlet_entropy(params({c * base, c * base, c * base}));
      CHECK(scaled < previous);
      previous = scaled;
    }
  }
}

TEST_CASE("mean_kl_to_set") {
  const DirichletParams novel = params({2.0, 1.0});
  CHECK(std::abs(mean_kl_to_set(novel, {novel})) < 1e-12);
  CHECK(std::abs(mean_kl_to_set(novel, {novel, novel, novel})) < 1e-12);
  const std::vector<DirichletParams> training = {params({1.0, 1.0}), params({2.0, 1.0})};
  CHECK(mean_kl_to_set(novel, training) ==
        doctest::Approx(0.5 * (kLn2 - 0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(mean_kl_to_set(novel, {}), std::invalid_argument);
}
