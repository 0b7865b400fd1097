#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "ttm/errors.hpp"
#include "ttm/estep.hpp"

using namespace ttm;

namespace {

ThemeSet two_themes_1d(double mu0, double mu1, double alpha = 1.1) {
  std::vector<TaskTheme> themes;
  themes.emplace_back(Eigen::VectorXd::Constant(1, mu0), Eigen::MatrixXd::Identity(1, 1));
  themes.emplace_back(Eigen::VectorXd::Constant(1, mu1), Eigen::MatrixXd::Identity(1, 1));
  return ThemeSet(std::move(themes), DirichletParams(Eigen::ArrayXd::Constant(2, alpha)));
}

std::vector<EmbeddingPosterior> points_1d(std::initializer_list<double> ms, double s = 0.5) {
  std::vector<EmbeddingPosterior> posts;
  for (double m : ms) {
    posts.emplace_back(Eigen::VectorXd::Constant(1, m), Eigen::VectorXd::Constant(1, s));
  }
  return posts;
}

// Random instance shared by the property tests.
struct Instance {
  ThemeSet model;
  std::vector<EmbeddingPosterior> posts;
};

Instance random_instance(std::mt19937_64& rng, Eigen::Index K, Eigen::Index D,
                         Eigen::Index N) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.2, 1.5);
  std::vector<TaskTheme> themes;
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::VectorXd mean(D);
    for (Eigen::Index d = 0; d < D; ++d) mean[d] = 3.0 * normal(rng);
    themes.emplace_back(mean, oracles::random_spd(D, rng));
  }
  Eigen::ArrayXd alpha(K);
  for (Eigen::Index k = 0; k < K; ++k) alpha[k] = unif(rng) * 2.0;
  Instance instance{ThemeSet(std::move(themes), DirichletParams(alpha)), {}};
  for (Eigen::Index n = 0; n < N; ++n) {
    Eigen::VectorXd m(D), s(D);
    for (Eigen::Index d = 0; d < D; ++d) {
      m[d] = 3.0 * normal(rng);
      s[d] = unif(rng);
    }
    instance.posts.emplace_back(m, s);
  }
  return instance;
}

}  // namespace

TEST_CASE("compute_responsibilities basics") {
  // K = 1: every row is (1).
  Eigen::MatrixXd logliks(3, 1);
  logliks << -1.0, -5.0, -0.2;
  Eigen::ArrayXd log_pi(1);
  log_pi << 0.0;
  const Eigen::MatrixXd r = compute_responsibilities(logliks, log_pi);
  for (int n = 0; n < 3; ++n) CHECK(r(n, 0) == 1.0);

  // Identical columns give exactly one half each.
  Eigen::MatrixXd equal(2, 2);
  equal << -3.0, -3.0, 0.7, 0.7;
  Eigen::ArrayXd log_pi2(2);
  log_pi2 << -0.4, -0.4;
  const Eigen::MatrixXd r2 = compute_responsibilities(equal, log_pi2);
  CHECK(r2(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r2(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("compute_responsibilities is shift invariant") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd logliks(4, 3);
  for (int n = 0; n < 4; ++n) {
    for (int k = 0; k < 3; ++k) logliks(n, k) = normal(rng);
  }
  Eigen::ArrayXd log_pi(3);
  log_pi << -0.1, -1.2, -0.6;
  const Eigen::MatrixXd base = compute_responsibilities(logliks, log_pi);
  Eigen::MatrixXd shifted = logliks;
  shifted.row(2).array() += 1000.0;
  const Eigen::MatrixXd moved = compute_responsibilities(shifted, log_pi);
  CHECK((base.row(2) - moved.row(2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("compute_responsibilities matches the naive oracle") {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd logliks(5, 4);
    for (int n = 0; n < 5; ++n) {
      for (int k = 0; k < 4; ++k) logliks(n, k) = 3.0 * normal(rng);
    }
    Eigen::ArrayXd log_pi(4);
    for (int k = 0; k < 4; ++k) log_pi[k] = -std::abs(normal(rng));
    const Eigen::MatrixXd ours = compute_responsibilities(logliks, log_pi);
    const Eigen::MatrixXd naive = oracles::naive_responsibilities(logliks, log_pi);
    CHECK((ours - naive).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("compute_responsibilities degeneracy error") {
  Eigen::MatrixXd logliks(1, 2);
  logliks << -std::numeric_limits<double>::infinity(),
      -std::numeric_limits<double>::infinity();
  Eigen::ArrayXd log_pi(2);
  log_pi << 0.0, 0.0;
  CHECK_THROWS_AS(compute_responsibilities(logliks, log_pi), DegeneracyError);
}

TEST_CASE("update_gamma arithmetic") {
  const DirichletParams alpha(Eigen::ArrayXd::Constant(4, 1.1));
  Eigen::MatrixXd all_on_first = Eigen::MatrixXd::Zero(4, 4);
  all_on_first.col(0).setOnes();
  const DirichletParams g = update_gamma(alpha, all_on_first);
  CHECK(g[0] == doctest::Approx(5.1).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(1.1).epsilon(1e-15));

  const DirichletParams empty = update_gamma(alpha, Eigen::MatrixXd::Zero(0, 4));
  CHECK(empty[2] == 1.1);

  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(8, 4, 0.25);
  const DirichletParams u = update_gamma(alpha, uniform);
  for (int k = 0; k < 4; ++k) CHECK(u[k] == doctest::Approx(1.1 + 2.0).epsilon(1e-12));
}

TEST_CASE("update_gamma preserves total mass") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd r(6, 3);
  for (int n = 0; n < 6; ++n) {
    double norm = 0.0;
    for (int k = 0; k < 3; ++k) {
      r(n, k) = unif(rng);
      norm += r(n, k);
    }
    r.row(n) /= norm;
  }
  const DirichletParams alpha(Eigen::ArrayXd::Constant(3, 0.7));
  const DirichletParams g = update_gamma(alpha, r);
  CHECK(g.sum() == doctest::Approx(alpha.sum() + 6.0).epsilon(1e-9));
}

TEST_CASE("run_estep with a single theme converges immediately") {
  std::vector<TaskTheme> themes;
  themes.emplace_back(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
  const ThemeSet model(std::move(themes), DirichletParams(Eigen::ArrayXd::Constant(1, 0.9)));
  const EstepResult result = run_estep(points_1d({0.1, -0.4, 0.8}), model, 1e-3, 100);
  CHECK(result.iterations == 1);
  CHECK(result.posterior.gamma[0] == doctest::Approx(0.9 + 3.0).epsilon(1e-12));
  CHECK(result.posterior.responsibilities.minCoeff() == 1.0);
}

TEST_CASE("run_estep assigns points to the near theme") {
  const ThemeSet model = two_themes_1d(-10.0, 10.0);
  const EstepResult result = run_estep(points_1d({10.0, 9.5, 10.5, 9.9}), model, 1e-3, 100);
  for (Eigen::Index n = 0; n < 4; ++n) {
    CHECK(result.posterior.responsibilities(n, 1) > 0.999);
  }
  CHECK(result.posterior.gamma[1] > result.posterior.gamma[0]);
}

TEST_CASE("run_estep fixed point and determinism") {
  std::mt19937_64 rng(37);
  const Instance instance = random_instance(rng, 3, 2, 8);
  const EstepResult first = run_estep(instance.posts, instance.model, 1e-6, 200);
  // Re-running from the converged state moves gamma by less than threshold.
  const Eigen::ArrayXd pi = expected_log_pi(first.posterior.gamma);
  const Eigen::MatrixXd logliks = expected_loglik_matrix(instance.posts, instance.model);
  const Eigen::MatrixXd r = compute_responsibilities(logliks, pi);
  const DirichletParams gamma_next = update_gamma(instance.model.alpha(), r);
  CHECK((gamma_next.array() - first.posterior.gamma.array()).abs().mean() < 1e-6);

  const EstepResult second = run_estep(instance.posts, instance.model, 1e-6, 200);
  CHECK(first.iterations == second.iterations);
  for (Eigen::Index k = 0; k < 3; ++k) {
    CHECK(first.posterior.gamma[k] == second.posterior.gamma[k]);  // bitwise
  }
}

TEST_CASE("run_estep is permutation equivariant") {
  std::mt19937_64 rng(41);
  const Instance instance = random_instance(rng, 3, 2, 6);
  const EstepResult base = run_estep(instance.posts, instance.model, 1e-5, 100);

  const std::vector<int> perm = {2, 0, 1};
  std::vector<TaskTheme> permuted_themes;
  Eigen::ArrayXd permuted_alpha(3);
  for (int k = 0; k < 3; ++k) {
    permuted_themes.push_back(instance.model.theme(perm[k]));
    permuted_alpha[k] = instance.model.alpha()[perm[k]];
  }
  const ThemeSet permuted(std::move(permuted_themes), DirichletParams(permuted_alpha));
  const EstepResult moved = run_estep(instance.posts, permuted, 1e-5, 100);
  for (int k = 0; k < 3; ++k) {
    CHECK(moved.posterior.gamma[k] ==
          doctest::Approx(base.posterior.gamma[perm[k]]).epsilon(1e-12));
    CHECK((moved.posterior.responsibilities.col(k) -
           base.posterior.responsibilities.col(perm[k]))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("lda_elbo conventions") {
  const ThemeSet model = two_themes_1d(-1.0, 1.0, 0.8);
  auto posts = points_1d({0.3, -0.2});

  // A (1, 0) row contributes zero to the q(z) entropy term.
  Eigen::MatrixXd r(2, 2);
  r << 1.0, 0.0, 0.5, 0.5;
  const TaskPosterior tp(DirichletParams((Eigen::ArrayXd(2) << 1.8, 1.3).finished()), r);
  const ElboBreakdown elbo = lda_elbo(posts, model, tp);
  const double expected_entropy = -(0.5 * std::log(0.5) + 0.5 * std::log(0.5));
  CHECK(elbo.entropy_qz == doctest::Approx(expected_entropy).epsilon(1e-12));

  // gamma = alpha collapses the prior and q(pi) terms.
  const TaskPosterior flat(DirichletParams(model.alpha().array()),
                           Eigen::MatrixXd::Constant(2, 2, 0.5));
  const ElboBreakdown zero_kl = lda_elbo(posts, model, flat);
  CHECK(std::abs(zero_kl.expected_log_pprior + zero_kl.entropy_qpi) < 1e-12);

  CHECK(elbo.total == doctest::Approx(elbo.expected_loglik + elbo.expected_log_pz +
                                      elbo.expected_log_pprior + elbo.entropy_qz +
                                      elbo.entropy_qpi)
                          .epsilon(1e-9));
}

TEST_CASE("lda_elbo matches a Monte-Carlo estimate") {
  std::mt19937_64 rng(43);
  const Instance instance = random_instance(rng, 2, 2, 3);
  const EstepResult converged = run_estep(instance.posts, instance.model, 1e-6, 200);
  const ElboBreakdown analytic = lda_elbo(instance.posts, instance.model, converged.posterior);
  const Eigen::MatrixXd logliks = expected_loglik_matrix(instance.posts, instance.model);

  const auto& r = converged.posterior.responsibilities;
  const Eigen::ArrayXd gamma = converged.posterior.gamma.array();
  const Eigen::ArrayXd alpha = instance.model.alpha().array();

  std::vector<std::gamma_distribution<double>> gammas;
  for (Eigen::Index k = 0; k < 2; ++k) gammas.emplace_back(gamma[k], 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const int samples = 1000000;
  double total = 0.0;
  double total_sq = 0.0;
  for (int i = 0; i < samples; ++i) {
    Eigen::VectorXd pi(2);
    double norm = 0.0;
    for (int k = 0; k < 2; ++k) {
      pi[k] = gammas[static_cast<size_t>(k)](rng);
      norm += pi[k];
    }
    pi /= norm;
    double value = oracles::dirichlet_log_pdf(pi, alpha) - oracles::dirichlet_log_pdf(pi, gamma);
    for (Eigen::Index n = 0; n < 3; ++n) {
      const double draw = unif(rng);
      const Eigen::Index z = draw < r(n, 0) ? 0 : 1;
      value += logliks(n, z) + std::log(pi[z]) - std::log(r(n, z));
    }
    total += value;
    total_sq += value * value;
  }
  const double mean = total / samples;
  const double variance = total_sq / samples - mean * mean;
  const double stderr_mc = std::sqrt(variance / samples);
  CHECK(std::abs(mean - analytic.total) < 3.0 * stderr_mc);
}

TEST_CASE("elbo is non-decreasing across E-step iterations") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance instance = random_instance(rng, 3, 2, 7);
    EstepOptions options;
    options.threshold = 1e-8;
    options.max_iters = 60;
    options.record_elbo = true;
    const EstepResult result = run_estep(instance.posts, instance.model, options);
    for (size_t i = 1; i < result.elbo_trace.size(); ++i) {
      CHECK(result.elbo_trace[i] >= result.elbo_trace[i - 1] - 1e-8);
    }
  }
}

TEST_CASE("TaskPosterior validates rows") {
  Eigen::MatrixXd bad(1, 2);
  bad << 0.7, 0.5;
  CHECK_THROWS_AS(TaskPosterior(DirichletParams(Eigen::ArrayXd::Ones(2)), bad),
                  std::invalid_argument);
  Eigen::MatrixXd negative(1, 2);
  negative << 1.2, -0.2;
  CHECK_THROWS_AS(TaskPosterior(DirichletParams(Eigen::ArrayXd::Ones(2)), negative),
                  std::invalid_argument);
}
