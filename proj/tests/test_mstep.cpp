#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "ttm/errors.hpp"
#include "ttm/mstep.hpp"

using namespace ttm;

namespace {

EmbeddingPosterior post1d(double m, double s) {
  return EmbeddingPosterior(Eigen::VectorXd::Constant(1, m), Eigen::VectorXd::Constant(1, s));
}

TaskStatsEntry entry_1d(std::vector<double> ms, const Eigen::MatrixXd& r, double s = 1e-15,
                        double alpha = 1.1) {
  std::vector<EmbeddingPosterior> posts;
  for (double m : ms) posts.push_back(post1d(m, s));
  const DirichletParams gamma = update_gamma(
      DirichletParams(Eigen::ArrayXd::Constant(r.cols(), alpha)), r);
  return {posts, TaskPosterior(gamma, r)};
}

// Random batch with simplex-valid responsibilities.
std::vector<TaskStatsEntry> random_batch(std::mt19937_64& rng, int T, Eigen::Index K,
                                         Eigen::Index D, Eigen::Index N) {
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  std::normal_distribution<double> normal;
  std::vector<TaskStatsEntry> batch;
  for (int t = 0; t < T; ++t) {
    std::vector<EmbeddingPosterior> posts;
    Eigen::MatrixXd r(N, K);
    for (Eigen::Index n = 0; n < N; ++n) {
      Eigen::VectorXd m(D), s(D);
      for (Eigen::Index d = 0; d < D; ++d) {
        m[d] = 2.0 * normal(rng);
        s[d] = unif(rng);
      }
      posts.emplace_back(m, s);
      double norm = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        r(n, k) = unif(rng);
        norm += r(n, k);
      }
      r.row(n) /= norm;
    }
    const DirichletParams gamma =
        update_gamma(DirichletParams(Eigen::ArrayXd::Constant(K, 1.1)), r);
    batch.emplace_back(std::move(posts), TaskPosterior(gamma, r));
  }
  return batch;
}

std::vector<oracles::NaiveTask> to_naive(const std::vector<TaskStatsEntry>& batch) {
  std::vector<oracles::NaiveTask> naive;
  for (const auto& [posts, tp] : batch) {
    oracles::NaiveTask task;
    for (const auto& post : posts) {
      task.m.push_back(post.m);
      task.s.push_back(post.s);
    }
    task.r = tp.responsibilities;
    naive.push_back(std::move(task));
  }
  return naive;
}

ThemeSet model_1d(double mu0, double mu1, double alpha0 = 1.1, double alpha1 = 1.3) {
  std::vector<TaskTheme> themes;
  themes.emplace_back(Eigen::VectorXd::Constant(1, mu0), Eigen::MatrixXd::Identity(1, 1));
  themes.emplace_back(Eigen::VectorXd::Constant(1, mu1), Eigen::MatrixXd::Identity(1, 1));
  return ThemeSet(std::move(themes),
                  DirichletParams((Eigen::ArrayXd(2) << alpha0, alpha1).finished()));
}

LocalUpdate candidates_1d(double mu0, double cov0, double mu1, double cov1,
                          const Eigen::ArrayXd& step) {
  LocalUpdate locals;
  ThemeCandidate a;
  a.supported = true;
  a.mean = Eigen::VectorXd::Constant(1, mu0);
  a.covariance = Eigen::MatrixXd::Constant(1, 1, cov0);
  ThemeCandidate b;
  b.supported = true;
  b.mean = Eigen::VectorXd::Constant(1, mu1);
  b.covariance = Eigen::MatrixXd::Constant(1, 1, cov1);
  locals.themes = {a, b};
  locals.alpha_step = step;
  return locals;
}

}  // namespace

TEST_CASE("accumulate_stats on a two-point task") {
  Eigen::MatrixXd r(2, 2);
  r << 1.0, 0.0, 1.0, 0.0;
  const auto stats = accumulate_stats({entry_1d({1.0, -1.0}, r)});
  CHECK(stats.n_k[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(stats.n_k[1] == 0.0);
  CHECK(std::abs(stats.weighted_mean_sum(0, 0)) < 1e-15);
  CHECK(stats.task_count == 1);
  CHECK(stats.gamma_list.size() == 1);
}

TEST_CASE("accumulate_stats is linear under duplication") {
  std::mt19937_64 rng(3);
  auto batch = random_batch(rng, 2, 3, 2, 5);
  const auto once = accumulate_stats(batch);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const auto twice = accumulate_stats(doubled);
  CHECK((twice.n_k - 2.0 * once.n_k).abs().maxCoeff() < 1e-12);
  CHECK((twice.weighted_mean_sum - 2.0 * once.weighted_mean_sum).cwiseAbs().maxCoeff() < 1e-12);
  for (size_t k = 0; k < 3; ++k) {
    CHECK((twice.weighted_scatter[k] - 2.0 * once.weighted_scatter[k]).cwiseAbs().maxCoeff() <
          1e-12);
  }
  CHECK(twice.task_count == 2 * once.task_count);
}

TEST_CASE("accumulate_stats mass matches the point count") {
  std::mt19937_64 rng(5);
  const auto batch = random_batch(rng, 3, 4, 2, 7);
  const auto stats = accumulate_stats(batch);
  CHECK(stats.n_k.sum() == doctest::Approx(3.0 * 7.0).epsilon(1e-6));
}

TEST_CASE("accumulate_stats and local_theme_mle match the naive formulas") {
  std::mt19937_64 rng(7);
  const auto batch = random_batch(rng, 3, 3, 2, 6);
  const auto stats = accumulate_stats(batch);
  const auto naive = to_naive(batch);
  const auto candidates = local_theme_mle(stats);
  for (Eigen::Index k = 0; k < 3; ++k) {
    double naive_mass = 0.0;
    for (const auto& task : naive) naive_mass += task.r.col(k).sum();
    CHECK(stats.n_k[k] == doctest::Approx(naive_mass).epsilon(1e-10));

    const Eigen::VectorXd mu = oracles::naive_local_mean(naive, k, 2);
    CHECK((candidates[static_cast<size_t>(k)].mean - mu).cwiseAbs().maxCoeff() < 1e-10);

    Eigen::MatrixXd cov = oracles::naive_local_cov(naive, k, mu);
    apply_covariance_floor(cov);
    CHECK((candidates[static_cast<size_t>(k)].covariance - cov).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("local_theme_mle closed forms") {
  SUBCASE("two points at +-1 with negligible s") {
    Eigen::MatrixXd r(2, 2);
    r << 1.0, 0.0, 1.0, 0.0;
    const auto stats = accumulate_stats({entry_1d({1.0, -1.0}, r)});
    const auto candidates = local_theme_mle(stats);
    CHECK(candidates[0].supported);
    CHECK(std::abs(candidates[0].mean[0]) < 1e-14);
    // Variance 1 before the floor, 1 + 1e-6 after.
    CHECK(candidates[0].covariance(0, 0) == doctest::Approx(1.0 + 1e-6).epsilon(1e-9));
    CHECK_FALSE(candidates[1].supported);
  }
  SUBCASE("points with posterior scale s carry their variance") {
    Eigen::MatrixXd single(2, 2);
    single << 1.0, 0.0, 1.0, 0.0;
    const double sigma = 0.7;
    const auto stats = accumulate_stats({entry_1d({2.0, 2.0}, single, sigma)});
    const auto candidates = local_theme_mle(stats);
    CHECK(candidates[0].covariance(0, 0) ==
          doctest::Approx(sigma * sigma * (1.0 + 1e-6)).epsilon(1e-9));
  }
}

TEST_CASE("local_theme_mle with no supported theme is degenerate") {
  SufficientStats stats;
  stats.n_k = Eigen::ArrayXd::Zero(2);
  stats.weighted_mean_sum = Eigen::MatrixXd::Zero(2, 1);
  stats.weighted_scatter.assign(2, Eigen::MatrixXd::Zero(1, 1));
  stats.gamma_list.push_back(DirichletParams(Eigen::ArrayXd::Ones(2)));
  stats.task_count = 1;
  CHECK_THROWS_AS(local_theme_mle(stats), DegeneracyError);
}

TEST_CASE("alpha_newton_step stationary point and symmetry") {
  const DirichletParams alpha(Eigen::ArrayXd::Constant(3, 1.4));
  SufficientStats stats;
  stats.task_count = 4;
  for (int i = 0; i < 4; ++i) {
    stats.gamma_list.push_back(alpha);  // gradient cancels exactly
  }
  const AlphaNewton newton = alpha_newton_step(alpha, stats);
  CHECK(newton.gradient.abs().maxCoeff() < 1e-10);
  CHECK(newton.step.abs().maxCoeff() < 1e-10);

  SufficientStats symmetric;
  symmetric.task_count = 3;
  for (int i = 0; i < 3; ++i) {
    symmetric.gamma_list.push_back(DirichletParams(Eigen::ArrayXd::Constant(3, 2.5)));
  }
  const AlphaNewton sym = alpha_newton_step(alpha, symmetric);
  CHECK(std::abs(sym.step[0] - sym.step[1]) < 1e-12);
  CHECK(std::abs(sym.step[1] - sym.step[2]) < 1e-12);
}

TEST_CASE("alpha_newton_step reproduces the dense Newton direction") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.3, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index K = 2 + static_cast<Eigen::Index>(rng() % 7);
    Eigen::ArrayXd alpha(K);
    for (Eigen::Index k = 0; k < K; ++k) alpha[k] = unif(rng);
    SufficientStats stats;
    stats.task_count = 1 + static_cast<int>(rng() % 6);
    for (int t = 0; t < stats.task_count; ++t) {
      Eigen::ArrayXd gamma(K);
      for (Eigen::Index k = 0; k < K; ++k) gamma[k] = unif(rng) * 5.0;
      stats.gamma_list.push_back(DirichletParams(gamma));
    }
    const AlphaNewton newton = alpha_newton_step(DirichletParams(alpha), stats);
    const Eigen::ArrayXd dense =
        oracles::naive_alpha_direction(newton.gradient, newton.q_diag, newton.a);
    const double scale = std::max(1.0, dense.abs().maxCoeff());
    CHECK((newton.step - dense).abs().maxCoeff() / scale < 1e-8);
    // Internal consistency: step_k = (g_k - b) / q_kk.
    CHECK((newton.step - (newton.gradient - newton.b) / newton.q_diag).abs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("learning_rate schedule") {
  CHECK(learning_rate(0, 1e6, 0.5) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(learning_rate(3, 1.0, 1.0) == doctest::Approx(0.25).epsilon(1e-15));
  double previous = learning_rate(1, 2.0, 0.7);
  for (long i = 2; i < 50; ++i) {
    const double rho = learning_rate(i, 2.0, 0.7);
    CHECK(rho < previous);
    CHECK(rho > 0.0);
    CHECK(rho <= 1.0);
    previous = rho;
  }
  CHECK_THROWS_AS(learning_rate(-1, 1.0, 0.7), ConfigError);
  CHECK_THROWS_AS(learning_rate(0, -0.5, 0.7), ConfigError);
  CHECK_THROWS_AS(learning_rate(0, 1.0, 0.5), ConfigError);
  CHECK_THROWS_AS(learning_rate(0, 1.0, 1.2), ConfigError);
  CHECK_THROWS_AS(learning_rate(0, 0.0, 0.7), ConfigError);
}

TEST_CASE("online_blend endpoints") {
  const ThemeSet model = model_1d(-2.0, 2.0);
  const Eigen::ArrayXd step = (Eigen::ArrayXd(2) << 0.05, -0.02).finished();
  const LocalUpdate locals = candidates_1d(1.0, 0.5, 3.0, 2.0, step);

  SUBCASE("vanishing rho is an identity on mu and Sigma") {
    const ThemeSet out = online_blend(model, locals, 1e-300);
    for (int k = 0; k < 2; ++k) {
      CHECK(std::abs(out.theme(k).mean()[0] - model.theme(k).mean()[0]) < 1e-12);
      CHECK(std::abs(out.theme(k).covariance()(0, 0) - model.theme(k).covariance()(0, 0)) <
            1e-12);
    }
  }
  SUBCASE("rho = 1 lands on the local values and full alpha step") {
    const ThemeSet out = online_blend(model, locals, 1.0);
    CHECK(out.theme(0).mean()[0] == 1.0);
    CHECK(out.theme(0).covariance()(0, 0) == 0.5);
    CHECK(out.theme(1).mean()[0] == 3.0);
    CHECK(out.alpha()[0] == doctest::Approx(1.1 - 0.05).epsilon(1e-15));
    CHECK(out.alpha()[1] == doctest::Approx(1.3 + 0.02).epsilon(1e-15));
  }
  SUBCASE("rho = 1/2 is the midpoint") {
    const ThemeSet out = online_blend(model, locals, 0.5);
    CHECK(out.theme(0).mean()[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(out.theme(1).mean()[0] == doctest::Approx(2.5).epsilon(1e-15));
  }
  SUBCASE("rho outside (0, 1] is rejected") {
    CHECK_THROWS_AS(online_blend(model, locals, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(online_blend(model, locals, 1.5), std::invalid_argument);
  }
}

TEST_CASE("online_blend keeps unsupported themes") {
  const ThemeSet model = model_1d(-2.0, 2.0);
  LocalUpdate locals = candidates_1d(1.0, 0.5, 0.0, 0.0, Eigen::ArrayXd::Zero(2));
  locals.themes[1] = ThemeCandidate{};  // unsupported
  const ThemeSet out = online_blend(model, locals, 0.7);
  CHECK(out.theme(1).mean()[0] == 2.0);
  CHECK(out.theme(1).covariance()(0, 0) == 1.0);
  CHECK(out.theme(0).mean()[0] == doctest::Approx(0.3 * -2.0 + 0.7 * 1.0).epsilon(1e-15));
}

TEST_CASE("online_blend clamps alpha at the floor") {
  const ThemeSet model = model_1d(-1.0, 1.0, 0.5, 0.5);
  // A huge step pushes alpha negative even after halving.
  const Eigen::ArrayXd step = (Eigen::ArrayXd(2) << 100.0, 0.0).finished();
  const LocalUpdate locals = candidates_1d(0.0, 1.0, 0.0, 1.0, step);
  const ThemeSet out = online_blend(model, locals, 1.0);
  CHECK(out.alpha()[0] == kMinAlpha);
  CHECK(out.alpha()[1] == 0.5);
}

TEST_CASE("online_blend halves an overshooting step once") {
  const ThemeSet model = model_1d(-1.0, 1.0, 1.0, 1.0);
  // step = 1.5 overshoots (1 - 1.5 < 0); halving gives 1 - 0.75 = 0.25.
  const Eigen::ArrayXd step = (Eigen::ArrayXd(2) << 1.5, -0.5).finished();
  const LocalUpdate locals = candidates_1d(0.0, 1.0, 0.0, 1.0, step);
  const ThemeSet out = online_blend(model, locals, 1.0);
  CHECK(out.alpha()[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(out.alpha()[1] == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("blended covariance of SPD pairs stays factorizable") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TaskTheme> themes;
    themes.emplace_back(Eigen::VectorXd::Zero(3), oracles::random_spd(3, rng));
    themes.emplace_back(Eigen::VectorXd::Zero(3), oracles::random_spd(3, rng));
    const ThemeSet model(std::move(themes), DirichletParams(Eigen::ArrayXd::Ones(2)));
    LocalUpdate locals;
    for (int k = 0; k < 2; ++k) {
      ThemeCandidate c;
      c.supported = true;
      c.mean = Eigen::VectorXd::Zero(3);
      c.covariance = oracles::random_spd(3, rng);
      locals.themes.push_back(std::move(c));
    }
    locals.alpha_step = Eigen::ArrayXd::Zero(2);
    const ThemeSet out = online_blend(model, locals, 0.01 + 0.98 * unif(rng));
    for (int k = 0; k < 2; ++k) {
      CHECK(out.theme(k).factor().diagonal().minCoeff() > 0.0);
    }
  }
}

TEST_CASE("alpha stays above the floor under repeated updates") {
  ThemeSet model = model_1d(-1.0, 1.0, 0.01, 2.0);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 200; ++i) {
    const Eigen::ArrayXd step = (Eigen::ArrayXd(2) << normal(rng), normal(rng)).finished();
    const LocalUpdate locals = candidates_1d(0.0, 1.0, 0.0, 1.0, step);
    model = online_blend(model, locals, 0.5);
    CHECK(model.alpha()[0] >= kMinAlpha);
    CHECK(model.alpha()[1] >= kMinAlpha);
  }
}

TEST_CASE("a batch of identical tasks blends like a single copy") {
  std::mt19937_64 rng(19);
  auto single = random_batch(rng, 1, 2, 1, 6);
  std::vector<TaskStatsEntry> repeated;
  for (int i = 0; i < 5; ++i) repeated.push_back(single.front());

  const auto stats1 = accumulate_stats(single);
  const auto statsB = accumulate_stats(repeated);
  const auto mle1 = local_theme_mle(stats1);
  const auto mleB = local_theme_mle(statsB);
  for (size_t k = 0; k < 2; ++k) {
    CHECK((mle1[k].mean - mleB[k].mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((mle1[k].covariance - mleB[k].covariance).cwiseAbs().maxCoeff() < 1e-12);
  }
  const DirichletParams alpha(Eigen::ArrayXd::Constant(2, 1.1));
  const AlphaNewton n1 = alpha_newton_step(alpha, stats1);
  const AlphaNewton nB = alpha_newton_step(alpha, statsB);
  CHECK((n1.step - nB.step).abs().maxCoeff() < 1e-10);
}
