#include "ttm/mstep.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ttm/errors.hpp"
#include "ttm/special.hpp"

namespace ttm {

SufficientStats accumulate_stats(const std::vector<TaskStatsEntry>& tasks) {
  if (tasks.empty()) {
    throw std::invalid_argument("accumulate_stats: empty batch");
  }
  const Eigen::Index K = tasks.front().second.gamma.size();
  const Eigen::Index D = tasks.front().first.empty()
                             ? 0
                             : tasks.front().first.front().m.size();
  SufficientStats stats;
  stats.n_k = Eigen::ArrayXd::Zero(K);
  stats.weighted_mean_sum = Eigen::MatrixXd::Zero(K, D);
  stats.weighted_scatter.assign(static_cast<size_t>(K), Eigen::MatrixXd::Zero(D, D));
  stats.task_count = static_cast<int>(tasks.size());

  // Pass 1: responsibility masses and weighted mean sums.
  for (const auto& [posts, tp] : tasks) {
    if (tp.gamma.size() != K ||
        tp.responsibilities.rows() != static_cast<Eigen::Index>(posts.size())) {
      throw std::invalid_argument("accumulate_stats: inconsistent task dimensions");
    }
    stats.gamma_list.push_back(tp.gamma);
    for (size_t n = 0; n < posts.size(); ++n) {
      if (posts[n].m.size() != D) {
        throw std::invalid_argument("accumulate_stats: inconsistent embedding dimension");
      }
      for (Eigen::Index k = 0; k < K; ++k) {
        const double r = tp.responsibilities(static_cast<Eigen::Index>(n), k);
        stats.n_k[k] += r;
        stats.weighted_mean_sum.row(k) += r * posts[n].m.transpose();
      }
    }
  }

  // Pass 2: scatter around the batch-local weighted means.
  Eigen::MatrixXd local_mean = Eigen::MatrixXd::Zero(K, D);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (stats.n_k[k] > kSupportThreshold) {
      local_mean.row(k) = stats.weighted_mean_sum.row(k) / stats.n_k[k];
    }
  }
  for (const auto& [posts, tp] : tasks) {
    for (size_t n = 0; n < posts.size(); ++n) {
      const Eigen::VectorXd s2 = posts[n].s.array().square();
      for (Eigen::Index k = 0; k < K; ++k) {
        const double r = tp.responsibilities(static_cast<Eigen::Index>(n), k);
        if (r == 0.0) continue;
        const Eigen::VectorXd centered = posts[n].m - local_mean.row(k).transpose();
        Eigen::MatrixXd& scatter = stats.weighted_scatter[static_cast<size_t>(k)];
        scatter += r * (centered * centered.transpose());
        scatter.diagonal() += r * s2;
      }
    }
  }
  return stats;
}

std::vector<ThemeCandidate> local_theme_mle(const SufficientStats& stats) {
  const Eigen::Index K = stats.n_k.size();
  std::vector<ThemeCandidate> candidates(static_cast<size_t>(K));
  bool any_supported = false;
  for (Eigen::Index k = 0; k < K; ++k) {
    auto& candidate = candidates[static_cast<size_t>(k)];
    if (stats.n_k[k] < kSupportThreshold) {
      continue;
    }
    candidate.supported = true;
    any_supported = true;
    candidate.mean = stats.weighted_mean_sum.row(k).transpose() / stats.n_k[k];
    candidate.covariance = stats.weighted_scatter[static_cast<size_t>(k)] / stats.n_k[k];
    apply_covariance_floor(candidate.covariance);
  }
  if (!any_supported) {
    throw DegeneracyError("local_theme_mle: no theme carries responsibility mass");
  }
  return candidates;
}

AlphaNewton alpha_newton_step(const DirichletParams& alpha, const SufficientStats& stats) {
  if (stats.gamma_list.empty()) {
    throw std::invalid_argument("alpha_newton_step: empty gamma list");
  }
  const Eigen::Index K = alpha.size();
  const double T = static_cast<double>(stats.task_count);
  const double alpha_total = alpha.sum();
  const double psi_alpha_total = digamma(alpha_total);

  AlphaNewton out;
  out.gradient = Eigen::ArrayXd::Zero(K);
  out.q_diag = Eigen::ArrayXd(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    out.gradient[k] = T * (psi_alpha_total - digamma(alpha[k]));
    out.q_diag[k] = -T * trigamma(alpha[k]);
  }
  for (const auto& gamma : stats.gamma_list) {
    if (gamma.size() != K) {
      throw std::invalid_argument("alpha_newton_step: gamma dimension mismatch");
    }
    const double psi_gamma_total = digamma(gamma.sum());
    for (Eigen::Index k = 0; k < K; ++k) {
      out.gradient[k] += digamma(gamma[k]) - psi_gamma_total;
    }
  }
  out.a = T * trigamma(alpha_total);
  out.b = (out.gradient / out.q_diag).sum() / (1.0 / out.a + (1.0 / out.q_diag).sum());
  out.step = (out.gradient - out.b) / out.q_diag;
  return out;
}

double learning_rate(long i, double tau0, double tau1) {
  if (i < 0 || !(tau0 >= 0.0) || !(tau1 > 0.5 && tau1 <= 1.0)) {
    throw ConfigError("learning_rate: need i >= 0, tau0 >= 0, tau1 in (0.5, 1]");
  }
  const double base = tau0 + static_cast<double>(i);
  if (!(base > 0.0)) {
    throw ConfigError("learning_rate: tau0 + i must be > 0");
  }
  return std::pow(base, -tau1);
}

ThemeSet online_blend(const ThemeSet& model, const LocalUpdate& locals, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("online_blend: rho must be in (0, 1]");
  }
  const Eigen::Index K = model.size();
  if (static_cast<Eigen::Index>(locals.themes.size()) != K ||
      locals.alpha_step.size() != K) {
    throw std::invalid_argument("online_blend: local update dimension mismatch");
  }

  std::vector<TaskTheme> blended;
  blended.reserve(static_cast<size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto& candidate = locals.themes[static_cast<size_t>(k)];
    const auto& previous = model.theme(k);
    if (!candidate.supported) {
      blended.push_back(previous);
      continue;
    }
    Eigen::VectorXd mean = (1.0 - rho) * previous.mean() + rho * candidate.mean;
    Eigen::MatrixXd cov = (1.0 - rho) * previous.covariance() + rho * candidate.covariance;
    blended.push_back(TaskTheme::repaired(std::move(mean), std::move(cov)));
  }

  Eigen::ArrayXd alpha = model.alpha().array() - rho * locals.alpha_step;
  if ((alpha <= 0.0).any()) {
    // Damped Newton: halve the step once before clamping.
    alpha = model.alpha().array() - 0.5 * rho * locals.alpha_step;
  }
  alpha = alpha.max(kMinAlpha);
  return ThemeSet(std::move(blended), DirichletParams(alpha));
}

}  // namespace ttm
