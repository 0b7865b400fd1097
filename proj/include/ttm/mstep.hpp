#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "ttm/dirichlet.hpp"
#include "ttm/estep.hpp"
#include "ttm/themes.hpp"

namespace ttm {

/// Mini-batch accumulators for the local M-step. The scatter matrices are
/// taken around the batch-local weighted means (two passes), so dividing by
/// n_k reproduces the local covariance formula directly.
struct SufficientStats {
  Eigen::ArrayXd n_k;                             // K responsibility masses
  Eigen::MatrixXd weighted_mean_sum;              // K x D
  std::vector<Eigen::MatrixXd> weighted_scatter;  // K matrices, D x D
  std::vector<DirichletParams> gamma_list;        // one gamma per task
  int task_count = 0;
};

using TaskStatsEntry = std::pair<std::vector<EmbeddingPosterior>, TaskPosterior>;

SufficientStats accumulate_stats(const std::vector<TaskStatsEntry>& tasks);

/// Local maximum-likelihood theme candidate. Themes whose responsibility
/// mass is below 1e-8 are unsupported and carry no values.
struct ThemeCandidate {
  bool supported = false;
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// mu_k = weighted_mean_sum_k / n_k, Sigma_k = weighted_scatter_k / n_k
/// (floored per the theme covariance policy). Throws DegeneracyError when
/// every theme is unsupported.
std::vector<ThemeCandidate> local_theme_mle(const SufficientStats& stats);

/// One structured Newton step for the Dirichlet prior: H = Q + 1 1^T a with
/// Q diagonal, inverted in closed form.
struct AlphaNewton {
  Eigen::ArrayXd gradient;  // g
  Eigen::ArrayXd q_diag;    // q_kk = -T psi'(alpha_k)
  double a = 0.0;           // T psi'(sum alpha)
  double b = 0.0;
  Eigen::ArrayXd step;      // (H^-1 g)_k = (g_k - b) / q_kk
};

AlphaNewton alpha_newton_step(const DirichletParams& alpha, const SufficientStats& stats);

/// rho_i = (tau0 + i)^(-tau1). Requires tau0 >= 0, tau1 in (0.5, 1],
/// i >= 0 and tau0 + i > 0; throws ConfigError otherwise.
double learning_rate(long i, double tau0, double tau1);

struct LocalUpdate {
  std::vector<ThemeCandidate> themes;
  Eigen::ArrayXd alpha_step;  // chosen Newton direction H^-1 g
};

/// Convex blend of the global themes toward the local candidates plus the
/// damped Newton update of alpha (clamped to >= 1e-3 componentwise).
/// Unsupported themes keep their previous values.
ThemeSet online_blend(const ThemeSet& model, const LocalUpdate& locals, double rho);

/// Smallest admissible alpha component after an update.
inline constexpr double kMinAlpha = 1e-3;

/// Responsibility mass below which a theme is unsupported in a batch.
inline constexpr double kSupportThreshold = 1e-8;

}  // namespace ttm
