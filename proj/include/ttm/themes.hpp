#pragma once

#include <Eigen/Core>
#include <vector>

#include "ttm/dirichlet.hpp"

namespace ttm {

/// One shared Gaussian task-theme: mean, SPD covariance and its cached
/// Cholesky factor. Immutable after construction; updates replace whole
/// themes, which keeps shared read access trivially safe.
class TaskTheme {
public:
  /// Strict construction: validates symmetry (1e-10) and factorizes the
  /// covariance exactly as given. Throws DegeneracyError if the matrix has
  /// no positive-pivot factorization. Used for checkpoint reload, where the
  /// stored covariance must survive bit for bit.
  TaskTheme(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  /// Construction from freshly assembled statistics: adds the floor
  /// eps*I with eps = 1e-6 * trace/D before factorizing, escalating eps
  /// by 10x up to 3 times on factorization failure.
  static TaskTheme regularized(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  /// Construction for blended covariances: factorizes as given and falls
  /// back to the escalating floor only if that fails, so a vanishing blend
  /// weight leaves a theme bitwise intact.
  static TaskTheme repaired(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  /// Lower-triangular L with L L^T = covariance.
  const Eigen::MatrixXd& factor() const { return factor_; }
  double log_det() const { return log_det_; }
  Eigen::Index dim() const { return mean_.size(); }

private:
  TaskTheme() = default;
  static TaskTheme build(Eigen::VectorXd mean, Eigen::MatrixXd covariance, bool floor_first);

  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd factor_;
  double log_det_ = 0.0;
};

/// Per-datapoint diagonal Gaussian posterior q(u) = N(m, diag(s^2)).
struct EmbeddingPosterior {
  EmbeddingPosterior(Eigen::VectorXd m_in, Eigen::VectorXd s_in);

  Eigen::VectorXd m;
  Eigen::VectorXd s;  // componentwise standard deviations, > 0
};

/// The global model of the theme space: K themes plus the Dirichlet prior.
class ThemeSet {
public:
  ThemeSet(std::vector<TaskTheme> themes, DirichletParams alpha);

  Eigen::Index size() const { return static_cast<Eigen::Index>(themes_.size()); }
  Eigen::Index dim() const { return themes_.front().dim(); }
  const TaskTheme& theme(Eigen::Index k) const { return themes_[static_cast<size_t>(k)]; }
  const std::vector<TaskTheme>& themes() const { return themes_; }
  const DirichletParams& alpha() const { return alpha_; }

private:
  std::vector<TaskTheme> themes_;
  DirichletParams alpha_;
};

/// Adds the standard covariance floor eps*I with eps = 1e-6 * trace/D
/// (or eps = 1e-6 when the trace vanishes).
void apply_covariance_floor(Eigen::MatrixXd& covariance);

/// ln N(x; mu_k, Sigma_k), solved through the cached factor.
double gaussian_log_density(const Eigen::VectorXd& x, const TaskTheme& theme);

/// E_q(u)[ln N(u; mu_k, Sigma_k)] for a diagonal Gaussian q:
/// -1/2 tr(Sigma_k^-1 diag(s^2)) + ln N(m; mu_k, Sigma_k).
double expected_gaussian_loglik(const EmbeddingPosterior& post, const TaskTheme& theme);

}  // namespace ttm
