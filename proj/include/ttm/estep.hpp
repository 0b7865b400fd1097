#pragma once

#include <Eigen/Core>
#include <vector>

#include "ttm/dirichlet.hpp"
#include "ttm/themes.hpp"

namespace ttm {

/// Per-task variational state: Dirichlet parameters gamma and the N x K
/// responsibility matrix, each row on the probability simplex.
struct TaskPosterior {
  TaskPosterior(DirichletParams gamma_in, Eigen::MatrixXd responsibilities_in);

  DirichletParams gamma;
  Eigen::MatrixXd responsibilities;
};

/// The five expectations of the LDA bound, stored so that
/// total = expected_loglik + expected_log_pz + expected_log_pprior
///         + entropy_qz + entropy_qpi
/// where entropy_qz = -E ln q(z) and entropy_qpi = -E ln q(pi).
struct ElboBreakdown {
  double expected_loglik = 0.0;
  double expected_log_pz = 0.0;
  double expected_log_pprior = 0.0;
  double entropy_qz = 0.0;
  double entropy_qpi = 0.0;
  double total = 0.0;
};

/// Row-normalized responsibilities proportional to
/// exp(expected_logliks(n,k) + log_pi_tilde(k)), stabilized by per-row max
/// subtraction. Probabilities below 1e-300 are flushed to zero and the row
/// renormalized. Throws DegeneracyError when a row has no usable entry.
Eigen::MatrixXd compute_responsibilities(const Eigen::MatrixXd& expected_logliks,
                                         const Eigen::ArrayXd& log_pi_tilde);

/// gamma_k = alpha_k + sum_n r(n,k).
DirichletParams update_gamma(const DirichletParams& alpha,
                             const Eigen::MatrixXd& responsibilities);

/// N x K matrix of expected_gaussian_loglik(posts[n], theme_k).
Eigen::MatrixXd expected_loglik_matrix(const std::vector<EmbeddingPosterior>& posts,
                                       const ThemeSet& model);

struct EstepOptions {
  double threshold = 1e-3;
  int max_iters = 100;
  bool record_elbo = false;  // fill EstepResult::elbo_trace per iteration
};

struct EstepResult {
  TaskPosterior posterior;
  int iterations = 0;
  std::vector<double> elbo_trace;
};

/// Coordinate ascent over (r, gamma) starting from gamma = alpha + N/K,
/// stopping when the mean absolute change in gamma drops below the
/// threshold or at max_iters.
EstepResult run_estep(const std::vector<EmbeddingPosterior>& posts, const ThemeSet& model,
                      const EstepOptions& options = {});
EstepResult run_estep(const std::vector<EmbeddingPosterior>& posts, const ThemeSet& model,
                      double threshold, int max_iters);

/// Full bound of the task under the given posterior, term by term.
ElboBreakdown lda_elbo(const std::vector<EmbeddingPosterior>& posts, const ThemeSet& model,
                       const TaskPosterior& tp);

/// Same, with the expected log-likelihood matrix precomputed.
ElboBreakdown lda_elbo(const Eigen::MatrixXd& expected_logliks, const ThemeSet& model,
                       const TaskPosterior& tp);

}  // namespace ttm
