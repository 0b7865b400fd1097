#include "ttm/estep.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "ttm/errors.hpp"
#include "ttm/special.hpp"

namespace ttm {

namespace {
constexpr double kRowSumTol = 1e-10;
constexpr double kFlushThreshold = 1e-300;
}  // namespace

TaskPosterior::TaskPosterior(DirichletParams gamma_in, Eigen::MatrixXd responsibilities_in)
    : gamma(std::move(gamma_in)), responsibilities(std::move(responsibilities_in)) {
  if (responsibilities.cols() != gamma.size()) {
    throw std::invalid_argument("TaskPosterior: responsibility columns must match gamma size");
  }
  for (Eigen::Index n = 0; n < responsibilities.rows(); ++n) {
    double row_sum = 0.0;
    for (Eigen::Index k = 0; k < responsibilities.cols(); ++k) {
      const double r = responsibilities(n, k);
      if (!(r >= 0.0 && r <= 1.0)) {
        throw std::invalid_argument("TaskPosterior: responsibility out of [0,1] at row " +
                                    std::to_string(n));
      }
      row_sum += r;
    }
    if (std::abs(row_sum - 1.0) > kRowSumTol) {
      throw std::invalid_argument("TaskPosterior: row " + std::to_string(n) +
                                  " sums to " + std::to_string(row_sum));
    }
  }
}

Eigen::MatrixXd compute_responsibilities(const Eigen::MatrixXd& expected_logliks,
                                         const Eigen::ArrayXd& log_pi_tilde) {
  if (expected_logliks.cols() != log_pi_tilde.size()) {
    throw std::invalid_argument("compute_responsibilities: column/log_pi_tilde size mismatch");
  }
  const Eigen::Index n_rows = expected_logliks.rows();
  const Eigen::Index K = expected_logliks.cols();
  Eigen::MatrixXd r(n_rows, K);
  for (Eigen::Index n = 0; n < n_rows; ++n) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < K; ++k) {
      const double v = expected_logliks(n, k) + log_pi_tilde[k];
      r(n, k) = v;
      if (v > row_max) row_max = v;
    }
    if (!std::isfinite(row_max)) {
      throw DegeneracyError("compute_responsibilities: row " + std::to_string(n) +
                            " has no finite entry");
    }
    double norm = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      r(n, k) = std::exp(r(n, k) - row_max);
      norm += r(n, k);
    }
    double flushed_norm = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      double p = r(n, k) / norm;
      if (p < kFlushThreshold) p = 0.0;
      r(n, k) = p;
      flushed_norm += p;
    }
    r.row(n) /= flushed_norm;
  }
  return r;
}

DirichletParams update_gamma(const DirichletParams& alpha,
                             const Eigen::MatrixXd& responsibilities) {
  if (responsibilities.cols() != alpha.size()) {
    throw std::invalid_argument("update_gamma: responsibility columns must match alpha size");
  }
  Eigen::ArrayXd gamma = alpha.array();
  if (responsibilities.rows() > 0) {
    gamma += responsibilities.colwise().sum().transpose().array();
  }
  return DirichletParams(gamma);
}

Eigen::MatrixXd expected_loglik_matrix(const std::vector<EmbeddingPosterior>& posts,
                                       const ThemeSet& model) {
  const Eigen::Index N = static_cast<Eigen::Index>(posts.size());
  const Eigen::Index K = model.size();
  Eigen::MatrixXd logliks(N, K);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index k = 0; k < K; ++k) {
      logliks(n, k) = expected_gaussian_loglik(posts[static_cast<size_t>(n)], model.theme(k));
    }
  }
  return logliks;
}

EstepResult run_estep(const std::vector<EmbeddingPosterior>& posts, const ThemeSet& model,
                      const EstepOptions& options) {
  if (posts.empty()) {
    throw std::invalid_argument("run_estep: need at least one data point");
  }
  if (!(options.threshold > 0.0) || options.max_iters < 1) {
    throw std::invalid_argument("run_estep: threshold must be > 0 and max_iters >= 1");
  }
  const Eigen::Index K = model.size();
  const double N = static_cast<double>(posts.size());
  const Eigen::MatrixXd logliks = expected_loglik_matrix(posts, model);

  Eigen::ArrayXd gamma = model.alpha().array() + N / static_cast<double>(K);
  Eigen::MatrixXd r;
  EstepResult result{TaskPosterior(DirichletParams(gamma),
                                   Eigen::MatrixXd::Constant(posts.size(), K,
                                                             1.0 / static_cast<double>(K))),
                     0,
                     {}};
  for (int iter = 1; iter <= options.max_iters; ++iter) {
    const Eigen::ArrayXd log_pi = expected_log_pi(DirichletParams(gamma));
    r = compute_responsibilities(logliks, log_pi);
    const DirichletParams new_gamma = update_gamma(model.alpha(), r);
    const double change = (new_gamma.array() - gamma).abs().mean();
    gamma = new_gamma.array();
    result.iterations = iter;
    if (options.record_elbo) {
      result.elbo_trace.push_back(
          lda_elbo(logliks, model, TaskPosterior(DirichletParams(gamma), r)).total);
    }
    if (change < options.threshold) break;
  }
  result.posterior = TaskPosterior(DirichletParams(gamma), std::move(r));
  return result;
}

EstepResult run_estep(const std::vector<EmbeddingPosterior>& posts, const ThemeSet& model,
                      double threshold, int max_iters) {
  EstepOptions options;
  options.threshold = threshold;
  options.max_iters = max_iters;
  return run_estep(posts, model, options);
}

ElboBreakdown lda_elbo(const Eigen::MatrixXd& expected_logliks, const ThemeSet& model,
                       const TaskPosterior& tp) {
  const Eigen::Index K = model.size();
  const auto& r = tp.responsibilities;
  if (expected_logliks.rows() != r.rows() || expected_logliks.cols() != K ||
      r.cols() != K || tp.gamma.size() != K) {
    throw std::invalid_argument("lda_elbo: inconsistent dimensions");
  }
  const Eigen::ArrayXd log_pi = expected_log_pi(tp.gamma);
  const auto& alpha = model.alpha();

  ElboBreakdown out;
  out.expected_loglik = (r.array() * expected_logliks.array()).sum();

  double e_log_pz = 0.0;
  double e_log_qz = 0.0;
  for (Eigen::Index n = 0; n < r.rows(); ++n) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const double rv = r(n, k);
      if (rv > 0.0) {
        e_log_pz += rv * log_pi[k];
        e_log_qz += rv * std::log(rv);  // 0 ln 0 = 0
      }
    }
  }
  out.expected_log_pz = e_log_pz;
  out.entropy_qz = -e_log_qz;

  double e_log_pprior = log_gamma(alpha.sum());
  double e_log_qpi = log_gamma(tp.gamma.sum());
  for (Eigen::Index k = 0; k < K; ++k) {
    e_log_pprior += -log_gamma(alpha[k]) + (alpha[k] - 1.0) * log_pi[k];
    e_log_qpi += -log_gamma(tp.gamma[k]) + (tp.gamma[k] - 1.0) * log_pi[k];
  }
  out.expected_log_pprior = e_log_pprior;
  out.entropy_qpi = -e_log_qpi;

  out.total = out.expected_loglik + out.expected_log_pz + out.expected_log_pprior +
              out.entropy_qz + out.entropy_qpi;
  return out;
}

ElboBreakdown lda_elbo(const std::vector<EmbeddingPosterior>& posts, const ThemeSet& model,
                       const TaskPosterior& tp) {
  return lda_elbo(expected_loglik_matrix(posts, model), model, tp);
}

}  // namespace ttm
