#include "ttm/dirichlet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ttm/special.hpp"

namespace ttm {

DirichletParams::DirichletParams(Eigen::ArrayXd concentration)
    : concentration_(std::move(concentration)) {
  if (concentration_.size() < 1) {
    throw std::invalid_argument("DirichletParams: need at least one component");
  }
  for (Eigen::Index k = 0; k < concentration_.size(); ++k) {
    const double c = concentration_[k];
    if (!std::isfinite(c) || c <= 0.0) {
      throw std::invalid_argument("DirichletParams: component " + std::to_string(k) +
                                  " must be finite and > 0, got " + std::to_string(c));
    }
  }
}

Eigen::ArrayXd expected_log_pi(const DirichletParams& gamma) {
  const double psi_total = digamma(gamma.sum());
  Eigen::ArrayXd out(gamma.size());
  for (Eigen::Index k = 0; k < gamma.size(); ++k) {
    out[k] = digamma(gamma[k]) - psi_total;
  }
  return out;
}

double dirichlet_entropy(const DirichletParams& gamma) {
  if (gamma.size() < 2) {
    throw std::invalid_argument("dirichlet_entropy: need K >= 2");
  }
  const double total = gamma.sum();
  const auto K = gamma.size();
  double log_beta = -log_gamma(total);
  double moment = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    log_beta += log_gamma(gamma[k]);
    moment += (gamma[k] - 1.0) * digamma(gamma[k]);
  }
  return log_beta + (total - static_cast<double>(K)) * digamma(total) - moment;
}

double dirichlet_kl(const DirichletParams& p, const DirichletParams& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("dirichlet_kl: dimension mismatch (" +
                                std::to_string(p.size()) + " vs " + std::to_string(q.size()) + ")");
  }
  if (p.size() < 2) {
    throw std::invalid_argument("dirichlet_kl: need K >= 2");
  }
  const double P = p.sum();
  const double Q = q.sum();
  const double psi_P = digamma(P);
  double kl = log_gamma(P) - log_gamma(Q);
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    kl -= log_gamma(p[k]) - log_gamma(q[k]);
    kl += (p[k] - q[k]) * (digamma(p[k]) - psi_P);
  }
  return kl;
}

double mean_kl_to_set(const DirichletParams& novel,
                      const std::vector<DirichletParams>& training) {
  if (training.empty()) {
    throw std::invalid_argument("mean_kl_to_set: empty training set");
  }
  double total = 0.0;
  for (const auto& t : training) {
    total += dirichlet_kl(novel, t);
  }
  return total / static_cast<double>(training.size());
}

}  // namespace ttm
