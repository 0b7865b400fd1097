#pragma once

#include <Eigen/Core>
#include <vector>

namespace ttm {

/// Concentration parameters of a Dirichlet distribution. Components must be
/// positive and finite. Single-component parameters are permitted so that
/// degenerate one-theme models remain representable; the divergence and
/// entropy functions below require K >= 2.
class DirichletParams {
public:
  explicit DirichletParams(Eigen::ArrayXd concentration);

  Eigen::Index size() const { return concentration_.size(); }
  double operator[](Eigen::Index k) const { return concentration_[k]; }
  const Eigen::ArrayXd& array() const { return concentration_; }
  double sum() const { return concentration_.sum(); }

private:
  Eigen::ArrayXd concentration_;
};

/// E[ln pi_k] under Dirichlet(gamma): psi(gamma_k) - psi(sum_j gamma_j).
Eigen::ArrayXd expected_log_pi(const DirichletParams& gamma);

/// Differential entropy of Dirichlet(gamma).
double dirichlet_entropy(const DirichletParams& gamma);

/// KL[Dirichlet(p) || Dirichlet(q)]. Asymmetric; requires matching K.
double dirichlet_kl(const DirichletParams& p, const DirichletParams& q);

/// Mean of dirichlet_kl(novel, t) over the training set, `novel` always the
/// first argument. Throws std::invalid_argument on an empty training set.
double mean_kl_to_set(const DirichletParams& novel,
                      const std::vector<DirichletParams>& training);

}  // namespace ttm
