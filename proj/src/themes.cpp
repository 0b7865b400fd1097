#include "ttm/themes.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "ttm/errors.hpp"

namespace ttm {

namespace {
constexpr double kLn2Pi = 1.8378770664093454836;
constexpr double kSymmetryTol = 1e-10;
constexpr double kFloorScale = 1e-6;
constexpr int kFloorEscalations = 3;

double floor_epsilon(const Eigen::MatrixXd& covariance) {
  const double eps = kFloorScale * covariance.trace() / static_cast<double>(covariance.rows());
  return eps > 0.0 ? eps : kFloorScale;
}
}  // namespace

void apply_covariance_floor(Eigen::MatrixXd& covariance) {
  covariance.diagonal().array() += floor_epsilon(covariance);
}

TaskTheme TaskTheme::build(Eigen::VectorXd mean, Eigen::MatrixXd covariance, bool floor_first) {
  const Eigen::Index d = mean.size();
  if (covariance.rows() != d || covariance.cols() != d) {
    throw std::invalid_argument("TaskTheme: covariance shape does not match mean dimension");
  }
  const double asym = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= kSymmetryTol)) {
    throw std::invalid_argument("TaskTheme: covariance asymmetric by " + std::to_string(asym));
  }

  double eps = floor_epsilon(covariance);
  if (floor_first) {
    covariance.diagonal().array() += eps;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  int escalations = 0;
  while (llt.info() != Eigen::Success && escalations < kFloorEscalations) {
    covariance.diagonal().array() += eps;
    eps *= 10.0;
    ++escalations;
    llt.compute(covariance);
  }
  if (llt.info() != Eigen::Success) {
    throw DegeneracyError("TaskTheme: covariance not factorizable after floor escalation");
  }

  TaskTheme theme;
  theme.mean_ = std::move(mean);
  theme.covariance_ = std::move(covariance);
  theme.factor_ = llt.matrixL();
  theme.log_det_ = 2.0 * theme.factor_.diagonal().array().log().sum();
  if (!std::isfinite(theme.log_det_)) {
    throw DegeneracyError("TaskTheme: non-finite log-determinant");
  }
  return theme;
}

TaskTheme::TaskTheme(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
  const Eigen::Index d = mean.size();
  if (covariance.rows() != d || covariance.cols() != d) {
    throw std::invalid_argument("TaskTheme: covariance shape does not match mean dimension");
  }
  const double asym = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= kSymmetryTol)) {
    throw std::invalid_argument("TaskTheme: covariance asymmetric by " + std::to_string(asym));
  }
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw DegeneracyError("TaskTheme: covariance is not positive definite");
  }
  mean_ = std::move(mean);
  covariance_ = std::move(covariance);
  factor_ = llt.matrixL();
  log_det_ = 2.0 * factor_.diagonal().array().log().sum();
  if (!std::isfinite(log_det_)) {
    throw DegeneracyError("TaskTheme: non-finite log-determinant");
  }
}

TaskTheme TaskTheme::regularized(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
  return build(std::move(mean), std::move(covariance), /*floor_first=*/true);
}

TaskTheme TaskTheme::repaired(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
  return build(std::move(mean), std::move(covariance), /*floor_first=*/false);
}

EmbeddingPosterior::EmbeddingPosterior(Eigen::VectorXd m_in, Eigen::VectorXd s_in)
    : m(std::move(m_in)), s(std::move(s_in)) {
  if (m.size() != s.size()) {
    throw std::invalid_argument("EmbeddingPosterior: m and s dimensions differ");
  }
  for (Eigen::Index d = 0; d < s.size(); ++d) {
    if (!std::isfinite(s[d]) || s[d] <= 0.0 || !std::isfinite(m[d])) {
      throw std::invalid_argument("EmbeddingPosterior: s must be finite and > 0, m finite");
    }
  }
}

ThemeSet::ThemeSet(std::vector<TaskTheme> themes, DirichletParams alpha)
    : themes_(std::move(themes)), alpha_(std::move(alpha)) {
  if (themes_.empty()) {
    throw std::invalid_argument("ThemeSet: need at least one theme");
  }
  const Eigen::Index d = themes_.front().dim();
  for (const auto& theme : themes_) {
    if (theme.dim() != d) {
      throw std::invalid_argument("ThemeSet: themes disagree on embedding dimension");
    }
  }
  if (alpha_.size() != static_cast<Eigen::Index>(themes_.size())) {
    throw std::invalid_argument("ThemeSet: alpha dimension does not match theme count");
  }
}

double gaussian_log_density(const Eigen::VectorXd& x, const TaskTheme& theme) {
  if (x.size() != theme.dim()) {
    throw std::invalid_argument("gaussian_log_density: dimension mismatch");
  }
  const Eigen::VectorXd w =
      theme.factor().triangularView<Eigen::Lower>().solve(x - theme.mean());
  return -0.5 * (static_cast<double>(theme.dim()) * kLn2Pi + theme.log_det() + w.squaredNorm());
}

double expected_gaussian_loglik(const EmbeddingPosterior& post, const TaskTheme& theme) {
  if (post.m.size() != theme.dim()) {
    throw std::invalid_argument("expected_gaussian_loglik: dimension mismatch");
  }
  // tr(Sigma^-1 diag(s^2)) = |L^-1 diag(s)|_F^2
  Eigen::MatrixXd scaled = Eigen::MatrixXd(post.s.asDiagonal());
  theme.factor().triangularView<Eigen::Lower>().solveInPlace(scaled);
  return -0.5 * scaled.squaredNorm() + gaussian_log_density(post.m, theme);
}

}  // namespace ttm
