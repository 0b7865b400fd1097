#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>

namespace ttm {

/// Seeded source for every random draw in the engine. A single engine in a
/// fixed call order keeps full runs bitwise reproducible.
class RandomSource {
public:
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double gamma(double shape) {
    std::gamma_distribution<double> dist(shape, 1.0);
    return dist(engine_);
  }
  std::uint64_t integer(std::uint64_t bound) {
    std::uniform_int_distribution<std::uint64_t> dist(0, bound - 1);
    return dist(engine_);
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        out(r, c) = normal();
      }
    }
    return out;
  }

  Eigen::VectorXd normal_vector(Eigen::Index size) {
    Eigen::VectorXd out(size);
    for (Eigen::Index i = 0; i < size; ++i) out[i] = normal();
    return out;
  }

  /// Dirichlet draw via normalized gamma variates.
  Eigen::VectorXd dirichlet(const Eigen::ArrayXd& concentration) {
    Eigen::VectorXd out(concentration.size());
    double total = 0.0;
    for (Eigen::Index k = 0; k < concentration.size(); ++k) {
      out[k] = gamma(concentration[k]);
      total += out[k];
    }
    return out / total;
  }

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ttm
