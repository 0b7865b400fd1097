#pragma once

#include <Eigen/Core>
#include <map>
#include <vector>

#include "ttm/estep.hpp"
#include "ttm/rng.hpp"
#include "ttm/themes.hpp"

namespace ttm {

inline constexpr double kLeakySlope = 0.01;

/// Fully connected network with leaky-linear activations between layers
/// (none after the last). Columns of the batch matrices are data points.
class DenseNetwork {
public:
  struct Forward {
    std::vector<Eigen::MatrixXd> inputs;    // input to each layer
    std::vector<Eigen::MatrixXd> preacts;   // W x + b per layer
    Eigen::MatrixXd output;
  };
  struct Grads {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
  };

  /// Zero-initialized network over the given layer widths (input first).
  explicit DenseNetwork(std::vector<int> widths);
  /// He-style random initialization.
  static DenseNetwork randomized(std::vector<int> widths, RandomSource& rng);

  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  size_t layer_count() const { return weights_.size(); }

  Forward forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& x) const;

  Grads zero_grads() const;
  /// Reverse pass; accumulates parameter gradients and returns d(input).
  Eigen::MatrixXd backward(const Forward& state, const Eigen::MatrixXd& d_output,
                           Grads& grads) const;

  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

private:
  std::vector<int> widths_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

/// Encoder output for a batch: means, log-variances and s = exp(logvar/2).
struct EncodedBatch {
  Eigen::MatrixXd m;        // D x N
  Eigen::MatrixXd log_var;  // D x N
  Eigen::MatrixXd s;        // D x N
  DenseNetwork::Forward state;
};

/// Runs the encoder on a batch (columns are data points) and splits the
/// 2D-wide output into means and log-variances.
EncodedBatch encode_batch(const DenseNetwork& encoder, const Eigen::MatrixXd& x);

/// Single-point convenience wrapper over encode_batch.
EmbeddingPosterior encode(const Eigen::VectorXd& x, const DenseNetwork& encoder);

/// Reparameterized sample u = m + s .* noise with the noise retained.
struct EmbeddingSample {
  Eigen::VectorXd u;
  Eigen::VectorXd noise;
};
EmbeddingSample sample_embedding(const EmbeddingPosterior& post, const Eigen::VectorXd& noise);

/// ln C(lambda), the continuous-Bernoulli normalizer, with an even Taylor
/// branch around lambda = 1/2.
double cb_log_norm(double lambda);
/// d/d lambda of cb_log_norm.
double cb_log_norm_derivative(double lambda);

/// Sum over components of ln C(lambda_p) + x_p ln lambda_p
/// + (1 - x_p) ln(1 - lambda_p). Requires x in [0,1], lambda in (0,1).
double cb_log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda);

/// Per-class means of the training embeddings. Throws when a validation
/// label has no training exemplar.
struct PrototypeModel {
  Eigen::MatrixXd centers;     // D x C
  Eigen::VectorXd counts;      // C
  std::map<int, int> classes;  // label -> column
};
PrototypeModel build_prototypes(const Eigen::MatrixXd& train_u,
                                const std::vector<int>& train_labels,
                                const std::vector<int>& val_labels);
/// Softmax over negative squared distances to the prototypes; C x N.
Eigen::MatrixXd prototype_probabilities(const PrototypeModel& proto,
                                        const Eigen::MatrixXd& val_u);

/// Mean cross-entropy of the softmax over negative squared Euclidean
/// distances from each validation point to the per-class means of the
/// training points. Columns are data points.
double prototypical_loss(const Eigen::MatrixXd& train_u, const std::vector<int>& train_labels,
                         const Eigen::MatrixXd& val_u, const std::vector<int>& val_labels);

/// Bias-corrected Adam state for one network (gradient-ascent convention).
struct AdamState {
  std::vector<Eigen::MatrixXd> m_weights, v_weights;
  std::vector<Eigen::VectorXd> m_biases, v_biases;
  long step = 0;
  double step_size = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam(const DenseNetwork& net, double step_size);
/// One ascent step: parameters move along +gradient.
void adam_step(DenseNetwork& net, const DenseNetwork::Grads& grads, AdamState& state);

/// Relative weights of the objective terms; all unit by default.
struct ObjectiveWeights {
  double lda = 1.0;
  double reconstruction = 1.0;
  double classification = 1.0;
  double entropy = 1.0;
};

/// Stop-gradient context for one task objective: the E-step outputs and the
/// retained noise draws are constants during differentiation.
struct ObjectiveContext {
  Eigen::MatrixXd r_val;          // N_val x K validation responsibilities
  DirichletParams gamma;          // converged E-step gamma
  Eigen::MatrixXd noise_train;    // D x N_train
  Eigen::MatrixXd noise_val;      // D x N_val
  ObjectiveWeights weights;
};

struct ObjectiveEval {
  double value = 0.0;
  ElboBreakdown elbo;             // validation-half LDA bound
  double reconstruction = 0.0;    // continuous-Bernoulli log-likelihood
  double classification = 0.0;    // prototypical log-likelihood (<= 0)
  double qu_entropy = 0.0;        // -E ln q(u) on the validation half
  DenseNetwork::Grads encoder_grads;
  DenseNetwork::Grads decoder_grads;
};

/// Evaluates the composite per-task objective on the validation half
/// (LDA bound + reconstruction + classification - E ln q(u)) and, when
/// requested, its exact reverse-mode gradients with respect to encoder and
/// decoder parameters, holding the context's r and gamma fixed.
/// Columns of the x matrices are data points.
ObjectiveEval evaluate_task_objective(const DenseNetwork& encoder, const DenseNetwork& decoder,
                                      const ThemeSet& themes,
                                      const Eigen::MatrixXd& x_train,
                                      const std::vector<int>& y_train,
                                      const Eigen::MatrixXd& x_val,
                                      const std::vector<int>& y_val,
                                      const ObjectiveContext& context, bool with_grads);

}  // namespace ttm
