#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttm/estep.hpp"
#include "ttm/mstep.hpp"
#include "ttm/net.hpp"
#include "ttm/rng.hpp"
#include "ttm/themes.hpp"

namespace ttm {

/// One task: N data points in [0,1]^P with integer labels and a fixed
/// train/validation index split. When N is odd the training half gets the
/// extra point.
struct TaskDataset {
  Eigen::MatrixXd points;  // N x P
  std::vector<int> labels;
  std::vector<Eigen::Index> train_idx;
  std::vector<Eigen::Index> val_idx;

  static TaskDataset with_split(Eigen::MatrixXd points, std::vector<int> labels);

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index data_dim() const { return points.cols(); }
  /// Points of one half, as columns.
  Eigen::MatrixXd half_points(const std::vector<Eigen::Index>& idx) const;
  std::vector<int> half_labels(const std::vector<Eigen::Index>& idx) const;
  /// All points as columns.
  Eigen::MatrixXd all_points() const { return points.transpose(); }
};

struct TrainConfig {
  int num_themes = 8;    // K
  int embed_dim = 8;     // D
  double alpha_init = 1.1;
  double tau0 = 1e6;
  double tau1 = 0.5;
  int batch_size = 20;
  long episodes = 10000;  // number of tasks consumed by training
  double estep_threshold = 1e-3;
  int estep_max_iters = 100;
  double adam_step_size = 2e-4;
  std::uint64_t seed = 0;
  std::vector<int> encoder_hidden = {64, 32};  // decoder mirrors these
  bool identity_embedding = false;  // bypass the nets: m = logit(x[..D]), fixed s
  double identity_sigma = 1e-3;
  bool stats_from_train_half = false;   // pool train-half responsibilities instead
  bool alpha_step_per_task = false;     // average per-task Newton steps instead of pooling
  ObjectiveWeights weights;

  void validate() const;  // throws ConfigError
};

/// Full parameter set of the engine plus the online step counter.
struct ModelState {
  ThemeSet themes;
  DenseNetwork encoder;
  DenseNetwork decoder;
  AdamState encoder_adam;
  AdamState decoder_adam;
  long step = 0;  // applied mini-batches
  TrainConfig config;
};

/// Embedding posteriors for a block of points (columns), honoring the
/// identity-embedding mode of the config.
std::vector<EmbeddingPosterior> embed_points(const Eigen::MatrixXd& x_cols,
                                             const ModelState& state);

struct TaskObjectiveResult {
  double value = 0.0;
  ObjectiveEval eval;
  TaskPosterior posterior;          // converged gamma with validation responsibilities
  std::vector<EmbeddingPosterior> stats_posts;
  TaskPosterior stats_posterior;    // contribution to the batch statistics
};

/// Per-task bound: E-step on the training half, objective on the
/// validation half, gradients via the composite backward pass.
TaskObjectiveResult task_objective(const TaskDataset& task, const ModelState& state,
                                   RandomSource& rng);

/// Model construction: theme means drawn from N(0, I) scaled by the RMS
/// embedding magnitude of a warm-up encoding pass, unit covariances,
/// symmetric alpha, randomized encoder/decoder.
ModelState initialize_model(const std::vector<TaskDataset>& warmup, const TrainConfig& config,
                            RandomSource& rng);

/// One mini-batch of training: averaged network gradients, pooled theme
/// statistics, online blend at rho = (tau0 + i)^(-tau1). Degenerate tasks
/// are skipped with a warning; throws DegeneracyError when every task in
/// the batch was skipped. Returns the mean per-task objective value.
double train_minibatch(const std::vector<const TaskDataset*>& batch, ModelState& state,
                       RandomSource& rng);

struct SynthOptions {
  int data_dim = 0;      // P; defaults to embedding dim when 0
  bool decode = false;   // push samples through the decoder
  const DenseNetwork* decoder = nullptr;
};

/// Samples one task from the generative process: pi ~ Dirichlet(alpha),
/// z ~ Categorical(pi), u ~ N(mu_z, Sigma_z), x = decoder(u) or, in
/// identity mode, logistic(u) padded with 0.5 up to P. Labels are the
/// sampled theme indices.
TaskDataset generate_synthetic_task(const ThemeSet& themes, int n_points, RandomSource& rng,
                                    const SynthOptions& options = {});

/// Full training loop over a task list: consumes `episodes` tasks in corpus
/// order (wrapping around), one mini-batch at a time. Logs one line per
/// thousand batches.
ModelState train(const std::vector<TaskDataset>& corpus, const TrainConfig& config);

}  // namespace ttm
