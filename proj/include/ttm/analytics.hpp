#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ttm/dirichlet.hpp"
#include "ttm/trainer.hpp"

namespace ttm {

/// A task's point in the theme simplex: its Dirichlet posterior plus the
/// posterior's differential entropy.
struct TaskRepresentation {
  DirichletParams gamma;
  double entropy;
  std::string source_id;
};

struct RepresentOptions {
  bool split_half = false;  // use only the training half instead of all points
};

/// Embed every point of the task, run the E-step to convergence and read off
/// gamma and its entropy.
TaskRepresentation represent_task(const TaskDataset& task, const ModelState& state,
                                  const RepresentOptions& options = {},
                                  std::string source_id = {});

/// Pairwise KL matrix: entry (i, j) = KL[gamma_i || gamma_j]; zero diagonal.
Eigen::MatrixXd distance_matrix(const std::vector<TaskRepresentation>& reps);

/// ln(eps + d) entrywise, for export parity with log-scaled distance plots.
Eigen::MatrixXd log_transform(const Eigen::MatrixXd& distances, double eps = 1e-12);

struct TaskPool {
  size_t capacity = 200;
  std::vector<std::pair<TaskDataset, TaskRepresentation>> entries;
};

struct SelectionPolicy {
  enum class Kind { EntropyMax, KlMin, MaxLoss, Random };
  Kind kind = Kind::Random;
  std::uint64_t seed = 0;
  std::vector<TaskRepresentation> references;  // test-task representations for kl-min
  std::optional<RandomSource> rng;             // lazily seeded for the random policy

  static SelectionPolicy entropy_max();
  static SelectionPolicy kl_min(std::vector<TaskRepresentation> references);
  static SelectionPolicy max_loss();
  static SelectionPolicy random(std::uint64_t seed);
};

using TaskLossFn = std::function<double(const TaskDataset&)>;

/// Index of the pool entry chosen by the policy; ties break to the lowest
/// index. The loss function backs the max-loss policy.
size_t select_task(const TaskPool& pool, SelectionPolicy& policy, const TaskLossFn& loss);
/// Convenience overload: max-loss evaluates the prototypical loss with the
/// state's encoder on each candidate's own split.
size_t select_task(const TaskPool& pool, SelectionPolicy& policy, const ModelState& state);

/// y_0 = x_0; y_t = weight * y_{t-1} + (1 - weight) * x_t.
std::vector<double> ewma(const std::vector<double>& series, double weight);

/// Prototypical loss of a task under a model's embeddings (mean embeddings,
/// prototypes from the training half, queries from the validation half).
double prototype_task_loss(const TaskDataset& task, const ModelState& state);
/// Fraction of validation points whose nearest prototype matches the label.
double prototype_task_accuracy(const TaskDataset& task, const ModelState& state);

/// The default lifelong learner: the state's encoder trained further with
/// one Adam step of prototypical loss per selected task.
class PrototypeLearner {
public:
  PrototypeLearner(const ModelState& base, double step_size, std::uint64_t seed);

  void learn(const TaskDataset& task);
  double loss(const TaskDataset& task) const;
  double accuracy(const std::vector<TaskDataset>& eval_tasks) const;
  const ModelState& state() const { return state_; }

private:
  ModelState state_;
};

struct LifelongHooks {
  std::function<void(const TaskDataset&)> learn;
  std::function<double()> evaluate;
  TaskLossFn loss;
};

LifelongHooks default_hooks(PrototypeLearner& learner,
                            const std::vector<TaskDataset>& eval_tasks);

using TaskSource = std::function<std::optional<TaskDataset>()>;

struct LifelongReport {
  std::vector<long> steps;
  std::vector<double> accuracy;
  bool truncated = false;
};

/// Select -> learn -> discard -> refill, recording held-out accuracy every
/// `eval_cadence` steps (and at the final step). An exhausted source
/// truncates the run with a warning.
LifelongReport run_lifelong(const TaskSource& source, SelectionPolicy& policy,
                            const ModelState& rep_state, LifelongHooks& hooks, long steps,
                            size_t pool_capacity, long eval_cadence);

}  // namespace ttm
