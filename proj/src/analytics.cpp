#include "ttm/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <utility>

#include "ttm/errors.hpp"
#include "ttm/log.hpp"

namespace ttm {

namespace {

Eigen::MatrixXd mean_embeddings(const std::vector<EmbeddingPosterior>& posts) {
  Eigen::MatrixXd out(posts.front().m.size(), static_cast<Eigen::Index>(posts.size()));
  for (size_t i = 0; i < posts.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = posts[i].m;
  }
  return out;
}

// Validation points whose labels appear in the training half; prototypical
// scores are computed over these only so that tasks with lopsided splits
// stay usable in pools and reports.
struct UsableSplit {
  Eigen::MatrixXd train_u;
  std::vector<int> train_labels;
  Eigen::MatrixXd val_u;
  std::vector<int> val_labels;
  long skipped_val = 0;
};

UsableSplit usable_split(const TaskDataset& task, const ModelState& state) {
  UsableSplit split;
  const auto posts_train = embed_points(task.half_points(task.train_idx), state);
  const auto posts_val = embed_points(task.half_points(task.val_idx), state);
  split.train_u = mean_embeddings(posts_train);
  split.train_labels = task.half_labels(task.train_idx);
  const std::vector<int> all_val_labels = task.half_labels(task.val_idx);

  std::vector<Eigen::Index> usable;
  for (size_t i = 0; i < all_val_labels.size(); ++i) {
    const bool seen = std::find(split.train_labels.begin(), split.train_labels.end(),
                                all_val_labels[i]) != split.train_labels.end();
    if (seen) {
      usable.push_back(static_cast<Eigen::Index>(i));
    } else {
      ++split.skipped_val;
    }
  }
  split.val_u.resize(split.train_u.rows(), static_cast<Eigen::Index>(usable.size()));
  for (size_t i = 0; i < usable.size(); ++i) {
    split.val_u.col(static_cast<Eigen::Index>(i)) = posts_val[static_cast<size_t>(usable[i])].m;
    split.val_labels.push_back(all_val_labels[static_cast<size_t>(usable[i])]);
  }
  return split;
}

}  // namespace

TaskRepresentation represent_task(const TaskDataset& task, const ModelState& state,
                                  const RepresentOptions& options, std::string source_id) {
  const Eigen::MatrixXd x =
      options.split_half ? task.half_points(task.train_idx) : task.all_points();
  const std::vector<EmbeddingPosterior> posts = embed_points(x, state);
  EstepOptions estep_options;
  estep_options.threshold = state.config.estep_threshold;
  estep_options.max_iters = state.config.estep_max_iters;
  EstepResult estep = run_estep(posts, state.themes, estep_options);
  const double entropy = dirichlet_entropy(estep.posterior.gamma);
  return TaskRepresentation{std::move(estep.posterior.gamma), entropy, std::move(source_id)};
}

Eigen::MatrixXd distance_matrix(const std::vector<TaskRepresentation>& reps) {
  if (reps.size() < 2) {
    throw std::invalid_argument("distance_matrix: need at least two representations");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(reps.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      out(i, j) = dirichlet_kl(reps[static_cast<size_t>(i)].gamma,
                               reps[static_cast<size_t>(j)].gamma);
    }
  }
  return out;
}

Eigen::MatrixXd log_transform(const Eigen::MatrixXd& distances, double eps) {
  return (distances.array() + eps).log().matrix();
}

SelectionPolicy SelectionPolicy::entropy_max() {
  SelectionPolicy policy;
  policy.kind = Kind::EntropyMax;
  return policy;
}

SelectionPolicy SelectionPolicy::kl_min(std::vector<TaskRepresentation> references) {
  if (references.empty()) {
    throw std::invalid_argument("SelectionPolicy: kl-min needs a non-empty reference set");
  }
  SelectionPolicy policy;
  policy.kind = Kind::KlMin;
  policy.references = std::move(references);
  return policy;
}

SelectionPolicy SelectionPolicy::max_loss() {
  SelectionPolicy policy;
  policy.kind = Kind::MaxLoss;
  return policy;
}

SelectionPolicy SelectionPolicy::random(std::uint64_t seed) {
  SelectionPolicy policy;
  policy.kind = Kind::Random;
  policy.seed = seed;
  return policy;
}

size_t select_task(const TaskPool& pool, SelectionPolicy& policy, const TaskLossFn& loss) {
  if (pool.entries.empty()) {
    throw std::invalid_argument("select_task: empty pool");
  }
  switch (policy.kind) {
    case SelectionPolicy::Kind::EntropyMax: {
      size_t best = 0;
      for (size_t i = 1; i < pool.entries.size(); ++i) {
        if (pool.entries[i].second.entropy > pool.entries[best].second.entropy) best = i;
      }
      return best;
    }
    case SelectionPolicy::Kind::KlMin: {
      if (policy.references.empty()) {
        throw std::invalid_argument("select_task: kl-min policy has no references");
      }
      size_t best = 0;
      double best_score = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < pool.entries.size(); ++i) {
        double score = 0.0;
        for (const auto& ref : policy.references) {
          score += dirichlet_kl(ref.gamma, pool.entries[i].second.gamma);
        }
        score /= static_cast<double>(policy.references.size());
        if (score < best_score) {
          best_score = score;
          best = i;
        }
      }
      return best;
    }
    case SelectionPolicy::Kind::MaxLoss: {
      if (!loss) {
        throw std::invalid_argument("select_task: max-loss policy needs a loss function");
      }
      size_t best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < pool.entries.size(); ++i) {
        const double score = loss(pool.entries[i].first);
        if (score > best_score) {
          best_score = score;
          best = i;
        }
      }
      return best;
    }
    case SelectionPolicy::Kind::Random: {
      if (!policy.rng.has_value()) {
        policy.rng.emplace(policy.seed);
      }
      return static_cast<size_t>(policy.rng->integer(pool.entries.size()));
    }
  }
  throw std::logic_error("select_task: unknown policy kind");
}

size_t select_task(const TaskPool& pool, SelectionPolicy& policy, const ModelState& state) {
  return select_task(pool, policy, [&state](const TaskDataset& task) {
    return prototype_task_loss(task, state);
  });
}

std::vector<double> ewma(const std::vector<double>& series, double weight) {
  if (!(weight >= 0.0 && weight < 1.0)) {
    throw std::invalid_argument("ewma: weight must be in [0, 1)");
  }
  std::vector<double> out;
  out.reserve(series.size());
  for (size_t i = 0; i < series.size(); ++i) {
    out.push_back(i == 0 ? series[0] : weight * out.back() + (1.0 - weight) * series[i]);
  }
  return out;
}

double prototype_task_loss(const TaskDataset& task, const ModelState& state) {
  const UsableSplit split = usable_split(task, state);
  if (split.val_labels.empty()) return 0.0;
  return prototypical_loss(split.train_u, split.train_labels, split.val_u, split.val_labels);
}

double prototype_task_accuracy(const TaskDataset& task, const ModelState& state) {
  const UsableSplit split = usable_split(task, state);
  const long total = static_cast<long>(split.val_labels.size()) + split.skipped_val;
  if (total == 0) return 0.0;
  if (split.val_labels.empty()) return 0.0;
  const PrototypeModel proto =
      build_prototypes(split.train_u, split.train_labels, split.val_labels);
  const Eigen::MatrixXd probs = prototype_probabilities(proto, split.val_u);
  long correct = 0;
  for (Eigen::Index n = 0; n < probs.cols(); ++n) {
    Eigen::Index arg = 0;
    probs.col(n).maxCoeff(&arg);
    if (arg == proto.classes.at(split.val_labels[static_cast<size_t>(n)])) ++correct;
  }
  // Unsplittable validation points count as misses.
  return static_cast<double>(correct) / static_cast<double>(total);
}

PrototypeLearner::PrototypeLearner(const ModelState& base, double step_size, std::uint64_t seed)
    : state_(base) {
  RandomSource rng(seed);
  state_.config.identity_embedding = false;
  state_.encoder = DenseNetwork::randomized(state_.encoder.widths(), rng);
  state_.encoder_adam = make_adam(state_.encoder, step_size);
}

void PrototypeLearner::learn(const TaskDataset& task) {
  const UsableSplit split = usable_split(task, state_);
  if (split.val_labels.empty()) {
    if (log_level() >= LogLevel::Debug) {
      std::clog << "[ttm] learner: task skipped (no usable validation point)\n";
    }
    return;
  }
  // Gradient of the mean prototypical log-likelihood with respect to the
  // encoder means; ascent step through Adam.
  const Eigen::MatrixXd x_train = task.half_points(task.train_idx);
  const Eigen::MatrixXd x_val = task.half_points(task.val_idx);
  const DenseNetwork::Forward f_train = state_.encoder.forward(x_train);
  const DenseNetwork::Forward f_val = state_.encoder.forward(x_val);
  const Eigen::Index D = state_.encoder.output_width() / 2;
  const Eigen::MatrixXd m_train = f_train.output.topRows(D);
  const Eigen::MatrixXd m_val = f_val.output.topRows(D);

  // Rebuild the usable-point view against these forward passes.
  std::vector<Eigen::Index> usable;
  const std::vector<int> val_labels_all = task.half_labels(task.val_idx);
  for (size_t i = 0; i < val_labels_all.size(); ++i) {
    if (std::find(split.train_labels.begin(), split.train_labels.end(), val_labels_all[i]) !=
        split.train_labels.end()) {
      usable.push_back(static_cast<Eigen::Index>(i));
    }
  }
  Eigen::MatrixXd val_u(D, static_cast<Eigen::Index>(usable.size()));
  std::vector<int> val_labels;
  for (size_t i = 0; i < usable.size(); ++i) {
    val_u.col(static_cast<Eigen::Index>(i)) = m_val.col(usable[i]);
    val_labels.push_back(val_labels_all[static_cast<size_t>(usable[i])]);
  }

  const PrototypeModel proto = build_prototypes(m_train, split.train_labels, val_labels);
  const Eigen::MatrixXd probs = prototype_probabilities(proto, val_u);
  const Eigen::Index C = proto.centers.cols();
  const double inv_n = 1.0 / static_cast<double>(val_u.cols());

  Eigen::MatrixXd d_m_val_usable = Eigen::MatrixXd::Zero(D, val_u.cols());
  Eigen::MatrixXd d_proto = Eigen::MatrixXd::Zero(D, C);
  for (Eigen::Index n = 0; n < val_u.cols(); ++n) {
    const int target = proto.classes.at(val_labels[static_cast<size_t>(n)]);
    for (Eigen::Index c = 0; c < C; ++c) {
      const double d_logit = inv_n * ((c == target ? 1.0 : 0.0) - probs(c, n));
      const Eigen::VectorXd diff = val_u.col(n) - proto.centers.col(c);
      d_m_val_usable.col(n) += d_logit * (-2.0) * diff;
      d_proto.col(c) += d_logit * 2.0 * diff;
    }
  }

  Eigen::MatrixXd d_out_val = Eigen::MatrixXd::Zero(2 * D, x_val.cols());
  for (size_t i = 0; i < usable.size(); ++i) {
    d_out_val.col(usable[i]).topRows(D) = d_m_val_usable.col(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd d_out_train = Eigen::MatrixXd::Zero(2 * D, x_train.cols());
  for (Eigen::Index n = 0; n < x_train.cols(); ++n) {
    const int c = proto.classes.at(split.train_labels[static_cast<size_t>(n)]);
    d_out_train.col(n).topRows(D) = d_proto.col(c) / proto.counts[c];
  }

  DenseNetwork::Grads grads = state_.encoder.zero_grads();
  state_.encoder.backward(f_val, d_out_val, grads);
  state_.encoder.backward(f_train, d_out_train, grads);
  adam_step(state_.encoder, grads, state_.encoder_adam);
}

double PrototypeLearner::loss(const TaskDataset& task) const {
  return prototype_task_loss(task, state_);
}

double PrototypeLearner::accuracy(const std::vector<TaskDataset>& eval_tasks) const {
  if (eval_tasks.empty()) return 0.0;
  double total = 0.0;
  for (const auto& task : eval_tasks) {
    total += prototype_task_accuracy(task, state_);
  }
  return total / static_cast<double>(eval_tasks.size());
}

LifelongHooks default_hooks(PrototypeLearner& learner,
                            const std::vector<TaskDataset>& eval_tasks) {
  LifelongHooks hooks;
  hooks.learn = [&learner](const TaskDataset& task) { learner.learn(task); };
  hooks.evaluate = [&learner, &eval_tasks]() { return learner.accuracy(eval_tasks); };
  hooks.loss = [&learner](const TaskDataset& task) { return learner.loss(task); };
  return hooks;
}

LifelongReport run_lifelong(const TaskSource& source, SelectionPolicy& policy,
                            const ModelState& rep_state, LifelongHooks& hooks, long steps,
                            size_t pool_capacity, long eval_cadence) {
  if (steps < 0 || eval_cadence < 1 || pool_capacity < 1) {
    throw std::invalid_argument("run_lifelong: bad steps/cadence/capacity");
  }
  LifelongReport report;
  if (steps == 0) return report;

  TaskPool pool;
  pool.capacity = pool_capacity;
  auto refill = [&]() {
    while (pool.entries.size() < pool.capacity) {
      std::optional<TaskDataset> task = source();
      if (!task.has_value()) return false;
      TaskRepresentation rep = represent_task(*task, rep_state);
      pool.entries.emplace_back(std::move(*task), std::move(rep));
    }
    return true;
  };
  bool source_alive = refill();

  for (long step = 1; step <= steps; ++step) {
    if (pool.entries.empty()) {
      report.truncated = true;
      if (log_level() >= LogLevel::Info) {
        std::clog << "[ttm] warning: lifelong run truncated at step " << step
                  << " (pool source exhausted)\n";
      }
      break;
    }
    const size_t chosen = select_task(pool, policy, hooks.loss);
    hooks.learn(pool.entries[chosen].first);
    pool.entries.erase(pool.entries.begin() + static_cast<long>(chosen));
    if (source_alive) {
      source_alive = refill();
      if (!source_alive) report.truncated = true;
    }
    if (step % eval_cadence == 0 || step == steps) {
      report.steps.push_back(step);
      report.accuracy.push_back(hooks.evaluate());
    }
  }
  return report;
}

}  // namespace ttm
