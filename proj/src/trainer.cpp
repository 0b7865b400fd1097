#include "ttm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "ttm/errors.hpp"
#include "ttm/log.hpp"

namespace ttm {

namespace {

double logit(double x) {
  const double clamped = std::min(std::max(x, 1e-12), 1.0 - 1e-12);
  return std::log(clamped / (1.0 - clamped));
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<int> mirrored_decoder_widths(const TrainConfig& config, int data_dim) {
  std::vector<int> widths;
  widths.push_back(config.embed_dim);
  for (auto it = config.encoder_hidden.rbegin(); it != config.encoder_hidden.rend(); ++it) {
    widths.push_back(*it);
  }
  widths.push_back(data_dim);
  return widths;
}

std::vector<int> encoder_widths(const TrainConfig& config, int data_dim) {
  std::vector<int> widths;
  widths.push_back(data_dim);
  for (int w : config.encoder_hidden) widths.push_back(w);
  widths.push_back(2 * config.embed_dim);
  return widths;
}

}  // namespace

TaskDataset TaskDataset::with_split(Eigen::MatrixXd points, std::vector<int> labels) {
  if (points.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("TaskDataset: label count must match point count");
  }
  if (points.rows() < 2) {
    throw std::invalid_argument("TaskDataset: need at least two points to split");
  }
  TaskDataset task;
  task.points = std::move(points);
  task.labels = std::move(labels);
  const Eigen::Index n = task.points.rows();
  const Eigen::Index n_train = (n + 1) / 2;  // odd N: extra point on the training half
  for (Eigen::Index i = 0; i < n; ++i) {
    (i < n_train ? task.train_idx : task.val_idx).push_back(i);
  }
  return task;
}

Eigen::MatrixXd TaskDataset::half_points(const std::vector<Eigen::Index>& idx) const {
  Eigen::MatrixXd out(points.cols(), static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = points.row(idx[i]).transpose();
  }
  return out;
}

std::vector<int> TaskDataset::half_labels(const std::vector<Eigen::Index>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (Eigen::Index i : idx) out.push_back(labels[static_cast<size_t>(i)]);
  return out;
}

void TrainConfig::validate() const {
  if (num_themes < 2) throw ConfigError("TrainConfig: num_themes must be >= 2");
  if (embed_dim < 1) throw ConfigError("TrainConfig: embed_dim must be >= 1");
  if (!(alpha_init > 0.0)) throw ConfigError("TrainConfig: alpha_init must be > 0");
  if (!(tau0 >= 0.0)) throw ConfigError("TrainConfig: tau0 must be >= 0");
  if (!(tau1 > 0.5 && tau1 <= 1.0)) throw ConfigError("TrainConfig: tau1 must be in (0.5, 1]");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (episodes < 1) throw ConfigError("TrainConfig: episodes must be >= 1");
  if (!(estep_threshold > 0.0)) throw ConfigError("TrainConfig: estep_threshold must be > 0");
  if (estep_max_iters < 1) throw ConfigError("TrainConfig: estep_max_iters must be >= 1");
  if (!(adam_step_size >= 0.0)) throw ConfigError("TrainConfig: adam_step_size must be >= 0");
  if (!(identity_sigma > 0.0)) throw ConfigError("TrainConfig: identity_sigma must be > 0");
}

std::vector<EmbeddingPosterior> embed_points(const Eigen::MatrixXd& x_cols,
                                             const ModelState& state) {
  const Eigen::Index n = x_cols.cols();
  std::vector<EmbeddingPosterior> posts;
  posts.reserve(static_cast<size_t>(n));
  if (state.config.identity_embedding) {
    const Eigen::Index d = state.config.embed_dim;
    const Eigen::Index take = std::min(d, x_cols.rows());
    const Eigen::VectorXd sigma =
        Eigen::VectorXd::Constant(d, state.config.identity_sigma);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
      for (Eigen::Index j = 0; j < take; ++j) {
        m[j] = logit(x_cols(j, i));
      }
      posts.emplace_back(m, sigma);
    }
    return posts;
  }
  const EncodedBatch batch = encode_batch(state.encoder, x_cols);
  for (Eigen::Index i = 0; i < n; ++i) {
    posts.emplace_back(batch.m.col(i), batch.s.col(i));
  }
  return posts;
}

TaskObjectiveResult task_objective(const TaskDataset& task, const ModelState& state,
                                   RandomSource& rng) {
  const Eigen::MatrixXd x_train = task.half_points(task.train_idx);
  const Eigen::MatrixXd x_val = task.half_points(task.val_idx);
  const std::vector<int> y_train = task.half_labels(task.train_idx);
  const std::vector<int> y_val = task.half_labels(task.val_idx);
  const Eigen::Index D = state.config.embed_dim;

  const std::vector<EmbeddingPosterior> posts_train = embed_points(x_train, state);
  const std::vector<EmbeddingPosterior> posts_val = embed_points(x_val, state);

  EstepOptions estep_options;
  estep_options.threshold = state.config.estep_threshold;
  estep_options.max_iters = state.config.estep_max_iters;
  const EstepResult estep = run_estep(posts_train, state.themes, estep_options);

  const Eigen::MatrixXd logliks_val = expected_loglik_matrix(posts_val, state.themes);
  const Eigen::ArrayXd log_pi = expected_log_pi(estep.posterior.gamma);
  const Eigen::MatrixXd r_val = compute_responsibilities(logliks_val, log_pi);
  TaskPosterior posterior(estep.posterior.gamma, r_val);

  TaskObjectiveResult result{0.0,
                             {},
                             posterior,
                             state.config.stats_from_train_half ? posts_train : posts_val,
                             state.config.stats_from_train_half ? estep.posterior : posterior};

  if (state.config.identity_embedding) {
    result.eval.elbo = lda_elbo(logliks_val, state.themes, posterior);
    result.eval.value = state.config.weights.lda * result.eval.elbo.total;
    result.value = result.eval.value;
    return result;
  }

  Eigen::MatrixXd noise_train = rng.normal_matrix(D, x_train.cols());
  Eigen::MatrixXd noise_val = rng.normal_matrix(D, x_val.cols());
  ObjectiveContext context{r_val, estep.posterior.gamma, std::move(noise_train),
                           std::move(noise_val), state.config.weights};
  result.eval = evaluate_task_objective(state.encoder, state.decoder, state.themes, x_train,
                                        y_train, x_val, y_val, context, /*with_grads=*/true);
  result.value = result.eval.value;
  return result;
}

ModelState initialize_model(const std::vector<TaskDataset>& warmup, const TrainConfig& config,
                            RandomSource& rng) {
  config.validate();
  if (warmup.empty()) {
    throw std::invalid_argument("initialize_model: need at least one warm-up task");
  }
  const int data_dim = static_cast<int>(warmup.front().data_dim());
  DenseNetwork encoder = DenseNetwork::randomized(encoder_widths(config, data_dim), rng);
  DenseNetwork decoder = DenseNetwork::randomized(mirrored_decoder_widths(config, data_dim), rng);

  ModelState state{ThemeSet({TaskTheme(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1))},
                            DirichletParams(Eigen::ArrayXd::Ones(1))),
                   std::move(encoder),
                   std::move(decoder),
                   {},
                   {},
                   0,
                   config};

  // Warm-up encoding pass for the embedding scale.
  double sum_sq = 0.0;
  long count = 0;
  for (const auto& task : warmup) {
    const std::vector<EmbeddingPosterior> posts = embed_points(task.all_points(), state);
    for (const auto& post : posts) {
      sum_sq += post.m.squaredNorm();
      count += post.m.size();
    }
  }
  double scale = count > 0 ? std::sqrt(sum_sq / static_cast<double>(count)) : 1.0;
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;

  const Eigen::Index D = config.embed_dim;
  std::vector<TaskTheme> themes;
  themes.reserve(static_cast<size_t>(config.num_themes));
  for (int k = 0; k < config.num_themes; ++k) {
    themes.push_back(
        TaskTheme::regularized(scale * rng.normal_vector(D), Eigen::MatrixXd::Identity(D, D)));
  }
  state.themes = ThemeSet(std::move(themes),
                          DirichletParams(Eigen::ArrayXd::Constant(config.num_themes,
                                                                   config.alpha_init)));
  state.encoder_adam = make_adam(state.encoder, config.adam_step_size);
  state.decoder_adam = make_adam(state.decoder, config.adam_step_size);
  return state;
}

double train_minibatch(const std::vector<const TaskDataset*>& batch, ModelState& state,
                       RandomSource& rng) {
  if (batch.empty()) {
    throw std::invalid_argument("train_minibatch: empty batch");
  }
  std::vector<TaskStatsEntry> stats_entries;
  std::vector<TaskObjectiveResult> results;
  for (size_t t = 0; t < batch.size(); ++t) {
    try {
      results.push_back(task_objective(*batch[t], state, rng));
    } catch (const DegeneracyError& err) {
      if (log_level() >= LogLevel::Info) {
        std::clog << "[ttm] warning: skipping degenerate task " << t << ": " << err.what()
                  << "\n";
      }
    }
  }
  if (results.empty()) {
    throw DegeneracyError("train_minibatch: every task in the batch was degenerate");
  }

  const double inv = 1.0 / static_cast<double>(results.size());
  if (!state.config.identity_embedding) {
    DenseNetwork::Grads enc_grads = state.encoder.zero_grads();
    DenseNetwork::Grads dec_grads = state.decoder.zero_grads();
    for (const auto& result : results) {
      for (size_t l = 0; l < enc_grads.weights.size(); ++l) {
        enc_grads.weights[l] += inv * result.eval.encoder_grads.weights[l];
        enc_grads.biases[l] += inv * result.eval.encoder_grads.biases[l];
      }
      for (size_t l = 0; l < dec_grads.weights.size(); ++l) {
        dec_grads.weights[l] += inv * result.eval.decoder_grads.weights[l];
        dec_grads.biases[l] += inv * result.eval.decoder_grads.biases[l];
      }
    }
    adam_step(state.encoder, enc_grads, state.encoder_adam);
    adam_step(state.decoder, dec_grads, state.decoder_adam);
  }

  for (auto& result : results) {
    stats_entries.emplace_back(std::move(result.stats_posts),
                               std::move(result.stats_posterior));
  }
  const SufficientStats stats = accumulate_stats(stats_entries);

  LocalUpdate locals;
  locals.themes = local_theme_mle(stats);
  if (state.config.alpha_step_per_task) {
    Eigen::ArrayXd mean_step = Eigen::ArrayXd::Zero(state.themes.size());
    for (const auto& gamma : stats.gamma_list) {
      SufficientStats single;
      single.gamma_list = {gamma};
      single.task_count = 1;
      mean_step += alpha_newton_step(state.themes.alpha(), single).step;
    }
    locals.alpha_step = mean_step / static_cast<double>(stats.gamma_list.size());
  } else {
    locals.alpha_step = alpha_newton_step(state.themes.alpha(), stats).step;
  }

  const double rho = learning_rate(state.step, state.config.tau0, state.config.tau1);
  state.themes = online_blend(state.themes, locals, rho);
  state.step += 1;

  double mean_value = 0.0;
  for (const auto& result : results) mean_value += result.value;
  return mean_value / static_cast<double>(results.size());
}

TaskDataset generate_synthetic_task(const ThemeSet& themes, int n_points, RandomSource& rng,
                                    const SynthOptions& options) {
  if (n_points < 2) {
    throw std::invalid_argument("generate_synthetic_task: need at least two points");
  }
  const Eigen::Index D = themes.dim();
  int data_dim = options.data_dim;
  if (options.decode) {
    if (options.decoder == nullptr) {
      throw std::invalid_argument("generate_synthetic_task: decode mode needs a decoder");
    }
    data_dim = options.decoder->output_width();
  } else if (data_dim == 0) {
    data_dim = static_cast<int>(D);
  }

  const Eigen::VectorXd pi = rng.dirichlet(themes.alpha().array());
  Eigen::MatrixXd points(n_points, data_dim);
  std::vector<int> labels(static_cast<size_t>(n_points));
  for (int n = 0; n < n_points; ++n) {
    double draw = rng.uniform();
    Eigen::Index z = 0;
    double cumulative = 0.0;
    for (Eigen::Index k = 0; k < themes.size(); ++k) {
      cumulative += pi[k];
      if (draw <= cumulative) {
        z = k;
        break;
      }
      z = k;  // numerical slack: the last theme absorbs round-off
    }
    labels[static_cast<size_t>(n)] = static_cast<int>(z);
    const TaskTheme& theme = themes.theme(z);
    const Eigen::VectorXd u = theme.mean() + theme.factor() * rng.normal_vector(D);
    if (options.decode) {
      Eigen::VectorXd x = options.decoder->evaluate(u);
      for (Eigen::Index p = 0; p < x.size(); ++p) {
        points(n, p) = std::min(std::max(logistic(x[p]), 1e-6), 1.0 - 1e-6);
      }
    } else {
      for (int p = 0; p < data_dim; ++p) {
        points(n, p) = p < D ? logistic(u[p]) : 0.5;
      }
    }
  }
  return TaskDataset::with_split(std::move(points), std::move(labels));
}

ModelState train(const std::vector<TaskDataset>& corpus, const TrainConfig& config) {
  config.validate();
  if (corpus.empty()) {
    throw std::invalid_argument("train: empty corpus");
  }
  RandomSource rng(config.seed);

  std::vector<TaskDataset> warmup;
  const size_t warmup_count = std::min<size_t>(corpus.size(), static_cast<size_t>(config.batch_size));
  warmup.assign(corpus.begin(), corpus.begin() + static_cast<long>(warmup_count));
  ModelState state = initialize_model(warmup, config, rng);

  long consumed = 0;
  size_t cursor = 0;
  double window_sum = 0.0;
  long window_count = 0;
  while (consumed < config.episodes) {
    std::vector<const TaskDataset*> batch;
    const long remaining = config.episodes - consumed;
    const long take = std::min<long>(remaining, config.batch_size);
    for (long i = 0; i < take; ++i) {
      batch.push_back(&corpus[cursor]);
      cursor = (cursor + 1) % corpus.size();
    }
    consumed += take;
    try {
      window_sum += train_minibatch(batch, state, rng);
      window_count += 1;
    } catch (const DegeneracyError& err) {
      if (log_level() >= LogLevel::Info) {
        std::clog << "[ttm] warning: batch skipped entirely: " << err.what() << "\n";
      }
      continue;
    }
    if (log_level() >= LogLevel::Info && window_count > 0 &&
        (state.step % 1000 == 0 || consumed >= config.episodes)) {
      std::clog << "[ttm] batch " << state.step << " mean-objective "
                << window_sum / static_cast<double>(window_count) << " rho "
                << learning_rate(state.step - 1, config.tau0, config.tau1) << " alpha [";
      for (Eigen::Index k = 0; k < state.themes.alpha().size(); ++k) {
        std::clog << (k > 0 ? " " : "") << state.themes.alpha()[k];
      }
      std::clog << "]\n";
      window_sum = 0.0;
      window_count = 0;
    }
  }
  return state;
}

}  // namespace ttm
