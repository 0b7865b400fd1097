#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ttm/analytics.hpp"
#include "ttm/errors.hpp"
#include "ttm/io.hpp"

namespace ttm {

namespace {

ThemeSet seeded_themes(int K, int D, double alpha, double mean_scale, RandomSource& rng) {
  std::vector<TaskTheme> themes;
  themes.reserve(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    themes.push_back(TaskTheme::regularized(mean_scale * rng.normal_vector(D),
                                            Eigen::MatrixXd::Identity(D, D)));
  }
  return ThemeSet(std::move(themes), DirichletParams(Eigen::ArrayXd::Constant(K, alpha)));
}

SelectionPolicy build_policy(const std::string& name, std::uint64_t seed,
                             const std::vector<TaskRepresentation>& references) {
  if (name == "entropy-max") return SelectionPolicy::entropy_max();
  if (name == "kl-min") return SelectionPolicy::kl_min(references);
  if (name == "max-loss") return SelectionPolicy::max_loss();
  return SelectionPolicy::random(seed);
}

std::string representation_csv(const std::vector<TaskRepresentation>& reps) {
  std::ostringstream out;
  out << "task,entropy";
  const Eigen::Index K = reps.front().gamma.size();
  for (Eigen::Index k = 0; k < K; ++k) out << ",gamma_" << k;
  out << '\n';
  for (const auto& rep : reps) {
    out << rep.source_id << ',' << format_double(rep.entropy);
    for (Eigen::Index k = 0; k < K; ++k) out << ',' << format_double(rep.gamma[k]);
    out << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ParseError("cannot open " + path.string() + " for writing");
  }
  out << text;
}

std::vector<TaskRepresentation> represent_corpus(const CorpusFile& corpus,
                                                 const ModelState& state) {
  std::vector<TaskRepresentation> reps;
  reps.reserve(corpus.tasks.size());
  for (size_t i = 0; i < corpus.tasks.size(); ++i) {
    reps.push_back(represent_task(corpus.tasks[i], state, {}, std::to_string(i)));
  }
  return reps;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Gaussian task-theme modelling engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Emit a synthetic corpus from configured themes");
  std::string synth_output;
  std::string synth_checkpoint;
  int synth_tasks = 100, synth_points = 20, synth_themes = 3, synth_embed = 2, synth_data = 0;
  double synth_alpha = 1.1, synth_scale = 4.0;
  std::uint64_t synth_seed = 0;
  bool synth_jsonl = false;
  synth->add_option("--output", synth_output, "Corpus file to write")->required();
  synth->add_option("--tasks", synth_tasks, "Number of tasks");
  synth->add_option("--points", synth_points, "Points per task");
  synth->add_option("--themes", synth_themes, "Number of generating themes");
  synth->add_option("--embed-dim", synth_embed, "Embedding dimension");
  synth->add_option("--data-dim", synth_data, "Data dimension (defaults to embed-dim)");
  synth->add_option("--alpha", synth_alpha, "Symmetric Dirichlet concentration");
  synth->add_option("--mean-scale", synth_scale, "Scale of the random theme means");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--checkpoint", synth_checkpoint,
                    "Generate from a trained model's themes and decoder");
  synth->add_flag("--jsonl", synth_jsonl, "Write the line-delimited JSON format");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model on a corpus");
  std::string train_corpus, train_output, train_config_path;
  TrainConfig cli_config;
  auto* opt_themes = train_cmd->add_option("--themes", cli_config.num_themes, "Task themes K");
  auto* opt_embed = train_cmd->add_option("--embed-dim", cli_config.embed_dim, "Embedding dim D");
  auto* opt_alpha = train_cmd->add_option("--alpha", cli_config.alpha_init, "Initial alpha");
  auto* opt_tau0 = train_cmd->add_option("--tau0", cli_config.tau0, "Schedule offset");
  auto* opt_tau1 = train_cmd->add_option("--tau1", cli_config.tau1, "Schedule exponent");
  auto* opt_batch = train_cmd->add_option("--batch", cli_config.batch_size, "Tasks per batch");
  auto* opt_episodes = train_cmd->add_option("--episodes", cli_config.episodes, "Tasks to consume");
  auto* opt_thresh = train_cmd->add_option("--estep-threshold", cli_config.estep_threshold,
                                           "E-step convergence threshold");
  auto* opt_iters = train_cmd->add_option("--estep-iters", cli_config.estep_max_iters,
                                          "E-step iteration cap");
  auto* opt_adam = train_cmd->add_option("--adam-step", cli_config.adam_step_size,
                                         "Adam step size");
  auto* opt_seed = train_cmd->add_option("--seed", cli_config.seed, "Random seed");
  auto* opt_hidden = train_cmd->add_option("--hidden", cli_config.encoder_hidden,
                                           "Encoder hidden widths");
  auto* opt_identity = train_cmd->add_flag("--identity", cli_config.identity_embedding,
                                           "Identity embedding mode (bypass the networks)");
  auto* opt_stats_train = train_cmd->add_flag("--stats-train-half",
                                              cli_config.stats_from_train_half,
                                              "Pool training-half responsibilities");
  auto* opt_alpha_per_task = train_cmd->add_flag("--alpha-per-task",
                                                 cli_config.alpha_step_per_task,
                                                 "Average per-task alpha Newton steps");
  train_cmd->add_option("--corpus", train_corpus, "Corpus to train on")->required();
  train_cmd->add_option("--output", train_output, "Checkpoint to write")->required();
  train_cmd->add_option("--config", train_config_path, "Flat key = value configuration file");

  // represent
  auto* represent_cmd =
      app.add_subcommand("represent", "Write per-task gamma and entropy as CSV");
  std::string rep_checkpoint, rep_corpus, rep_output;
  represent_cmd->add_option("--checkpoint", rep_checkpoint, "Trained model")->required();
  represent_cmd->add_option("--corpus", rep_corpus, "Tasks to represent")->required();
  represent_cmd->add_option("--output", rep_output, "CSV file to write")->required();

  // distance
  auto* distance_cmd =
      app.add_subcommand("distance", "Write the pairwise task distance matrix as CSV");
  std::string dist_checkpoint, dist_corpus, dist_output;
  bool dist_log = false;
  distance_cmd->add_option("--checkpoint", dist_checkpoint, "Trained model")->required();
  distance_cmd->add_option("--corpus", dist_corpus, "Tasks to compare")->required();
  distance_cmd->add_option("--output", dist_output, "CSV file to write")->required();
  distance_cmd->add_flag("--log", dist_log, "Export ln(1e-12 + d) instead of d");

  // select
  auto* select_cmd = app.add_subcommand("select", "Choose tasks from a pool by policy");
  std::string sel_checkpoint, sel_pool, sel_policy, sel_reference, sel_output;
  int sel_count = 1;
  std::uint64_t sel_seed = 0;
  select_cmd->add_option("--checkpoint", sel_checkpoint, "Trained model")->required();
  select_cmd->add_option("--pool", sel_pool, "Candidate task corpus")->required();
  select_cmd->add_option("--policy", sel_policy, "Selection policy")
      ->required()
      ->check(CLI::IsMember({"entropy-max", "kl-min", "max-loss", "random"}));
  select_cmd->add_option("--reference", sel_reference, "Reference corpus for kl-min");
  select_cmd->add_option("--count", sel_count, "How many tasks to choose");
  select_cmd->add_option("--seed", sel_seed, "Seed for the random policy");
  select_cmd->add_option("--output", sel_output, "Write chosen indices here instead of stdout");

  // simulate
  auto* simulate_cmd = app.add_subcommand("simulate", "Run the lifelong selection loop");
  std::string sim_checkpoint, sim_pool, sim_eval, sim_policy, sim_output, sim_reference;
  long sim_steps = 100;
  int sim_pool_size = 200;
  long sim_cadence = 10;
  std::uint64_t sim_seed = 0;
  double sim_ewma = 0.98, sim_learner_step = 2e-4;
  simulate_cmd->add_option("--checkpoint", sim_checkpoint, "Trained model")->required();
  simulate_cmd->add_option("--pool", sim_pool, "Task stream for the pool")->required();
  simulate_cmd->add_option("--eval", sim_eval, "Held-out evaluation corpus")->required();
  simulate_cmd->add_option("--policy", sim_policy, "Selection policy")
      ->required()
      ->check(CLI::IsMember({"entropy-max", "kl-min", "max-loss", "random"}));
  simulate_cmd->add_option("--reference", sim_reference,
                           "Reference corpus for kl-min (defaults to --eval)");
  simulate_cmd->add_option("--steps", sim_steps, "Selection steps");
  simulate_cmd->add_option("--pool-size", sim_pool_size, "Pool capacity");
  simulate_cmd->add_option("--cadence", sim_cadence, "Evaluation cadence");
  simulate_cmd->add_option("--seed", sim_seed, "Random seed");
  simulate_cmd->add_option("--ewma-weight", sim_ewma, "EWMA smoothing weight");
  simulate_cmd->add_option("--learner-step", sim_learner_step, "Learner Adam step size");
  simulate_cmd->add_option("--output", sim_output, "CSV file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(synth)) {
      RandomSource rng(synth_seed);
      CorpusFile corpus;
      if (!synth_checkpoint.empty()) {
        const ModelState state = load_checkpoint(synth_checkpoint);
        corpus.data_dim = state.decoder.output_width();
        corpus.label_alphabet = static_cast<int>(state.themes.size());
        SynthOptions options;
        options.decode = true;
        options.decoder = &state.decoder;
        for (int t = 0; t < synth_tasks; ++t) {
          corpus.tasks.push_back(
              generate_synthetic_task(state.themes, synth_points, rng, options));
        }
      } else {
        const ThemeSet themes =
            seeded_themes(synth_themes, synth_embed, synth_alpha, synth_scale, rng);
        SynthOptions options;
        options.data_dim = synth_data > 0 ? synth_data : synth_embed;
        corpus.data_dim = options.data_dim;
        corpus.label_alphabet = synth_themes;
        for (int t = 0; t < synth_tasks; ++t) {
          corpus.tasks.push_back(generate_synthetic_task(themes, synth_points, rng, options));
        }
      }
      if (synth_jsonl) {
        save_corpus_jsonl(corpus, synth_output);
      } else {
        save_corpus(corpus, synth_output);
      }
      return 0;
    }

    if (app.got_subcommand(train_cmd)) {
      TrainConfig config = train_config_path.empty() ? TrainConfig{}
                                                     : load_train_config(train_config_path);
      if (opt_themes->count()) config.num_themes = cli_config.num_themes;
      if (opt_embed->count()) config.embed_dim = cli_config.embed_dim;
      if (opt_alpha->count()) config.alpha_init = cli_config.alpha_init;
      if (opt_tau0->count()) config.tau0 = cli_config.tau0;
      if (opt_tau1->count()) config.tau1 = cli_config.tau1;
      if (opt_batch->count()) config.batch_size = cli_config.batch_size;
      if (opt_episodes->count()) config.episodes = cli_config.episodes;
      if (opt_thresh->count()) config.estep_threshold = cli_config.estep_threshold;
      if (opt_iters->count()) config.estep_max_iters = cli_config.estep_max_iters;
      if (opt_adam->count()) config.adam_step_size = cli_config.adam_step_size;
      if (opt_seed->count()) config.seed = cli_config.seed;
      if (opt_hidden->count()) config.encoder_hidden = cli_config.encoder_hidden;
      if (opt_identity->count()) config.identity_embedding = cli_config.identity_embedding;
      if (opt_stats_train->count()) config.stats_from_train_half = cli_config.stats_from_train_half;
      if (opt_alpha_per_task->count()) config.alpha_step_per_task = cli_config.alpha_step_per_task;
      const CorpusFile corpus = load_corpus(train_corpus);
      const ModelState state = train(corpus.tasks, config);
      save_checkpoint(state, train_output);
      return 0;
    }

    if (app.got_subcommand(represent_cmd)) {
      const ModelState state = load_checkpoint(rep_checkpoint);
      const CorpusFile corpus = load_corpus(rep_corpus);
      require_compatible(state, corpus);
      write_text(rep_output, representation_csv(represent_corpus(corpus, state)));
      return 0;
    }

    if (app.got_subcommand(distance_cmd)) {
      const ModelState state = load_checkpoint(dist_checkpoint);
      const CorpusFile corpus = load_corpus(dist_corpus);
      require_compatible(state, corpus);
      Eigen::MatrixXd distances = distance_matrix(represent_corpus(corpus, state));
      if (dist_log) distances = log_transform(distances);
      write_matrix_csv(dist_output, distances);
      return 0;
    }

    if (app.got_subcommand(select_cmd)) {
      const ModelState state = load_checkpoint(sel_checkpoint);
      const CorpusFile pool_corpus = load_corpus(sel_pool);
      require_compatible(state, pool_corpus);
      std::vector<TaskRepresentation> references;
      if (sel_policy == "kl-min") {
        if (sel_reference.empty()) {
          throw ConfigError("select: kl-min needs --reference");
        }
        const CorpusFile reference = load_corpus(sel_reference);
        require_compatible(state, reference);
        references = represent_corpus(reference, state);
      }
      SelectionPolicy policy = build_policy(sel_policy, sel_seed, references);

      TaskPool pool;
      pool.capacity = pool_corpus.tasks.size();
      std::vector<size_t> original;
      for (size_t i = 0; i < pool_corpus.tasks.size(); ++i) {
        pool.entries.emplace_back(pool_corpus.tasks[i],
                                  represent_task(pool_corpus.tasks[i], state, {},
                                                 std::to_string(i)));
        original.push_back(i);
      }
      std::ostringstream out;
      const int budget = std::min<int>(sel_count, static_cast<int>(pool.entries.size()));
      for (int c = 0; c < budget; ++c) {
        const size_t chosen = select_task(pool, policy, state);
        out << original[chosen] << '\n';
        pool.entries.erase(pool.entries.begin() + static_cast<long>(chosen));
        original.erase(original.begin() + static_cast<long>(chosen));
      }
      if (sel_output.empty()) {
        std::cout << out.str();
      } else {
        write_text(sel_output, out.str());
      }
      return 0;
    }

    if (app.got_subcommand(simulate_cmd)) {
      const ModelState state = load_checkpoint(sim_checkpoint);
      const CorpusFile pool_corpus = load_corpus(sim_pool);
      const CorpusFile eval_corpus = load_corpus(sim_eval);
      require_compatible(state, pool_corpus);
      require_compatible(state, eval_corpus);

      std::vector<TaskRepresentation> references;
      if (sim_policy == "kl-min") {
        if (sim_reference.empty()) {
          references = represent_corpus(eval_corpus, state);
        } else {
          const CorpusFile ref_corpus = load_corpus(sim_reference);
          require_compatible(state, ref_corpus);
          references = represent_corpus(ref_corpus, state);
        }
      }
      SelectionPolicy policy = build_policy(sim_policy, sim_seed, references);

      PrototypeLearner learner(state, sim_learner_step, sim_seed);
      LifelongHooks hooks = default_hooks(learner, eval_corpus.tasks);
      size_t cursor = 0;
      TaskSource source = [&pool_corpus, &cursor]() -> std::optional<TaskDataset> {
        if (cursor >= pool_corpus.tasks.size()) return std::nullopt;
        return pool_corpus.tasks[cursor++];
      };
      const LifelongReport report = run_lifelong(source, policy, state, hooks, sim_steps,
                                                 static_cast<size_t>(sim_pool_size),
                                                 sim_cadence);
      const std::vector<double> smoothed = ewma(report.accuracy, sim_ewma);
      std::ostringstream out;
      out << "step,accuracy,ewma\n";
      for (size_t i = 0; i < report.steps.size(); ++i) {
        out << report.steps[i] << ',' << format_double(report.accuracy[i]) << ','
            << format_double(smoothed[i]) << '\n';
      }
      write_text(sim_output, out.str());
      return 0;
    }
  } catch (const std::exception& err) {
    std::cerr << "ttm: " << err.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ttm
