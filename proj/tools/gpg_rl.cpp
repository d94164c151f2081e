// Command-line front end: training runs, evaluations, parallel-environment
// sweeps, binning ablations and oracle checks, with CSV metric emission.
//
// Exit codes: 0 success, 2 usage/config error, 3 numerical abort or failed
// oracle assertion, 4 I/O error.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gpg/checkpoint.hpp"
#include "gpg/config.hpp"
#include "gpg/csv.hpp"
#include "gpg/oracle_checks.hpp"
#include "gpg/trainer.hpp"

namespace fs = std::filesystem;
using namespace gpg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

std::string output_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("GPG_RL_OUT"); env && *env) return env;
  return "out";
}

// Directory label for an algorithm arm; GPG arms are distinguished by their
// binning so ablation runs land in separate directories.
std::string algo_label(const TrainConfig& cfg) {
  if (cfg.algorithm != Algorithm::gpg) return to_string(cfg.algorithm);
  std::string binning = to_string(cfg.binning);
  for (char& c : binning)
    if (c == ':') c = '_';
  return "gpg-" + binning;
}

fs::path run_directory(const std::string& root, const TrainConfig& cfg) {
  return fs::path(root) / cfg.env_id / algo_label(cfg) / std::to_string(cfg.num_envs) /
         std::to_string(cfg.seed);
}

CheckpointData checkpoint_from_trainer(const Trainer& trainer) {
  CheckpointData data;
  data.env_id = trainer.config().env_id;
  data.algorithm = to_string(trainer.config().algorithm);
  data.arch = trainer.policy().arch();
  data.theta = trainer.policy().params();
  data.policy_opt = trainer.optimizer_state();
  data.has_value = trainer.has_value_net();
  if (data.has_value) {
    const ValueNet& net = trainer.value_net();
    data.value_one_hot = net.one_hot_input();
    data.value_input_dim = net.mlp().input_dim();
    data.value_hidden = net.mlp().hidden();
    data.phi = net.params();
    data.value_opt = trainer.value_optimizer_state();
  }
  data.iteration = trainer.iteration();
  data.env_steps = trainer.env_steps();
  data.seed = trainer.config().seed;
  return data;
}

void restore_trainer(Trainer& trainer, const CheckpointData& data) {
  if (data.env_id != trainer.config().env_id)
    throw IoError("checkpoint is for env '" + data.env_id + "', config requests '" +
                  trainer.config().env_id + "'");
  if (data.algorithm != to_string(trainer.config().algorithm))
    throw IoError("checkpoint is for algorithm '" + data.algorithm + "', config requests '" +
                  to_string(trainer.config().algorithm) + "'");
  if (data.theta.size() != trainer.policy().param_count())
    throw IoError("checkpoint theta has " + std::to_string(data.theta.size()) +
                  " parameters, expected " + std::to_string(trainer.policy().param_count()));
  trainer.policy().params() = data.theta;
  trainer.optimizer_state() = data.policy_opt;
  if (data.has_value != trainer.has_value_net())
    throw IoError("checkpoint/config disagree about the value network");
  if (data.has_value) {
    if (data.phi.size() != trainer.value_net().param_count())
      throw IoError("checkpoint phi size mismatch");
    trainer.value_net().params() = data.phi;
    trainer.value_optimizer_state() = data.value_opt;
  }
  trainer.restore_counters(data.iteration, data.env_steps);
}

struct RunOutcome {
  std::string status = "ok";
  double eval_mean = 0.0;
  double eval_std = 0.0;
  fs::path directory;
};

// One end-to-end training run: metrics.csv per iteration, checkpoint.bin,
// config.resolved, final_eval.csv. Resumes from an existing checkpoint when
// `resume` is set.
RunOutcome run_training(const TrainConfig& cfg, const std::string& root,
                        const std::string& resume = {}, bool quiet = false) {
  RunOutcome outcome;
  const fs::path dir = run_directory(root, cfg);
  outcome.directory = dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());

  {
    std::ofstream resolved(dir / "config.resolved");
    if (!resolved) throw IoError("cannot write " + (dir / "config.resolved").string());
    resolved << serialize_config(cfg);
  }

  Trainer trainer(cfg);
  const bool resuming = !resume.empty();
  if (resuming) restore_trainer(trainer, load_checkpoint(resume));

  const fs::path metrics_path = dir / "metrics.csv";
  std::ofstream metrics(metrics_path, resuming ? std::ios::app : std::ios::out);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  if (!resuming) metrics << metrics_csv_header() << '\n';

  try {
    while (trainer.iteration() < cfg.iterations) {
      const IterationMetrics m = trainer.train_iteration();
      metrics << metrics_csv_row(m) << '\n';
      metrics.flush();
      if (!quiet && (m.iteration + 1) % 25 == 0)
        std::cout << "[" << cfg.env_id << "/" << algo_label(cfg) << "/" << cfg.num_envs << "/s"
                  << cfg.seed << "] iteration " << m.iteration + 1 << "/" << cfg.iterations
                  << " mean_return " << m.mean_return << '\n';
    }
  } catch (const NumericalError& e) {
    const fs::path diag = dir / "diagnostics.txt";
    std::ofstream d(diag);
    d << "numerical abort at iteration " << trainer.iteration() << "\n"
      << e.what() << "\n\nresolved config:\n"
      << serialize_config(cfg);
    save_checkpoint(checkpoint_from_trainer(trainer), (dir / "checkpoint.bin").string());
    throw NumericalError(std::string(e.what()) + " (diagnostics: " + diag.string() + ")");
  }

  save_checkpoint(checkpoint_from_trainer(trainer), (dir / "checkpoint.bin").string());

  const EvalResult eval = trainer.run_evaluation();
  outcome.eval_mean = eval.mean;
  outcome.eval_std = eval.std_dev;
  {
    std::ofstream out(dir / "final_eval.csv");
    out << "env,algorithm,num_envs,seed,eval_mean,eval_std\n"
        << cfg.env_id << ',' << algo_label(cfg) << ',' << cfg.num_envs << ',' << cfg.seed << ','
        << format_double(eval.mean) << ',' << format_double(eval.std_dev) << '\n';
  }
  if (!quiet)
    std::cout << "[" << cfg.env_id << "/" << algo_label(cfg) << "/" << cfg.num_envs << "/s"
              << cfg.seed << "] final eval " << eval.mean << " +- " << eval.std_dev << '\n';
  return outcome;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) items.push_back(item);
  return items;
}

std::vector<int> split_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const auto& item : split_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(what + ": expected a comma-separated integer list, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

void apply_extras(TrainConfig& cfg, const std::vector<std::string>& extras) {
  for (const auto& kv : extras) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + kv + "' is not of the form key=value");
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

struct SweepJob {
  TrainConfig cfg;
  RunOutcome outcome;
  bool failed = false;
  std::string error;
};

// Runs jobs on `threads` workers; each run is internally deterministic and
// writes to its own directory, so scheduling order cannot change results.
void execute_jobs(std::vector<SweepJob>& jobs, const std::string& root, int threads) {
  std::atomic<std::size_t> next{0};
  std::mutex io_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t index = next.fetch_add(1);
      if (index >= jobs.size()) return;
      SweepJob& job = jobs[index];
      try {
        job.outcome = run_training(job.cfg, root, {}, true);
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cout << job.cfg.env_id << '/' << algo_label(job.cfg) << '/' << job.cfg.num_envs
                  << "/s" << job.cfg.seed << ": final eval " << job.outcome.eval_mean << " +- "
                  << job.outcome.eval_std << '\n';
      } catch (const std::exception& e) {
        job.failed = true;
        job.error = e.what();
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cerr << job.cfg.env_id << '/' << algo_label(job.cfg) << '/' << job.cfg.num_envs
                  << "/s" << job.cfg.seed << ": FAILED: " << e.what() << '\n';
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

void write_runs_csv(const fs::path& path, const std::vector<SweepJob>& jobs,
                    const std::string& arm_field) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "env," << arm_field << ",num_envs,seed,status,eval_mean,eval_std\n";
  for (const auto& job : jobs)
    out << job.cfg.env_id << ','
        << (arm_field == "binning" ? to_string(job.cfg.binning) : algo_label(job.cfg)) << ','
        << job.cfg.num_envs << ',' << job.cfg.seed << ',' << (job.failed ? "failed" : "ok") << ','
        << format_double(job.outcome.eval_mean) << ',' << format_double(job.outcome.eval_std)
        << '\n';
}

// Aggregates per-(env, arm, num_envs) mean/std of the per-seed final
// evaluation means. Recomputable from the per-run final_eval.csv files.
void write_summary_csv(const fs::path& path, const std::vector<SweepJob>& jobs,
                       const std::string& arm_field) {
  struct Key {
    std::string env, arm;
    int num_envs;
    bool operator<(const Key& o) const {
      return std::tie(env, arm, num_envs) < std::tie(o.env, o.arm, o.num_envs);
    }
  };
  std::map<Key, std::vector<double>> cells;
  for (const auto& job : jobs) {
    if (job.failed) continue;
    const std::string arm =
        arm_field == "binning" ? to_string(job.cfg.binning) : algo_label(job.cfg);
    cells[{job.cfg.env_id, arm, job.cfg.num_envs}].push_back(job.outcome.eval_mean);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "env," << arm_field << ",num_envs,n_seeds,mean_return,std_return\n";
  for (const auto& [key, values] : cells) {
    const auto [mean, std_dev] = mean_std_population(values);
    out << key.env << ',' << key.arm << ',' << key.num_envs << ',' << values.size() << ','
        << format_double(mean) << ',' << format_double(std_dev) << '\n';
  }
}

int cmd_oracle_check(const std::string& out_flag, int repetitions) {
  const std::string root = output_root(out_flag);
  std::error_code ec;
  fs::create_directories(root, ec);
  const std::vector<CheckResult> results = run_oracle_checks(repetitions);

  std::vector<ConsistencyReport> all_reports;
  for (const auto& r : results)
    for (const auto& rep : r.reports) all_reports.push_back(rep);
  const fs::path csv_path = fs::path(root) / "oracle_report.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  write_consistency_csv(csv, all_reports);

  bool all_passed = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << '\n';
    all_passed = all_passed && r.passed;
  }
  std::cout << "report: " << csv_path.string() << '\n';
  return all_passed ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Critic-free group policy gradients: training and verification harness"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "Run one training configuration");
  std::string train_config, train_env, train_algo, train_binning, train_out, train_resume;
  int train_num_envs = 0, train_threads = 1;
  long train_iterations = -1;
  std::int64_t train_seed = -1;
  std::vector<std::string> train_extras;
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--env", train_env, "environment id");
  train->add_option("--algo", train_algo, "gpg | ppo | grpo-outcome");
  train->add_option("--binning", train_binning, "universal|time|spatial:<eps>|spatialtime:<eps>|state");
  train->add_option("--num-envs", train_num_envs, "parallel environments (group size)");
  train->add_option("--seeds,--seed", train_seed, "training seed");
  train->add_option("--iterations", train_iterations, "training iterations");
  train->add_option("--out", train_out, "output root (default $GPG_RL_OUT or ./out)");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--threads", train_threads, "accepted for interface parity; training is single-threaded");
  train->add_option("overrides", train_extras, "extra key=value overrides");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpointed policy");
  std::string eval_checkpoint, eval_env, eval_out;
  int eval_n_seeds = 5;
  eval_cmd->add_option("checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--env", eval_env, "environment id (default: the checkpoint's)");
  eval_cmd->add_option("--seeds", eval_n_seeds, "number of evaluation seeds");
  eval_cmd->add_option("--out", eval_out, "append the result row to <out>/eval.csv");

  // ---- sweep ----
  auto* sweep = app.add_subcommand("sweep", "Cross product of env x algorithm x num_envs x seed");
  std::string sweep_config, sweep_envs = "cartpole", sweep_algos = "gpg,ppo";
  std::string sweep_num_envs = "1,4,16,32", sweep_seeds = "1,2,3,4", sweep_binning = "time";
  std::string sweep_out;
  long sweep_iterations = -1;
  int sweep_threads = 1;
  std::vector<std::string> sweep_extras;
  sweep->add_option("--config", sweep_config, "key=value config file for shared settings");
  sweep->add_option("--env", sweep_envs, "comma-separated environment ids");
  sweep->add_option("--algo", sweep_algos, "comma-separated algorithms");
  sweep->add_option("--num-envs", sweep_num_envs, "comma-separated group sizes");
  sweep->add_option("--seeds", sweep_seeds, "comma-separated training seeds");
  sweep->add_option("--binning", sweep_binning, "binning for the gpg arms");
  sweep->add_option("--iterations", sweep_iterations, "training iterations per run");
  sweep->add_option("--out", sweep_out, "output root");
  sweep->add_option("--threads", sweep_threads, "parallel runs");
  sweep->add_option("overrides", sweep_extras, "extra key=value overrides");

  // ---- ablate-binning ----
  auto* ablate = app.add_subcommand("ablate-binning", "Compare binning functions under GPG");
  std::string ab_config, ab_env = "pointmass", ab_binnings = "universal,time,spatial:0.5,spatialtime:0.5";
  std::string ab_num_envs = "16", ab_seeds = "1,2,3,4", ab_out;
  long ab_iterations = -1;
  int ab_threads = 1;
  std::vector<std::string> ab_extras;
  ablate->add_option("--config", ab_config, "key=value config file for shared settings");
  ablate->add_option("--env", ab_env, "environment id");
  ablate->add_option("--binning", ab_binnings, "comma-separated binning specs");
  ablate->add_option("--num-envs", ab_num_envs, "comma-separated group sizes");
  ablate->add_option("--seeds", ab_seeds, "comma-separated training seeds");
  ablate->add_option("--iterations", ab_iterations, "training iterations per run");
  ablate->add_option("--out", ab_out, "output root");
  ablate->add_option("--threads", ab_threads, "parallel runs");
  ablate->add_option("overrides", ab_extras, "extra key=value overrides");

  // ---- oracle-check ----
  auto* oracle = app.add_subcommand("oracle-check", "Exact-gradient consistency experiments");
  std::string oracle_out;
  int oracle_reps = 20;
  oracle->add_option("--out", oracle_out, "output root for oracle_report.csv");
  oracle->add_option("--reps", oracle_reps, "repetitions per group size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) {
      TrainConfig cfg;
      if (!train_config.empty()) cfg = load_train_config(train_config);
      if (!train_env.empty()) cfg.env_id = train_env;
      if (!train_algo.empty()) cfg.algorithm = parse_algorithm(train_algo);
      if (!train_binning.empty()) cfg.binning = parse_binning(train_binning);
      if (train_num_envs > 0) cfg.num_envs = train_num_envs;
      if (train_seed >= 0) cfg.seed = static_cast<std::uint64_t>(train_seed);
      if (train_iterations >= 0) cfg.iterations = train_iterations;
      apply_extras(cfg, train_extras);
      cfg.validate();
      run_training(cfg, output_root(train_out), train_resume);
      return 0;
    }

    if (*eval_cmd) {
      const CheckpointData data = load_checkpoint(eval_checkpoint);
      const std::string env_id = eval_env.empty() ? data.env_id : eval_env;
      auto env = make_env(env_id);
      const PolicyModel policy = policy_from_checkpoint(data);
      // Architecture/environment compatibility: dimensions must line up.
      const PolicyArch expected = default_policy_arch(
          env->spec(), data.arch.hidden,
          data.arch.head == HeadKind::tabular_softmax ? "tabular" : "mlp");
      if (expected.head != data.arch.head || expected.input_dim != data.arch.input_dim ||
          expected.action_dim != data.arch.action_dim)
        throw IoError("checkpoint does not fit env '" + env_id + "': expected head " +
                      to_string(expected.head) + " in=" + std::to_string(expected.input_dim) +
                      " out=" + std::to_string(expected.action_dim) + ", found head " +
                      to_string(data.arch.head) + " in=" + std::to_string(data.arch.input_dim) +
                      " out=" + std::to_string(data.arch.action_dim));
      const EvalResult result = evaluate(policy, *env, eval_n_seeds);
      std::cout << env_id << ": " << result.mean << " +- " << result.std_dev << " over "
                << eval_n_seeds << " evaluation seeds\n";
      std::cout << "env,checkpoint,n_seeds,eval_mean,eval_std\n"
                << env_id << ',' << eval_checkpoint << ',' << eval_n_seeds << ','
                << format_double(result.mean) << ',' << format_double(result.std_dev) << '\n';
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        const fs::path path = fs::path(eval_out) / "eval.csv";
        const bool fresh = !fs::exists(path);
        std::ofstream out(path, std::ios::app);
        if (!out) throw IoError("cannot write " + path.string());
        if (fresh) out << "env,checkpoint,n_seeds,eval_mean,eval_std\n";
        out << env_id << ',' << eval_checkpoint << ',' << eval_n_seeds << ','
            << format_double(result.mean) << ',' << format_double(result.std_dev) << '\n';
      }
      return 0;
    }

    if (*sweep) {
      TrainConfig base;
      if (!sweep_config.empty()) base = load_train_config(sweep_config);
      if (sweep_iterations >= 0) base.iterations = sweep_iterations;
      if (!sweep_binning.empty()) base.binning = parse_binning(sweep_binning);
      apply_extras(base, sweep_extras);
      std::vector<SweepJob> jobs;
      for (const auto& env : split_list(sweep_envs))
        for (const auto& algo : split_list(sweep_algos))
          for (int n : split_int_list(sweep_num_envs, "--num-envs"))
            for (int seed : split_int_list(sweep_seeds, "--seeds")) {
              SweepJob job;
              job.cfg = base;
              job.cfg.env_id = env;
              job.cfg.algorithm = parse_algorithm(algo);
              job.cfg.num_envs = n;
              job.cfg.seed = static_cast<std::uint64_t>(seed);
              job.cfg.validate();
              jobs.push_back(std::move(job));
            }
      const std::string root = output_root(sweep_out);
      execute_jobs(jobs, root, sweep_threads);
      write_runs_csv(fs::path(root) / "runs.csv", jobs, "algorithm");
      write_summary_csv(fs::path(root) / "summary.csv", jobs, "algorithm");
      std::cout << "summary: " << (fs::path(root) / "summary.csv").string() << '\n';
      for (const auto& job : jobs)
        if (job.failed) return kExitNumerical;
      return 0;
    }

    if (*ablate) {
      TrainConfig base;
      if (!ab_config.empty()) base = load_train_config(ab_config);
      base.algorithm = Algorithm::gpg;
      if (ab_iterations >= 0) base.iterations = ab_iterations;
      apply_extras(base, ab_extras);
      // Early validation so a bad binning/env combination is a usage error
      // before any run starts.
      auto probe_env = make_env(ab_env);
      for (const auto& spec : split_list(ab_binnings)) {
        const BinningConfig binning = parse_binning(spec);
        const bool discrete = probe_env->spec().obs_kind == ObsKind::discrete;
        if ((binning.kind == BinningKind::spatial || binning.kind == BinningKind::spatial_time) &&
            discrete)
          throw ConfigError("spatial binning requires real-vector observations; env '" + ab_env +
                            "' is discrete");
        if (binning.kind == BinningKind::discrete_state && !discrete)
          throw ConfigError("state binning requires discrete observations; env '" + ab_env +
                            "' is continuous");
      }
      std::vector<SweepJob> jobs;
      for (const auto& spec : split_list(ab_binnings))
        for (int n : split_int_list(ab_num_envs, "--num-envs"))
          for (int seed : split_int_list(ab_seeds, "--seeds")) {
            SweepJob job;
            job.cfg = base;
            job.cfg.env_id = ab_env;
            job.cfg.binning = parse_binning(spec);
            job.cfg.num_envs = n;
            job.cfg.seed = static_cast<std::uint64_t>(seed);
            job.cfg.validate();
            jobs.push_back(std::move(job));
          }
      const std::string root = output_root(ab_out);
      execute_jobs(jobs, root, ab_threads);
      write_runs_csv(fs::path(root) / "ablation_runs.csv", jobs, "binning");
      write_summary_csv(fs::path(root) / "ablation.csv", jobs, "binning");
      std::cout << "summary: " << (fs::path(root) / "ablation.csv").string() << '\n';
      for (const auto& job : jobs)
        if (job.failed) return kExitNumerical;
      return 0;
    }

    if (*oracle) return cmd_oracle_check(oracle_out, oracle_reps);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
