#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "gpg/oracle.hpp"
#include "gpg/trainer.hpp"

namespace gpg {

// Named verification checks shared by the `oracle-check` CLI subcommand and
// the acceptance suite. Each check pins its tolerances here; nothing is
// deferred to callers.

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  std::vector<ConsistencyReport> reports;  // raw rows for CSV emission
};

// At theta == theta_old the clipped-surrogate gradient must equal the plain
// REINFORCE-form gradient mean_t A_t grad log pi: the clip and min are
// inactive. Checked on random models (all three heads) and random batches,
// relative L2 <= 1e-10.
inline CheckResult check_surrogate_identity(int pairs = 50, std::uint64_t seed = 21) {
  CheckResult result;
  result.name = "surrogate-identity";
  double worst = 0.0;
  for (int p = 0; p < pairs; ++p) {
    Rng rng(seed, static_cast<std::uint64_t>(p));
    PolicyArch arch;
    const int kind = p % 3;
    if (kind == 0) {
      arch.head = HeadKind::categorical;
      arch.input_dim = 2 + rng.uniform_int(4);
      arch.action_dim = 2 + rng.uniform_int(4);
      arch.hidden = {8, 8};
    } else if (kind == 1) {
      arch.head = HeadKind::gaussian;
      arch.input_dim = 2 + rng.uniform_int(4);
      arch.action_dim = 1 + rng.uniform_int(3);
      arch.hidden = {8};
    } else {
      arch.head = HeadKind::tabular_softmax;
      arch.input_dim = 3 + rng.uniform_int(5);
      arch.action_dim = 2 + rng.uniform_int(4);
    }
    PolicyModel model = arch.head == HeadKind::tabular_softmax
                            ? PolicyModel(arch)
                            : PolicyModel::initialized(arch, rng);
    if (arch.head == HeadKind::tabular_softmax)
      for (auto& v : model.params()) v = rng.normal();
    PolicyWorkspace ws = model.make_workspace();

    const int batch_size = 8 + rng.uniform_int(24);
    std::vector<StepRecord> steps(batch_size);
    std::vector<SurrogateSample> batch(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      StepRecord& step = steps[i];
      if (arch.head == HeadKind::tabular_softmax) {
        step.observation = rng.uniform_int(arch.input_dim);
      } else {
        std::vector<double> obs(arch.input_dim);
        for (auto& v : obs) v = rng.normal();
        step.observation = std::move(obs);
      }
      step.action = model.sample_action(step.observation, rng, ws, &step.behavior_log_prob);
      batch[i] = {&step, 3.0 * rng.normal()};
    }

    GradientBuffer surrogate_grad(model.param_count());
    clipped_surrogate_loss(model, batch, 0.2, 0.0, &surrogate_grad, nullptr, ws);

    GradientBuffer reinforce(model.param_count());
    const double inv = 1.0 / static_cast<double>(batch_size);
    for (const auto& sample : batch)
      model.grad_log_prob(sample.step->observation, sample.step->action, inv * sample.advantage,
                          reinforce.values, ws);
    // surrogate loss is the negated objective
    for (auto& v : reinforce.values) v = -v;
    worst = std::max(worst, relative_l2_error(surrogate_grad.values, reinforce.values));
  }
  result.passed = worst <= 1e-10;
  std::ostringstream os;
  os << "max relative L2 over " << pairs << " model/batch pairs: " << worst << " (tol 1e-10)";
  result.detail = os.str();
  return result;
}

namespace detail {

inline CheckResult consistency_check(const std::string& name, const TabularMdp& mdp,
                                     const PolicyModel& policy, const EstimatorSpec& est,
                                     int repetitions, std::uint64_t seed) {
  CheckResult result;
  result.name = name;
  ConsistencyReport report =
      consistency_experiment(mdp, policy, est, {100, 1000, 10000}, repetitions, seed);
  const double final_median = report.median_errors.back().second;
  result.passed = report.monotone_non_increasing && final_median <= 0.05;
  std::ostringstream os;
  os << "medians";
  for (const auto& [n, e] : report.median_errors) os << " N=" << n << ":" << e;
  os << (report.monotone_non_increasing ? " (monotone)" : " (NOT monotone)")
     << ", tol 0.05 at N=10000";
  for (const auto& w : report.warnings) os << "; warning: " << w;
  result.detail = os.str();
  result.reports.push_back(std::move(report));
  return result;
}

}  // namespace detail

// Estimator consistency on the 3-state chain with time binning: median
// relative error
// against the enumerated exact gradient is monotone non-increasing over
// N in {1e2, 1e3, 1e4} and <= 5% at N=1e4.
inline CheckResult check_chain_consistency(int repetitions = 20, std::uint64_t seed = 33) {
  const TabularMdp mdp = make_chain_mdp();
  const PolicyModel policy = make_tabular_policy(mdp);
  EstimatorSpec est;
  est.kind = EstimatorKind::gpg;
  est.binning.kind = BinningKind::time;
  return detail::consistency_check("chain-consistency-time", mdp, policy, est, repetitions, seed);
}

// Same statement with per-state bins on the 3x4 grid MDP.
inline CheckResult check_grid_consistency(int repetitions = 20, std::uint64_t seed = 34) {
  const TabularMdp mdp = make_grid_mdp();
  const PolicyModel policy = make_tabular_policy(mdp);
  EstimatorSpec est;
  est.kind = EstimatorKind::gpg;
  est.binning.kind = BinningKind::discrete_state;
  return detail::consistency_check("grid-consistency-state", mdp, policy, est, repetitions, seed);
}

// GRPO on the two-armed bandit at p1 = 0.5: the estimator targets
// grad eta / std(R_1) = 2 grad eta; median relative error <= 5% at N=1e4.
inline CheckResult check_grpo_normalized_gradient(int repetitions = 20, std::uint64_t seed = 35) {
  CheckResult result;
  result.name = "grpo-normalized-gradient";
  const TabularMdp mdp = make_bandit_mdp();
  const PolicyModel policy = make_tabular_policy(mdp);
  ConsistencyReport report =
      grpo_normalized_gradient_check(mdp, policy, {100, 1000, 10000}, repetitions, seed);
  const double final_median = report.median_errors.back().second;
  result.passed = final_median <= 0.05;
  std::ostringstream os;
  os << "median relative error at N=10000: " << final_median << " (tol 0.05)";
  result.detail = os.str();
  result.reports.push_back(std::move(report));
  return result;
}

// Variance-reduction direction: on the chain MDP at N=1e4, the GPG
// time-binning median error must undercut the baseline-free REINFORCE
// median error.
inline CheckResult check_variance_reduction(int repetitions = 20, std::uint64_t seed = 36) {
  CheckResult result;
  result.name = "variance-reduction-chain";
  const TabularMdp mdp = make_chain_mdp();
  const PolicyModel policy = make_tabular_policy(mdp);
  EstimatorSpec gpg;
  gpg.kind = EstimatorKind::gpg;
  gpg.binning.kind = BinningKind::time;
  EstimatorSpec reinforce;
  reinforce.kind = EstimatorKind::reinforce;
  ConsistencyReport gpg_report =
      consistency_experiment(mdp, policy, gpg, {10000}, repetitions, seed);
  ConsistencyReport reinforce_report =
      consistency_experiment(mdp, policy, reinforce, {10000}, repetitions, seed);
  const double gpg_median = gpg_report.median_errors.back().second;
  const double reinforce_median = reinforce_report.median_errors.back().second;
  result.passed = gpg_median < reinforce_median;
  std::ostringstream os;
  os << "gpg median " << gpg_median << " vs reinforce median " << reinforce_median
     << " at N=10000";
  result.detail = os.str();
  result.reports.push_back(std::move(gpg_report));
  result.reports.push_back(std::move(reinforce_report));
  return result;
}

inline std::vector<CheckResult> run_oracle_checks(int repetitions = 20) {
  std::vector<CheckResult> results;
  results.push_back(check_surrogate_identity());
  results.push_back(check_chain_consistency(repetitions));
  results.push_back(check_grid_consistency(repetitions));
  results.push_back(check_grpo_normalized_gradient(repetitions));
  results.push_back(check_variance_reduction(repetitions));
  return results;
}

}  // namespace gpg
