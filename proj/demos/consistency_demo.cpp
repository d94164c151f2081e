// Estimator consistency at a glance: median relative error of the group
// gradient estimate against the enumerated exact gradient, as the group
// size grows.

#include <cstdio>

#include "gpg/oracle.hpp"

int main() {
  const gpg::TabularMdp chain = gpg::make_chain_mdp();
  const gpg::PolicyModel policy = gpg::make_tabular_policy(chain);

  for (const char* binning : {"universal", "time", "state"}) {
    gpg::EstimatorSpec est;
    est.kind = gpg::EstimatorKind::gpg;
    est.binning = gpg::parse_binning(binning);
    const auto report = gpg::consistency_experiment(chain, policy, est, {100, 1000, 10000}, 20);
    std::printf("%-18s", est.label().c_str());
    for (const auto& [n, err] : report.median_errors) std::printf("  N=%-6ld %.4f", n, err);
    std::printf("\n");
  }

  gpg::EstimatorSpec reinforce;
  reinforce.kind = gpg::EstimatorKind::reinforce;
  const auto report = gpg::consistency_experiment(chain, policy, reinforce, {100, 1000, 10000}, 20);
  std::printf("%-18s", "reinforce");
  for (const auto& [n, err] : report.median_errors) std::printf("  N=%-6ld %.4f", n, err);
  std::printf("\n");
  return 0;
}
