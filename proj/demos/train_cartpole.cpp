// Minimal end-to-end use of the library: train GPG with time binning on
// CartPole and print the evaluation score.

#include <cstdio>

#include "gpg/trainer.hpp"

int main() {
  gpg::TrainConfig cfg;
  cfg.env_id = "cartpole";
  cfg.algorithm = gpg::Algorithm::gpg;
  cfg.binning = gpg::parse_binning("time");
  cfg.num_envs = 8;
  cfg.iterations = 50;

  gpg::Trainer trainer(cfg);
  while (trainer.iteration() < cfg.iterations) {
    const gpg::IterationMetrics m = trainer.train_iteration();
    if ((m.iteration + 1) % 10 == 0)
      std::printf("iteration %3ld  mean return %7.2f  entropy %.3f\n", m.iteration + 1,
                  m.mean_return, m.entropy);
  }
  const gpg::EvalResult eval = trainer.run_evaluation();
  std::printf("final evaluation: %.2f +- %.2f over %d seeds\n", eval.mean, eval.std_dev,
              cfg.eval_seeds);
  return 0;
}
