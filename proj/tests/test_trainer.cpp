#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gpg/trainer.hpp"

using namespace gpg;

namespace {

// One-state two-action softmax policy whose log-probs are easy to steer.
PolicyModel bandit_policy(double logit0 = 0.0, double logit1 = 0.0) {
  PolicyArch arch;
  arch.head = HeadKind::tabular_softmax;
  arch.input_dim = 1;
  arch.action_dim = 2;
  PolicyModel model(arch);
  model.params() = {logit0, logit1};
  return model;
}

StepRecord bandit_step(int action, double behavior_log_prob) {
  StepRecord s;
  s.observation = 0;
  s.action = action;
  s.behavior_log_prob = behavior_log_prob;
  return s;
}

}  // namespace

TEST_CASE("clipped surrogate values match the branch arithmetic", "[trainer]") {
  PolicyModel model = bandit_policy();
  PolicyWorkspace ws = model.make_workspace();
  const double logp = std::log(0.5);

  SECTION("ratio 1.5 with positive advantage hits the clip") {
    // behavior logp shifted so exp(logp_new - logp_old) = 1.5
    StepRecord step = bandit_step(0, logp - std::log(1.5));
    SurrogateSample sample{&step, 1.0};
    const double loss =
        clipped_surrogate_loss(model, std::span(&sample, 1), 0.2, 0.0, nullptr, nullptr, ws);
    REQUIRE(loss == Catch::Approx(-1.2));
  }
  SECTION("ratio 0.5 with negative advantage takes the clipped branch") {
    StepRecord step = bandit_step(0, logp - std::log(0.5));
    SurrogateSample sample{&step, -1.0};
    const double loss =
        clipped_surrogate_loss(model, std::span(&sample, 1), 0.2, 0.0, nullptr, nullptr, ws);
    REQUIRE(loss == Catch::Approx(0.8));
  }
  SECTION("ratio 1 reproduces the advantage as objective") {
    StepRecord step = bandit_step(0, logp);
    SurrogateSample sample{&step, 0.7};
    SurrogateDiagnostics diag;
    const double loss =
        clipped_surrogate_loss(model, std::span(&sample, 1), 0.2, 0.0, nullptr, &diag, ws);
    REQUIRE(loss == Catch::Approx(-0.7));
    REQUIRE(diag.clip_fraction == 0.0);
  }
}

TEST_CASE("clipped surrogate rejects bad input and non-finite ratios", "[trainer]") {
  PolicyModel model = bandit_policy();
  PolicyWorkspace ws = model.make_workspace();
  REQUIRE_THROWS_AS(
      clipped_surrogate_loss(model, std::span<const SurrogateSample>{}, 0.2, 0.0, nullptr,
                             nullptr, ws),
      std::invalid_argument);

  StepRecord step = bandit_step(0, -2000.0);  // ratio overflows to inf
  SurrogateSample sample{&step, 1.0};
  REQUIRE_THROWS_AS(
      clipped_surrogate_loss(model, std::span(&sample, 1), 0.2, 0.0, nullptr, nullptr, ws),
      NumericalError);

  StepRecord ok = bandit_step(0, std::log(0.5));
  SurrogateSample bad_adv{&ok, std::nan("")};
  REQUIRE_THROWS_AS(
      clipped_surrogate_loss(model, std::span(&bad_adv, 1), 0.2, 0.0, nullptr, nullptr, ws),
      std::invalid_argument);
}

TEST_CASE("at theta == theta_old the surrogate gradient is the REINFORCE form", "[trainer]") {
  Rng rng(20, 0);
  PolicyArch arch;
  arch.head = HeadKind::categorical;
  arch.input_dim = 4;
  arch.action_dim = 3;
  arch.hidden = {8, 8};
  PolicyModel model = PolicyModel::initialized(arch, rng);
  PolicyWorkspace ws = model.make_workspace();

  std::vector<StepRecord> steps(16);
  std::vector<SurrogateSample> batch(16);
  for (int i = 0; i < 16; ++i) {
    std::vector<double> obs(4);
    for (auto& v : obs) v = rng.normal();
    steps[i].observation = std::move(obs);
    steps[i].action =
        model.sample_action(steps[i].observation, rng, ws, &steps[i].behavior_log_prob);
    batch[i] = {&steps[i], 2.0 * rng.normal()};
  }
  GradientBuffer surrogate(model.param_count());
  SurrogateDiagnostics diag;
  clipped_surrogate_loss(model, batch, 0.2, 0.0, &surrogate, &diag, ws);
  REQUIRE(diag.clip_fraction == 0.0);  // every ratio is exactly 1

  GradientBuffer reinforce(model.param_count());
  for (const auto& s : batch)
    model.grad_log_prob(s.step->observation, s.step->action, -s.advantage / 16.0,
                        reinforce.values, ws);
  for (std::size_t i = 0; i < surrogate.values.size(); ++i)
    REQUIRE(surrogate.values[i] == Catch::Approx(reinforce.values[i]).margin(1e-12));
}

TEST_CASE("surrogate gradient with entropy matches finite differences off-policy", "[trainer]") {
  Rng rng(21, 0);
  PolicyArch arch;
  arch.head = HeadKind::categorical;
  arch.input_dim = 3;
  arch.action_dim = 3;
  arch.hidden = {6};
  PolicyModel model = PolicyModel::initialized(arch, rng);
  PolicyWorkspace ws = model.make_workspace();

  // behaviour log-probs from a perturbed copy, so ratios != 1
  PolicyModel behavior = model;
  for (auto& v : behavior.params()) v += 0.05 * rng.normal();
  PolicyWorkspace bws = behavior.make_workspace();

  std::vector<StepRecord> steps(24);
  std::vector<SurrogateSample> batch(24);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    std::vector<double> obs(3);
    for (auto& v : obs) v = rng.normal();
    steps[i].observation = std::move(obs);
    steps[i].action =
        behavior.sample_action(steps[i].observation, rng, bws, &steps[i].behavior_log_prob);
    batch[i] = {&steps[i], rng.normal()};
  }

  const double entropy_coef = 0.07;
  GradientBuffer grad(model.param_count());
  SurrogateDiagnostics diag;
  const double base_loss =
      clipped_surrogate_loss(model, batch, 0.2, entropy_coef, &grad, &diag, ws);
  // the returned loss excludes the entropy bonus; the total objective is
  // loss - entropy_coef * mean entropy
  auto total_loss = [&](PolicyModel& m) {
    SurrogateDiagnostics d;
    const double l = clipped_surrogate_loss(m, batch, 0.2, 0.0, nullptr, &d, ws);
    return l - entropy_coef * d.entropy_mean;
  };
  REQUIRE(total_loss(model) == Catch::Approx(base_loss - entropy_coef * diag.entropy_mean));

  std::vector<double> direction(model.param_count());
  for (auto& d : direction) d = rng.normal();
  double analytic = 0.0;
  for (std::size_t i = 0; i < grad.values.size(); ++i) analytic += grad.values[i] * direction[i];

  const double h = 1e-6;
  auto& params = model.params();
  const std::vector<double> saved = params;
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] + h * direction[i];
  const double plus = total_loss(model);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] - h * direction[i];
  const double minus = total_loss(model);
  params = saved;
  REQUIRE(analytic == Catch::Approx((plus - minus) / (2 * h)).epsilon(1e-4).margin(1e-7));
}

TEST_CASE("value loss examples", "[trainer]") {
  ValueNet net(false, 2, {});
  Mlp::Workspace ws = net.make_workspace();

  SECTION("perfect predictions give zero loss") {
    net.params() = {1.0, 0.0, 0.0};  // V(x) = x0
    const Observation o1 = std::vector<double>{2.0, 9.0};
    const Observation o2 = std::vector<double>{-3.0, 1.0};
    const std::vector<ValueSample> batch = {{&o1, 2.0, 0.0}, {&o2, -3.0, 0.0}};
    REQUIRE(value_net_loss(net, batch, nullptr, 1.0, ws) == 0.0);
  }
  SECTION("constant zero net against returns [2, -2]") {
    net.params() = {0.0, 0.0, 0.0};
    const Observation o1 = std::vector<double>{1.0, 0.0};
    const Observation o2 = std::vector<double>{0.0, 1.0};
    const std::vector<ValueSample> batch = {{&o1, 2.0, 0.0}, {&o2, -2.0, 0.0}};
    REQUIRE(value_net_loss(net, batch, nullptr, 1.0, ws) == Catch::Approx(2.0));
  }
  SECTION("gradient matches finite differences") {
    Rng rng(22, 0);
    ValueNet deep = ValueNet::initialized(false, 3, {8}, rng);
    Mlp::Workspace dws = deep.make_workspace();
    const Observation obs = std::vector<double>{0.2, -0.4, 1.0};
    const std::vector<ValueSample> batch = {{&obs, 1.5, 0.0}};
    GradientBuffer grad(deep.param_count());
    value_net_loss(deep, batch, &grad, 1.0, dws);

    std::vector<double> direction(deep.param_count());
    for (auto& d : direction) d = rng.normal();
    double analytic = 0.0;
    for (std::size_t i = 0; i < grad.values.size(); ++i)
      analytic += grad.values[i] * direction[i];
    const double h = 1e-6;
    auto& params = deep.params();
    const std::vector<double> saved = params;
    for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] + h * direction[i];
    const double plus = value_net_loss(deep, batch, nullptr, 1.0, dws);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] - h * direction[i];
    const double minus = value_net_loss(deep, batch, nullptr, 1.0, dws);
    params = saved;
    REQUIRE(analytic == Catch::Approx((plus - minus) / (2 * h)).epsilon(1e-5).margin(1e-9));
  }
}

TEST_CASE("adam follows the bias-corrected update", "[trainer]") {
  SECTION("zero gradient leaves parameters unchanged") {
    std::vector<double> params = {1.0, -2.0};
    std::vector<double> grads = {0.0, 0.0};
    AdamState state(2);
    adam_step(params, grads, state, {0.1, 0.9, 0.999, 1e-8});
    REQUIRE(params == std::vector<double>{1.0, -2.0});
    REQUIRE(state.step == 1);
  }
  SECTION("first step moves by about lr * sign(g)") {
    std::vector<double> params = {0.0};
    std::vector<double> grads = {3.0};
    AdamState state(1);
    adam_step(params, grads, state, {0.1, 0.9, 0.999, 1e-8});
    REQUIRE(params[0] == Catch::Approx(-0.1 * 3.0 / (3.0 + 1e-8)));
  }
  SECTION("identical calls from identical state produce identical results") {
    std::vector<double> p1 = {0.3, 0.7}, p2 = {0.3, 0.7};
    std::vector<double> g = {0.11, -0.5};
    AdamState s1(2), s2(2);
    for (int i = 0; i < 5; ++i) {
      adam_step(p1, g, s1, {0.01, 0.9, 0.999, 1e-8});
      adam_step(p2, g, s2, {0.01, 0.9, 0.999, 1e-8});
    }
    REQUIRE(p1 == p2);
    REQUIRE(s1.m == s2.m);
    REQUIRE(s1.v == s2.v);
  }
  SECTION("misaligned buffers are rejected") {
    std::vector<double> params = {1.0};
    std::vector<double> grads = {1.0, 2.0};
    AdamState state(1);
    REQUIRE_THROWS_AS(adam_step(params, grads, state, {}), std::invalid_argument);
  }
}

TEST_CASE("global norm clipping caps the joint norm", "[trainer]") {
  Rng rng(23, 0);
  std::vector<double> a(40), b(25);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  const double before = global_norm(a, b);
  const double reported = clip_global_norm(a, b, 0.5);
  REQUIRE(reported == Catch::Approx(before));
  REQUIRE(global_norm(a, b) <= 0.5 + 1e-12);

  // already small: untouched
  std::vector<double> c = {0.1, 0.1};
  std::vector<double> d;
  clip_global_norm(c, d, 10.0);
  REQUIRE(c == std::vector<double>{0.1, 0.1});
}

TEST_CASE("gpg trainer never constructs a value network", "[trainer]") {
  TrainConfig cfg;
  cfg.env_id = "cartpole";
  cfg.algorithm = Algorithm::gpg;
  cfg.num_envs = 2;
  cfg.rollout_length = 8;
  Trainer trainer(cfg);
  REQUIRE_FALSE(trainer.has_value_net());
  REQUIRE_THROWS_AS(trainer.value_loss({}, nullptr), ConfigError);

  TrainConfig grpo = cfg;
  grpo.algorithm = Algorithm::grpo_outcome;
  Trainer grpo_trainer(grpo);
  REQUIRE_FALSE(grpo_trainer.has_value_net());

  TrainConfig ppo = cfg;
  ppo.algorithm = Algorithm::ppo;
  Trainer ppo_trainer(ppo);
  REQUIRE(ppo_trainer.has_value_net());
}

TEST_CASE("lr 0 leaves parameters fixed and pins the REINFORCE identity", "[trainer]") {
  TrainConfig cfg;
  cfg.env_id = "cartpole";
  cfg.algorithm = Algorithm::gpg;
  cfg.num_envs = 4;
  cfg.rollout_length = 32;
  cfg.update_epochs = 1;
  cfg.num_minibatches = 1;
  cfg.learning_rate = 0.0;
  cfg.anneal_lr = false;
  cfg.seed = 3;
  Trainer trainer(cfg);
  const std::vector<double> before = trainer.policy().params();
  const IterationMetrics metrics = trainer.train_iteration();
  REQUIRE(trainer.policy().params() == before);
  REQUIRE(metrics.clip_frac == 0.0);  // every ratio is exactly 1 at theta_old
  REQUIRE(metrics.effective_group_size >= cfg.num_envs);
}

TEST_CASE("gpg and ppo collect identical trajectories on the first iteration", "[trainer]") {
  TrainConfig cfg;
  cfg.env_id = "cartpole";
  cfg.algorithm = Algorithm::gpg;
  cfg.num_envs = 3;
  cfg.rollout_length = 24;
  cfg.entropy_coef = 0.0;
  cfg.value_coef = 0.0;
  cfg.seed = 11;
  Trainer gpg_trainer(cfg);
  cfg.algorithm = Algorithm::ppo;
  Trainer ppo_trainer(cfg);
  gpg_trainer.train_iteration();
  ppo_trainer.train_iteration();

  const RolloutGroup& a = gpg_trainer.last_group();
  const RolloutGroup& b = ppo_trainer.last_group();
  REQUIRE(a.segments.size() == b.segments.size());
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    REQUIRE(a.segments[i].steps.size() == b.segments[i].steps.size());
    for (std::size_t t = 0; t < a.segments[i].steps.size(); ++t) {
      const StepRecord& x = a.segments[i].steps[t];
      const StepRecord& y = b.segments[i].steps[t];
      REQUIRE(dense_value(x.observation) == dense_value(y.observation));
      REQUIRE(discrete_action(x.action) == discrete_action(y.action));
      REQUIRE(x.reward == y.reward);
      REQUIRE(x.behavior_log_prob == y.behavior_log_prob);
    }
  }
}

TEST_CASE("training iterations are deterministic given the seed", "[trainer]") {
  auto run = [](std::uint64_t seed) {
    TrainConfig cfg;
    cfg.env_id = "cartpole";
    cfg.algorithm = Algorithm::gpg;
    cfg.num_envs = 4;
    cfg.rollout_length = 16;
    cfg.iterations = 3;
    cfg.seed = seed;
    Trainer trainer(cfg);
    std::vector<double> fingerprint;
    for (int i = 0; i < 3; ++i) {
      const IterationMetrics m = trainer.train_iteration();
      fingerprint.push_back(m.loss_pi);
      fingerprint.push_back(m.mean_return);
      fingerprint.push_back(m.grad_norm);
    }
    for (double v : trainer.policy().params()) fingerprint.push_back(v);
    return fingerprint;
  };
  REQUIRE(run(5) == run(5));
  REQUIRE(run(5) != run(6));
}

TEST_CASE("grpo outcome advantages are constant within each trajectory", "[trainer]") {
  TrainConfig cfg;
  cfg.env_id = "cartpole";
  cfg.algorithm = Algorithm::grpo_outcome;
  cfg.num_envs = 4;
  cfg.rollout_length = 32;
  cfg.seed = 2;
  Trainer trainer(cfg);
  trainer.train_iteration();
  const AdvantageSet& adv = trainer.last_advantages();
  for (const auto& row : adv.per_step)
    for (double v : row) REQUIRE(v == row.front());
}

TEST_CASE("evaluation does not touch the policy parameters", "[trainer]") {
  TrainConfig cfg;
  cfg.env_id = "cartpole";
  cfg.algorithm = Algorithm::gpg;
  cfg.num_envs = 2;
  cfg.rollout_length = 8;
  cfg.eval_seeds = 3;
  Trainer trainer(cfg);
  const std::vector<double> before = trainer.policy().params();
  const EvalResult r1 = trainer.run_evaluation();
  REQUIRE(trainer.policy().params() == before);
  const EvalResult r2 = trainer.run_evaluation();
  REQUIRE(r1.mean == r2.mean);  // same seeds, same policy
  REQUIRE(r1.returns.size() == 3);
}

TEST_CASE("a uniform policy on cliffwalking scores far below -100", "[trainer]") {
  PolicyArch arch;
  arch.head = HeadKind::tabular_softmax;
  arch.input_dim = 48;
  arch.action_dim = 4;
  const PolicyModel uniform(arch);
  const EvalResult result = evaluate(uniform, "cliffwalking", 5);
  REQUIRE(result.mean < -100.0);
}

TEST_CASE("a deterministic policy on a deterministic env evaluates with zero std", "[trainer]") {
  PolicyArch arch;
  arch.head = HeadKind::tabular_softmax;
  arch.input_dim = 48;
  arch.action_dim = 4;
  PolicyModel sharp(arch);
  // drive hard toward "up" everywhere: deterministic wandering into the cap
  for (int s = 0; s < 48; ++s) sharp.params()[s * 4 + 0] = 50.0;
  const EvalResult result = evaluate(sharp, "cliffwalking", 4);
  REQUIRE(result.std_dev == 0.0);
  REQUIRE(result.mean == -200.0);
}

TEST_CASE("truncated segments can be excluded from the update batch", "[trainer]") {
  TrainConfig cfg;
  cfg.env_id = "cartpole";
  cfg.algorithm = Algorithm::gpg;
  cfg.num_envs = 2;
  cfg.rollout_length = 64;
  cfg.exclude_truncated_from_update = true;
  cfg.seed = 4;
  Trainer trainer(cfg);
  REQUIRE_NOTHROW(trainer.train_iteration());

  // with a rollout too short for any episode to finish, the batch is empty
  TrainConfig starved = cfg;
  starved.env_id = "pointmass";
  starved.rollout_length = 8;
  Trainer starved_trainer(starved);
  REQUIRE_THROWS_AS(starved_trainer.train_iteration(), ConfigError);
}

TEST_CASE("an untrained policy on cartpole scores like a random one", "[trainer]") {
  Rng rng(60, 0);
  PolicyArch arch;
  arch.head = HeadKind::categorical;
  arch.input_dim = 4;
  arch.action_dim = 2;
  arch.hidden = {64, 64};
  const PolicyModel fresh = PolicyModel::initialized(arch, rng);
  const EvalResult result = evaluate(fresh, "cartpole", 5);
  REQUIRE(result.mean > 5.0);
  REQUIRE(result.mean < 60.0);
}
