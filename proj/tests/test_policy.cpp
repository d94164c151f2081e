#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gpg/policy.hpp"

using namespace gpg;

namespace {

PolicyModel random_mlp_categorical(Rng& rng, int obs_dim = 3, int actions = 4) {
  PolicyArch arch;
  arch.head = HeadKind::categorical;
  arch.input_dim = obs_dim;
  arch.action_dim = actions;
  arch.hidden = {8, 8};
  return PolicyModel::initialized(arch, rng);
}

PolicyModel random_mlp_gaussian(Rng& rng, int obs_dim = 3, int dims = 2) {
  PolicyArch arch;
  arch.head = HeadKind::gaussian;
  arch.input_dim = obs_dim;
  arch.action_dim = dims;
  arch.hidden = {8, 8};
  PolicyModel model = PolicyModel::initialized(arch, rng);
  // leave the log-std columns at 0 for some probes, nonzero for others
  auto& params = model.params();
  for (int j = 0; j < dims; ++j) params[params.size() - dims + j] = 0.3 * rng.normal();
  return model;
}

std::vector<double> random_obs(int dim, Rng& rng) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Directional central difference of log pi along a random direction.
double directional_fd(PolicyModel& model, const Observation& obs, const Action& action,
                      const std::vector<double>& direction, double h, PolicyWorkspace& ws) {
  auto& params = model.params();
  const std::vector<double> saved = params;
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] + h * direction[i];
  const double plus = model.log_prob(obs, action, ws);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] - h * direction[i];
  const double minus = model.log_prob(obs, action, ws);
  params = saved;
  return (plus - minus) / (2.0 * h);
}

}  // namespace

TEST_CASE("uniform tabular softmax gives log(1/A)", "[policy]") {
  PolicyArch arch;
  arch.head = HeadKind::tabular_softmax;
  arch.input_dim = 5;
  arch.action_dim = 4;
  PolicyModel model(arch);
  PolicyWorkspace ws = model.make_workspace();
  REQUIRE(model.log_prob(2, 1, ws) == Catch::Approx(std::log(0.25)));
  REQUIRE(model.entropy(2, ws) == Catch::Approx(std::log(4.0)));
}

TEST_CASE("categorical logits [0, ln 3] put 3/4 mass on action 1", "[policy]") {
  PolicyArch arch;
  arch.head = HeadKind::tabular_softmax;
  arch.input_dim = 1;
  arch.action_dim = 2;
  PolicyModel model(arch);
  model.params() = {0.0, std::log(3.0)};
  PolicyWorkspace ws = model.make_workspace();
  REQUIRE(model.log_prob(0, 1, ws) == Catch::Approx(std::log(0.75)));
  REQUIRE(model.log_prob(0, 0, ws) == Catch::Approx(std::log(0.25)));
}

TEST_CASE("gaussian log-density at the mean with unit std", "[policy]") {
  Rng rng(1, 0);
  PolicyArch arch;
  arch.head = HeadKind::gaussian;
  arch.input_dim = 2;
  arch.action_dim = 3;
  arch.hidden = {4};
  PolicyModel model(arch);  // zero weights: mean 0, log-std 0
  PolicyWorkspace ws = model.make_workspace();
  const Observation obs = random_obs(2, rng);
  const Action at_mean = std::vector<double>{0.0, 0.0, 0.0};
  REQUIRE(model.log_prob(obs, at_mean, ws) ==
          Catch::Approx(3.0 * (-0.5 * std::log(2.0 * M_PI))));
}

TEST_CASE("tabular softmax gradient is the indicator-minus-probability row", "[policy]") {
  PolicyArch arch;
  arch.head = HeadKind::tabular_softmax;
  arch.input_dim = 3;
  arch.action_dim = 4;
  PolicyModel model(arch);
  Rng rng(2, 0);
  for (auto& v : model.params()) v = rng.normal();
  PolicyWorkspace ws = model.make_workspace();

  const int state = 1, action = 2;
  std::vector<double> grad(model.param_count(), 0.0);
  model.grad_log_prob(state, action, 1.0, grad, ws);

  // probabilities of the probed state's row
  model.evaluate_action(state, action, ws);
  double row_sum = 0.0;
  for (int a = 0; a < 4; ++a) {
    const double expected = (a == action ? 1.0 : 0.0) - ws.probs[a];
    REQUIRE(grad[1 * 4 + a] == Catch::Approx(expected).margin(1e-12));
    row_sum += grad[1 * 4 + a];
  }
  REQUIRE(row_sum == Catch::Approx(0.0).margin(1e-12));  // softmax row-sum identity
  for (int s = 0; s < 3; ++s) {
    if (s == state) continue;
    for (int a = 0; a < 4; ++a) REQUIRE(grad[s * 4 + a] == 0.0);
  }
}

TEST_CASE("grad_log_prob matches directional finite differences", "[policy]") {
  Rng rng(3, 0);
  for (int probe = 0; probe < 30; ++probe) {
    PolicyModel model = probe % 2 == 0 ? random_mlp_categorical(rng) : random_mlp_gaussian(rng);
    PolicyWorkspace ws = model.make_workspace();
    const Observation obs = random_obs(3, rng);
    double logp = 0.0;
    const Action action = model.sample_action(obs, rng, ws, &logp);

    std::vector<double> grad(model.param_count(), 0.0);
    model.grad_log_prob(obs, action, 1.0, grad, ws);

    std::vector<double> direction(model.param_count());
    for (auto& d : direction) d = rng.normal();
    double analytic = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) analytic += grad[i] * direction[i];
    const double fd = directional_fd(model, obs, action, direction, 1e-6, ws);
    REQUIRE(analytic == Catch::Approx(fd).epsilon(1e-5).margin(1e-8));
  }
}

TEST_CASE("sampled log-probs equal log_prob of the sampled action exactly", "[policy]") {
  Rng rng(4, 0);
  PolicyModel cat = random_mlp_categorical(rng);
  PolicyModel gauss = random_mlp_gaussian(rng);
  PolicyWorkspace cat_ws = cat.make_workspace();
  PolicyWorkspace gauss_ws = gauss.make_workspace();
  for (int i = 0; i < 200; ++i) {
    const Observation obs = random_obs(3, rng);
    double logp = 0.0;
    const Action a1 = cat.sample_action(obs, rng, cat_ws, &logp);
    REQUIRE(logp == cat.log_prob(obs, a1, cat_ws));
    const Action a2 = gauss.sample_action(obs, rng, gauss_ws, &logp);
    REQUIRE(logp == gauss.log_prob(obs, a2, gauss_ws));
  }
}

TEST_CASE("categorical sampling frequencies match the probabilities", "[policy]") {
  PolicyArch arch;
  arch.head = HeadKind::tabular_softmax;
  arch.input_dim = 1;
  arch.action_dim = 2;
  PolicyModel model(arch);
  model.params() = {0.0, std::log(3.0)};  // probs [0.25, 0.75]
  PolicyWorkspace ws = model.make_workspace();
  Rng rng(5, 0);
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    if (discrete_action(model.sample_action(0, rng, ws))) ++ones;
  REQUIRE(std::abs(static_cast<double>(ones) / n - 0.75) < 0.01);
}

TEST_CASE("vanishing-variance gaussian samples collapse onto the mean", "[policy]") {
  PolicyArch arch;
  arch.head = HeadKind::gaussian;
  arch.input_dim = 2;
  arch.action_dim = 2;
  arch.hidden = {4};
  PolicyModel model(arch);
  auto& params = model.params();
  for (std::size_t j = params.size() - 2; j < params.size(); ++j) params[j] = -10.0;
  PolicyWorkspace ws = model.make_workspace();
  Rng rng(6, 0);
  const Observation obs = std::vector<double>{0.4, -0.2};
  for (int i = 0; i < 100; ++i) {
    const auto a = dense_action(model.sample_action(obs, rng, ws));
    for (double v : a) REQUIRE(std::abs(v) < 1e-3);  // zero-weight net: mean is 0
  }
}

TEST_CASE("categorical probabilities form a simplex and entropy is bounded", "[policy]") {
  Rng rng(7, 0);
  PolicyModel model = random_mlp_categorical(rng, 3, 5);
  PolicyWorkspace ws = model.make_workspace();
  for (int i = 0; i < 100; ++i) {
    const Observation obs = random_obs(3, rng);
    model.evaluate_action(obs, 0, ws);
    double sum = 0.0;
    for (int a = 0; a < 5; ++a) {
      REQUIRE(ws.probs[a] > 0.0);
      sum += ws.probs[a];
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(ws.entropy >= 0.0);
    REQUIRE(ws.entropy <= std::log(5.0) + 1e-12);
  }
}

TEST_CASE("entropy gradient matches finite differences", "[policy]") {
  Rng rng(8, 0);
  PolicyModel model = random_mlp_categorical(rng);
  PolicyWorkspace ws = model.make_workspace();
  const Observation obs = random_obs(3, rng);

  std::vector<double> grad(model.param_count(), 0.0);
  model.evaluate_action(obs, 1, ws);
  model.backward(obs, 1, 0.0, 1.0, grad, ws);

  std::vector<double> direction(model.param_count());
  for (auto& d : direction) d = rng.normal();
  double analytic = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) analytic += grad[i] * direction[i];

  auto& params = model.params();
  const std::vector<double> saved = params;
  const double h = 1e-6;
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] + h * direction[i];
  const double plus = model.entropy(obs, ws);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] - h * direction[i];
  const double minus = model.entropy(obs, ws);
  params = saved;
  REQUIRE(analytic == Catch::Approx((plus - minus) / (2 * h)).epsilon(1e-5).margin(1e-8));
}

TEST_CASE("zero-weight value net outputs 0 everywhere", "[policy]") {
  ValueNet net(false, 3, {8, 8});
  Mlp::Workspace ws = net.make_workspace();
  Rng rng(9, 0);
  for (int i = 0; i < 20; ++i)
    REQUIRE(net.forward(random_obs(3, rng), ws) == 0.0);
}

TEST_CASE("single linear layer computes the inner product", "[policy]") {
  ValueNet net(false, 3, {});
  auto& params = net.params();  // layout: w0 w1 w2 b
  params = {0.5, -1.0, 2.0, 0.0};
  Mlp::Workspace ws = net.make_workspace();
  const Observation obs = std::vector<double>{1.0, 2.0, 3.0};
  REQUIRE(net.forward(obs, ws) == Catch::Approx(0.5 - 2.0 + 6.0));
}

TEST_CASE("value net backward matches finite differences", "[policy]") {
  Rng rng(10, 0);
  ValueNet net = ValueNet::initialized(false, 3, {8, 8}, rng);
  Mlp::Workspace ws = net.make_workspace();
  const Observation obs = random_obs(3, rng);

  std::vector<double> grad(net.param_count(), 0.0);
  net.forward(obs, ws);
  net.backward(obs, 1.0, grad, ws);

  std::vector<double> direction(net.param_count());
  for (auto& d : direction) d = rng.normal();
  double analytic = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) analytic += grad[i] * direction[i];

  auto& params = net.params();
  const std::vector<double> saved = params;
  const double h = 1e-6;
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] + h * direction[i];
  const double plus = net.forward(obs, ws);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = saved[i] - h * direction[i];
  const double minus = net.forward(obs, ws);
  params = saved;
  REQUIRE(analytic == Catch::Approx((plus - minus) / (2 * h)).epsilon(1e-5).margin(1e-8));
}

TEST_CASE("one-hot input path equals an explicit one-hot vector", "[policy]") {
  Rng rng(11, 0);
  PolicyArch arch;
  arch.head = HeadKind::categorical;
  arch.one_hot_input = true;
  arch.input_dim = 6;
  arch.action_dim = 3;
  arch.hidden = {8};
  PolicyModel one_hot = PolicyModel::initialized(arch, rng);

  Rng rng_copy(11, 0);
  PolicyArch dense = arch;
  dense.one_hot_input = false;
  PolicyModel dense_model = PolicyModel::initialized(dense, rng_copy);
  REQUIRE(one_hot.params() == dense_model.params());

  PolicyWorkspace ws1 = one_hot.make_workspace();
  PolicyWorkspace ws2 = dense_model.make_workspace();
  for (int s = 0; s < 6; ++s) {
    std::vector<double> encoded(6, 0.0);
    encoded[s] = 1.0;
    for (int a = 0; a < 3; ++a)
      REQUIRE(one_hot.log_prob(s, a, ws1) ==
              Catch::Approx(dense_model.log_prob(encoded, a, ws2)).margin(1e-14));

    std::vector<double> g1(one_hot.param_count(), 0.0), g2(one_hot.param_count(), 0.0);
    one_hot.grad_log_prob(s, 1, 1.0, g1, ws1);
    dense_model.grad_log_prob(encoded, 1, 1.0, g2, ws2);
    for (std::size_t i = 0; i < g1.size(); ++i)
      REQUIRE(g1[i] == Catch::Approx(g2[i]).margin(1e-13));
  }
}

TEST_CASE("policies reject mismatched observations and actions", "[policy]") {
  Rng rng(12, 0);
  PolicyModel model = random_mlp_categorical(rng);
  PolicyWorkspace ws = model.make_workspace();
  REQUIRE_THROWS_AS(model.log_prob(7, 0, ws), std::invalid_argument);  // discrete obs to dense net
  REQUIRE_THROWS_AS(model.log_prob(random_obs(2, rng), 0, ws), std::invalid_argument);
  REQUIRE_THROWS_AS(model.log_prob(random_obs(3, rng), 9, ws), std::invalid_argument);
  REQUIRE_THROWS_AS(model.log_prob(random_obs(3, rng), std::vector<double>{1.0}, ws),
                    std::invalid_argument);
}
