#include <catch2/catch_amalgamated.hpp>

#include "gpg/mdp.hpp"
#include "gpg/rng.hpp"

using namespace gpg;

namespace {

EpisodeSegment segment_from_rewards(const std::vector<double>& rewards, int first_timestep = 0) {
  EpisodeSegment segment;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    StepRecord step;
    step.reward = rewards[i];
    step.episode_timestep = first_timestep + static_cast<int>(i);
    step.group_timestep = static_cast<int>(i);
    segment.steps.push_back(step);
  }
  return segment;
}

// Direct O(T^2) definition, independent of the backward recurrence.
std::vector<double> returns_by_double_sum(const std::vector<double>& rewards, double gamma) {
  std::vector<double> out(rewards.size(), 0.0);
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    double discount = 1.0;
    for (std::size_t s = t; s < rewards.size(); ++s) {
      out[t] += discount * rewards[s];
      discount *= gamma;
    }
  }
  return out;
}

StepRecord raw_step(int timestep, bool terminated = false, bool truncated = false) {
  StepRecord s;
  s.episode_timestep = timestep;
  s.terminated = terminated;
  s.truncated = truncated;
  s.reward = timestep;
  return s;
}

}  // namespace

TEST_CASE("compute_returns matches hand-computed geometric sums", "[mdp]") {
  auto r1 = compute_returns(segment_from_rewards({1, 1, 1}), 0.5);
  REQUIRE(r1 == std::vector<double>{1.75, 1.5, 1.0});

  auto r2 = compute_returns(segment_from_rewards({5}), 0.3);
  REQUIRE(r2 == std::vector<double>{5.0});

  auto r3 = compute_returns(segment_from_rewards({1, -1, 2}), 0.9);
  REQUIRE(r3[2] == Catch::Approx(2.0));
  REQUIRE(r3[1] == Catch::Approx(0.8));
  REQUIRE(r3[0] == Catch::Approx(1.72));
}

TEST_CASE("compute_returns rejects bad input", "[mdp]") {
  REQUIRE_THROWS_AS(compute_returns(EpisodeSegment{}, 0.9), std::invalid_argument);
  REQUIRE_THROWS_AS(compute_returns(segment_from_rewards({1.0}), 1.5), std::invalid_argument);
  REQUIRE_THROWS_AS(compute_returns(segment_from_rewards({1.0}), -0.1), std::invalid_argument);
}

TEST_CASE("backward recurrence equals the double-sum oracle on random rewards", "[mdp]") {
  Rng rng(99, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = 1 + rng.uniform_int(40);
    std::vector<double> rewards(len);
    for (auto& r : rewards) r = rng.uniform(-5.0, 5.0);
    const double gamma = rng.uniform();
    const auto fast = compute_returns(segment_from_rewards(rewards), gamma);
    const auto slow = returns_by_double_sum(rewards, gamma);
    for (int t = 0; t < len; ++t) REQUIRE(fast[t] == Catch::Approx(slow[t]).margin(1e-9));
  }
}

TEST_CASE("recurrence invariant R_t = r_t + gamma R_{t+1} holds exactly", "[mdp]") {
  Rng rng(100, 0);
  std::vector<double> rewards(30);
  for (auto& r : rewards) r = rng.uniform(-3.0, 3.0);
  const double gamma = 0.97;
  const auto returns = compute_returns(segment_from_rewards(rewards), gamma);
  for (std::size_t t = 0; t + 1 < rewards.size(); ++t)
    REQUIRE(returns[t] == rewards[t] + gamma * returns[t + 1]);
  REQUIRE(returns.back() == rewards.back());
}

TEST_CASE("segment_rollout splits at done markers", "[mdp]") {
  // dones at steps 4 and 9 of a 10-step buffer -> 2 complete segments
  std::vector<StepRecord> stream;
  for (int i = 0; i < 5; ++i) stream.push_back(raw_step(i, i == 4));
  for (int i = 0; i < 5; ++i) stream.push_back(raw_step(i, i == 4));
  auto group = segment_rollout({stream});
  REQUIRE(group.segments.size() == 2);
  REQUIRE(group.segments[0].complete);
  REQUIRE(group.segments[1].complete);
  REQUIRE(group.nominal_group_size == 1);

  // done at step 4 only -> 1 complete + 1 incomplete
  std::vector<StepRecord> stream2;
  for (int i = 0; i < 5; ++i) stream2.push_back(raw_step(i, i == 4));
  for (int i = 0; i < 5; ++i) stream2.push_back(raw_step(i));
  auto group2 = segment_rollout({stream2});
  REQUIRE(group2.segments.size() == 2);
  REQUIRE(group2.segments[0].complete);
  REQUIRE_FALSE(group2.segments[1].complete);

  // 2 envs, no dones -> 2 incomplete segments
  std::vector<StepRecord> a, b;
  for (int i = 0; i < 4; ++i) a.push_back(raw_step(i));
  for (int i = 0; i < 4; ++i) b.push_back(raw_step(i));
  auto group3 = segment_rollout({a, b});
  REQUIRE(group3.segments.size() == 2);
  REQUIRE_FALSE(group3.segments[0].complete);
  REQUIRE_FALSE(group3.segments[1].complete);
  REQUIRE(group3.segments[0].env_slot == 0);
  REQUIRE(group3.segments[1].env_slot == 1);
}

TEST_CASE("segment_rollout stamps group timesteps by stream position", "[mdp]") {
  std::vector<StepRecord> stream;
  for (int i = 0; i < 3; ++i) stream.push_back(raw_step(i, i == 2));
  for (int i = 0; i < 2; ++i) stream.push_back(raw_step(i));
  auto group = segment_rollout({stream});
  REQUIRE(group.segments.size() == 2);
  REQUIRE(group.segments[0].steps[2].group_timestep == 2);
  REQUIRE(group.segments[1].steps[0].group_timestep == 3);
  REQUIRE(group.segments[1].steps[1].group_timestep == 4);
}

TEST_CASE("a truncated step closes a segment as incomplete", "[mdp]") {
  std::vector<StepRecord> stream;
  for (int i = 0; i < 3; ++i) stream.push_back(raw_step(i, false, i == 2));
  auto group = segment_rollout({stream});
  REQUIRE(group.segments.size() == 1);
  REQUIRE_FALSE(group.segments[0].complete);
}

TEST_CASE("segment_rollout is a partition of each stream", "[mdp]") {
  Rng rng(5, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<StepRecord>> streams(1 + rng.uniform_int(4));
    for (auto& stream : streams) {
      const int len = 1 + rng.uniform_int(30);
      int t = 0;
      for (int i = 0; i < len; ++i) {
        const bool done = rng.uniform() < 0.15;
        StepRecord s;
        s.episode_timestep = t;
        s.reward = rng.uniform(-1.0, 1.0);
        s.terminated = done && rng.uniform() < 0.5;
        s.truncated = done && !s.terminated;
        stream.push_back(s);
        t = done ? 0 : t + 1;
      }
    }
    const auto group = segment_rollout(streams);
    for (std::size_t env = 0; env < streams.size(); ++env) {
      std::vector<StepRecord> rebuilt;
      for (const auto& segment : group.segments)
        if (segment.env_slot == static_cast<int>(env))
          rebuilt.insert(rebuilt.end(), segment.steps.begin(), segment.steps.end());
      REQUIRE(rebuilt.size() == streams[env].size());
      for (std::size_t i = 0; i < rebuilt.size(); ++i) {
        REQUIRE(rebuilt[i].episode_timestep == streams[env][i].episode_timestep);
        REQUIRE(rebuilt[i].reward == streams[env][i].reward);
        REQUIRE(rebuilt[i].group_timestep == static_cast<int>(i));
      }
    }
  }
}

TEST_CASE("segment_rollout rejects corrupted streams", "[mdp]") {
  // terminated mid-stream without a reset afterwards
  std::vector<StepRecord> bad;
  bad.push_back(raw_step(0, true));
  bad.push_back(raw_step(1));
  REQUIRE_THROWS_AS(segment_rollout({bad}), CorruptionError);

  // non-consecutive timesteps inside an episode
  std::vector<StepRecord> skip;
  skip.push_back(raw_step(0));
  skip.push_back(raw_step(2));
  REQUIRE_THROWS_AS(segment_rollout({skip}), CorruptionError);

  // both flags set at once
  std::vector<StepRecord> both;
  both.push_back(raw_step(0, true, true));
  REQUIRE_THROWS_AS(segment_rollout({both}), CorruptionError);
}
