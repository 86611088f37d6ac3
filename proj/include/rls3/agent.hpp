#pragma once

#include "rls3/sac.hpp"
#include "rls3/scene.hpp"

#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

namespace rls3 {

using SacAgent = SoftActorCritic<float>;
using AgentBuffer = ReplayBuffer<float>;

/// Network input derived from a raw observation: angles in units of
/// 180 degrees, slot and scene indices centred.
Eigen::VectorXd normalize_observation(const Eigen::VectorXd& observation);

/// Uniform actions in [-1, 1]^3.
class RandomAgent {
 public:
  explicit RandomAgent(std::uint64_t seed) : rng_(seed) {}
  Eigen::Vector3d act() {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::Vector3d a;
    for (int i = 0; i < 3; ++i) a(i) = u(rng_);
    return a;
  }

 private:
  std::mt19937_64 rng_;
};

/// Transitions of one episode, held back from the replay buffer until the
/// terminal bonus has been applied.
class EpisodeTransitions {
 public:
  void push(Transition t);
  const std::vector<Transition>& transitions() const { return transitions_; }
  std::size_t size() const { return transitions_.size(); }
  bool empty() const { return transitions_.empty(); }
  bool bonus_injected() const { return injected_; }
  double reward_sum() const;

  /// Adds beta * j2 to the terminal transition and marks it terminal.
  /// Throws std::logic_error on a second call and std::invalid_argument for
  /// negative j2 or an empty episode.
  void inject_terminal_bonus(double j2, double beta);

  /// Moves every transition into `buffer`; requires the bonus first.
  void flush_into(AgentBuffer& buffer);

 private:
  std::vector<Transition> transitions_;
  bool injected_ = false;
};

struct PretrainOptions {
  std::size_t steps = 20000;
  std::size_t episode_steps = 100;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::size_t steps = 0;
  std::size_t valid = 0;
  std::size_t updates = 0;
  double last_critic_loss = 0.0;
};

/// Intrinsic-reward-only training: random actions until the buffer reaches
/// warmup, policy actions afterwards, one update per environment step.
PretrainReport pretrain_intrinsic(SacAgent& agent, AgentBuffer& buffer, SceneEnv& env, const PretrainOptions& options);

/// Fraction of valid placements over `steps` fresh environment steps.
/// Episodes restart every `episode_steps` steps; no learning happens.
double evaluate_valid_rate(SacAgent& agent, SceneEnv& env, std::size_t steps, std::uint64_t seed,
                           bool stochastic = true, std::size_t episode_steps = 100);
double evaluate_valid_rate(RandomAgent& agent, SceneEnv& env, std::size_t steps, std::uint64_t seed,
                           std::size_t episode_steps = 100);

/// Directory holding actor, q1, q2, q1_target and q2_target checkpoints and
/// manifest.json with alpha.
void save_agent(const std::filesystem::path& directory, const SacAgent& agent);
void load_agent(const std::filesystem::path& directory, SacAgent& agent);

}  // namespace rls3
