#include "rls3/agent.hpp"

#include "rls3/checkpoint.hpp"
#include "rls3/digest.hpp"
#include "rls3/random.hpp"

#include <json.hpp>

#include <fstream>

namespace rls3 {

Eigen::VectorXd normalize_observation(const Eigen::VectorXd& observation) {
  if (observation.size() != static_cast<Eigen::Index>(kObservationSize))
    throw std::invalid_argument("observation must have 32 entries");
  Eigen::VectorXd x = observation;
  x(0) -= 1.0;
  x(1) = x(1) / 2.0 - 1.0;
  x.segment<3>(23) /= 180.0;
  x.segment<3>(29) /= 180.0;
  return x;
}

void EpisodeTransitions::push(Transition t) {
  if (injected_) throw std::logic_error("episode already closed by its terminal bonus");
  transitions_.push_back(std::move(t));
}

double EpisodeTransitions::reward_sum() const {
  double s = 0.0;
  for (const auto& t : transitions_) s += t.reward;
  return s;
}

void EpisodeTransitions::inject_terminal_bonus(double j2, double beta) {
  if (injected_) throw std::logic_error("terminal bonus already injected for this episode");
  if (transitions_.empty()) throw std::invalid_argument("cannot inject a bonus into an empty episode");
  if (!(j2 >= 0.0) || !std::isfinite(j2)) throw std::invalid_argument("J2 must be finite and non-negative");
  transitions_.back().reward += beta * j2;
  transitions_.back().terminal = true;
  injected_ = true;
}

void EpisodeTransitions::flush_into(AgentBuffer& buffer) {
  if (!injected_) throw std::logic_error("episode transitions need their terminal bonus before insertion");
  for (const auto& t : transitions_) buffer.push(t);
  transitions_.clear();
}

PretrainReport pretrain_intrinsic(SacAgent& agent, AgentBuffer& buffer, SceneEnv& env, const PretrainOptions& options) {
  if (options.steps == 0) throw std::invalid_argument("pretraining needs at least one step");
  if (options.episode_steps == 0) throw std::invalid_argument("episode length must be positive");
  RandomAgent warmup(derive_seed(options.seed, {1}));
  PretrainReport report;
  std::uint64_t episode = 0;
  std::size_t in_episode = 0;
  std::size_t valid_in_episode = 0;
  env.reset_episode(episode, derive_seed(options.seed, {2, episode}));
  for (std::size_t step = 0; step < options.steps; ++step) {
    Transition t;
    t.observation = normalize_observation(env.observe());
    t.action = buffer.size() < agent.options().warmup ? warmup.act() : agent.select_action(t.observation, true);
    const auto r = env.step(t.action);
    t.reward = r.reward;
    ++in_episode;
    if (r.report.valid) {
      ++report.valid;
      ++valid_in_episode;
      env.advance_scene(valid_in_episode);
    }
    t.terminal = in_episode == options.episode_steps;
    t.next_observation = normalize_observation(env.observe());
    buffer.push(t);
    const auto u = agent.update(buffer);
    if (u.applied) {
      ++report.updates;
      report.last_critic_loss = 0.5 * (u.critic1_loss + u.critic2_loss);
    }
    if (t.terminal) {
      ++episode;
      in_episode = 0;
      valid_in_episode = 0;
      env.reset_episode(episode, derive_seed(options.seed, {2, episode}));
    }
  }
  report.steps = options.steps;
  return report;
}

namespace {

template <typename Act>
double valid_rate(SceneEnv& env, std::size_t steps, std::uint64_t seed, std::size_t episode_steps, Act&& act) {
  if (steps == 0 || episode_steps == 0) throw std::invalid_argument("step counts must be positive");
  std::size_t valid = 0, valid_in_episode = 0;
  std::uint64_t episode = 0;
  env.reset_episode(episode, derive_seed(seed, {3, episode}));
  for (std::size_t step = 0; step < steps; ++step) {
    if (step > 0 && step % episode_steps == 0) {
      ++episode;
      valid_in_episode = 0;
      env.reset_episode(episode, derive_seed(seed, {3, episode}));
    }
    if (env.step(act(normalize_observation(env.observe()))).report.valid) {
      ++valid;
      env.advance_scene(++valid_in_episode);
    }
  }
  return static_cast<double>(valid) / static_cast<double>(steps);
}

}  // namespace

double evaluate_valid_rate(SacAgent& agent, SceneEnv& env, std::size_t steps, std::uint64_t seed, bool stochastic,
                           std::size_t episode_steps) {
  return valid_rate(env, steps, seed, episode_steps,
                    [&](const Eigen::VectorXd& obs) { return agent.select_action(obs, stochastic); });
}

double evaluate_valid_rate(RandomAgent& agent, SceneEnv& env, std::size_t steps, std::uint64_t seed,
                           std::size_t episode_steps) {
  return valid_rate(env, steps, seed, episode_steps, [&](const Eigen::VectorXd&) { return agent.act(); });
}

namespace {

constexpr const char* kNetworkNames[] = {"actor", "q1", "q2", "q1_target", "q2_target"};

}  // namespace

void save_agent(const std::filesystem::path& directory, const SacAgent& agent) {
  std::filesystem::create_directories(directory);
  const Mlp<float>* nets[] = {&agent.actor(), &agent.q1(), &agent.q2(), &agent.q1_target(), &agent.q2_target()};
  nlohmann::ordered_json manifest;
  manifest["format"] = "rls3-sac-1";
  manifest["observation_size"] = agent.observation_size();
  manifest["log_alpha"] = agent.log_alpha();
  manifest["alpha"] = agent.alpha();
  manifest["networks"] = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < 5; ++i) {
    const auto file = std::string(kNetworkNames[i]) + ".bin";
    save_network(directory / file, *nets[i]);
    manifest["networks"][kNetworkNames[i]] = {{"file", file}, {"sha256", sha256_file(directory / file)}};
  }
  std::ofstream out(directory / "manifest.json", std::ios::trunc);
  if (!out) throw CheckpointError("cannot write agent manifest in " + directory.string());
  out << manifest.dump(2) << '\n';
}

void load_agent(const std::filesystem::path& directory, SacAgent& agent) {
  std::ifstream in(directory / "manifest.json");
  if (!in) throw CheckpointError("no agent manifest in " + directory.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("unreadable agent manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "rls3-sac-1") throw CheckpointError("unknown agent checkpoint format");
  std::vector<Mlp<float>> nets;
  for (const char* name : kNetworkNames) {
    if (!manifest["networks"].contains(name)) throw CheckpointError(std::string("manifest lacks network ") + name);
    const auto& entry = manifest["networks"][name];
    const auto path = directory / entry.at("file").get<std::string>();
    if (sha256_file(path) != entry.at("sha256").get<std::string>())
      throw CheckpointError(std::string("digest mismatch for ") + name);
    nets.push_back(load_network<float>(path));
  }
  try {
    agent.set_networks(nets[0], nets[1], nets[2], nets[3], nets[4]);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  agent.set_log_alpha(manifest.at("log_alpha").get<double>());
}

}  // namespace rls3
