#pragma once

#include "rls3/agent.hpp"
#include "rls3/datasets.hpp"
#include "rls3/judges.hpp"
#include "rls3/sample.hpp"
#include "rls3/scene.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rls3 {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EarlyStopPolicy {
  std::size_t min_iterations = 15;
  std::size_t patience = 10;
  double epsilon = 0.02;
};

EarlyStopPolicy default_early_stop(JudgeKind kind);

/// `history[0]` is the metric before any fine-tuning and `history[k]` the
/// metric after iteration k. Stops iff at least `min_iterations` iterations
/// are done and none of the last `patience` entries beat the best value
/// seen before it by more than epsilon.
bool early_stop(std::span<const double> history, const EarlyStopPolicy& policy);

struct RunConfig {
  std::uint64_t seed = 0;

  std::size_t iterations = 10;
  std::size_t episodes = 4;
  std::size_t samples_per_episode = 20;
  double sampling_rate = 0.5;
  double beta = 10.0;
  std::size_t max_steps_factor = 4;
  std::optional<std::uint64_t> budget;
  bool test_every_iteration = false;

  FineTuneOptions finetune;  // seed is derived per iteration

  std::string judge = "generative";  // generative | contrastive | external:<addr>
  JudgeKind external_mode = JudgeKind::generative;
  JudgeNetworkOptions judge_network;
  double temperature = 0.07;
  std::string negatives = "both";  // both | term | none
  std::size_t timeout_ms = 30000;

  std::string agent = "sac";  // sac | random
  std::size_t pretrain_steps = 20000;
  std::size_t pretrain_episode_steps = 100;
  std::optional<std::string> agent_checkpoint;
  SacOptions sac;
  bool stochastic_actions = true;

  bool early_stop_enabled = true;
  EarlyStopPolicy early_stop_policy;

  std::size_t validation_count = 500;
  std::size_t test_count = 1000;
  std::uint64_t dataset_seed = 20240501;
  std::optional<std::string> train_scenes;
  std::optional<std::string> test_scenes;

  bool save_checkpoints = true;

  nlohmann::ordered_json resolved;
  std::string digest;

  JudgeKind judge_kind() const;
  std::size_t max_steps() const { return max_steps_factor * samples_per_episode; }
  std::size_t per_episode_batch() const;
};

nlohmann::ordered_json default_config_json();

/// Defaults, then the file (if any), then dotted `key=value` overrides.
/// Unknown keys, type mismatches and invalid values throw ConfigError.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);
RunConfig config_from_json(const nlohmann::ordered_json& resolved);

/// Agent options with the run's derived seed.
SacOptions agent_options(const RunConfig& config);
/// Intrinsic pretraining exactly as a run performs it.
PretrainReport pretrain_for_config(const RunConfig& config, const SceneSuite& suite, SacAgent& agent,
                                   AgentBuffer& buffer);

/// Seeds of the validation and test sets derived from datasets.seed.
std::uint64_t fixed_set_seed(std::uint64_t dataset_seed, bool test);

std::unique_ptr<Judge> make_judge(const RunConfig& config, const std::vector<std::string>& catalog);

struct EpisodeResult {
  std::vector<SampleRecord> samples;
  EpisodeTransitions transitions;
  double j1 = 0.0;
  std::optional<double> j2;
  std::size_t steps = 0;
  std::size_t valid = 0;
  bool truncated = false;
  std::size_t padded = 0;
  bool budget_exhausted = false;
};

struct ScoredEpisode {
  double j2 = 0.0;
  InferenceResult inference;
};

/// Judge inference over one episode's samples and the resulting J2.
ScoredEpisode score_episode(Judge& judge, std::span<const SampleRecord> samples);

/// Seeded uniform subset of size round(eta * T0) without replacement,
/// returned in original order.
std::vector<SampleRecord> sample_for_batch(const std::vector<SampleRecord>& samples, double eta,
                                           std::size_t samples_per_episode, std::uint64_t seed);

struct IterationRecord {
  std::size_t iteration = 0;
  std::uint64_t cumulative_valid = 0;
  std::uint64_t cumulative_attempts = 0;
  double val_metric = 0.0;
  std::optional<double> test_metric;
  std::vector<double> j2;
  std::size_t batch_size = 0;
  std::size_t truncated_episodes = 0;
  std::size_t discarded_episodes = 0;
  double seconds = 0.0;

  double mean_j2() const;
};

struct RunReport {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string agent;
  std::string judge;
  std::vector<IterationRecord> iterations;  // [0] is the pre-fine-tuning baseline
  std::size_t completed_iterations = 0;
  std::optional<std::size_t> early_stop_iteration;
  std::size_t best_iteration = 0;
  std::string stop_reason = "completed";  // completed | early_stop | budget | failure
  std::optional<std::string> failure;
  std::vector<std::string> incidents;
  std::optional<double> final_test_metric;
  std::string validation_digest;
  std::string test_digest;
  std::string samples_digest;
  std::uint64_t total_valid = 0;
  std::uint64_t total_attempts = 0;
  double wall_seconds = 0.0;

  /// Report body; timing fields only when `with_timing`.
  nlohmann::ordered_json to_json(bool with_timing = true) const;
  /// sha256 of the timing-free body.
  std::string digest() const;
  std::vector<double> validation_history() const;
};

/// Loop state for one run. Owns environment, agent, judge and run directory
/// writers.
class Orchestrator {
 public:
  Orchestrator(RunConfig config, std::filesystem::path run_dir, std::unique_ptr<Judge> judge = nullptr);
  ~Orchestrator();

  /// Runs everything: datasets, agent preparation, iteration 0 baseline and
  /// up to I iterations. Writes report.json and returns the report.
  RunReport run();

  /// One episode until T0 valid samples or T_max steps. Transitions stay
  /// held until the caller injects the bonus.
  EpisodeResult run_episode(std::int64_t iteration);

  /// E episodes, fine-tuning and validation. Returns false when the budget
  /// ran out before the iteration finished.
  bool run_iteration(std::size_t iteration);

  void prepare();
  const RunReport& report() const { return report_; }
  Judge& judge() { return *judge_; }
  const std::vector<SampleRecord>& validation_set() const { return validation_.samples; }
  const std::vector<SampleRecord>& test_set() const { return test_.samples; }
  const std::vector<SampleRecord>& current_batch() const { return batch_; }
  SacAgent* sac_agent() { return sac_.get(); }

 private:
  struct Writers;

  Eigen::Vector3d act(const Eigen::VectorXd& observation);
  void learn();
  bool budget_left() const;
  void write_report();
  void log_metrics_row(const IterationRecord& r);

  RunConfig config_;
  std::filesystem::path run_dir_;
  std::unique_ptr<Judge> judge_;
  SceneSuite train_suite_;
  SceneSuite test_suite_;
  FixedSet validation_;
  FixedSet test_;
  std::unique_ptr<SceneEnv> env_;
  std::unique_ptr<SacAgent> sac_;
  std::unique_ptr<AgentBuffer> buffer_;
  std::unique_ptr<RandomAgent> random_;
  std::vector<SampleRecord> batch_;
  std::unique_ptr<Writers> writers_;
  RunReport report_;
  std::uint64_t episode_counter_ = 0;
  std::uint64_t sample_counter_ = 0;
  bool prepared_ = false;
};

/// Convenience wrapper around Orchestrator::run.
RunReport run_loop(const RunConfig& config, const std::filesystem::path& run_dir,
                   std::unique_ptr<Judge> judge = nullptr);

}  // namespace rls3
