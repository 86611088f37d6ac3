#include "rls3/orchestrator.hpp"

#include "rls3/digest.hpp"
#include "rls3/random.hpp"
#include "rls3/wire.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

namespace rls3 {

using ojson = nlohmann::ordered_json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ojson terms_json(PrimitiveSet s) {
  ojson a = ojson::array();
  for (auto p : s.to_vector()) a.push_back(std::string(to_string(p)));
  return a;
}

// Seed tags for independent random streams.
enum : std::uint64_t {
  kTagJudge = 1,
  kTagAgent,
  kTagPretrain,
  kTagEpisode,
  kTagPrompt,
  kTagBatch,
  kTagFinetune,
  kTagRandomAgent,
  kTagValidation,
  kTagTest,
};

}  // namespace

std::uint64_t fixed_set_seed(std::uint64_t dataset_seed, bool test) {
  return derive_seed(dataset_seed, {test ? kTagTest : kTagValidation});
}

SacOptions agent_options(const RunConfig& config) {
  SacOptions o = config.sac;
  o.seed = derive_seed(config.seed, {kTagAgent});
  return o;
}

PretrainReport pretrain_for_config(const RunConfig& config, const SceneSuite& suite, SacAgent& agent,
                                   AgentBuffer& buffer) {
  EnvOptions env_options;
  env_options.samples_per_episode = config.samples_per_episode;
  SceneEnv env(suite, env_options);
  return pretrain_intrinsic(agent, buffer, env,
                            {config.pretrain_steps, config.pretrain_episode_steps,
                             derive_seed(config.seed, {kTagPretrain})});
}

std::unique_ptr<Judge> make_judge(const RunConfig& config, const std::vector<std::string>& catalog) {
  JudgeNetworkOptions net = config.judge_network;
  net.seed = derive_seed(config.seed, {kTagJudge});
  if (config.judge == "generative") return std::make_unique<GenerativeJudge>(catalog, net);
  if (config.judge == "contrastive") {
    auto j = std::make_unique<ContrastiveJudge>(catalog, net, config.temperature);
    j->negatives = negative_pool_from_string(config.negatives);
    return j;
  }
  const std::string address = config.judge.substr(std::string_view("external:").size());
  return std::make_unique<ExternalJudge>(address, config.external_mode, open_transport(address),
                                         std::chrono::milliseconds(config.timeout_ms));
}

ScoredEpisode score_episode(Judge& judge, std::span<const SampleRecord> samples) {
  ScoredEpisode s;
  s.inference = judge.infer(samples);
  if (s.inference.verdicts.size() != samples.size()) throw JudgeError("judge returned the wrong number of verdicts");
  s.j2 = batch_reward(s.inference, judge.kind());
  return s;
}

std::vector<SampleRecord> sample_for_batch(const std::vector<SampleRecord>& samples, double eta,
                                           std::size_t samples_per_episode, std::uint64_t seed) {
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("sampling rate must lie in (0, 1]");
  const auto want = static_cast<std::size_t>(std::llround(eta * static_cast<double>(samples_per_episode)));
  const std::size_t n = std::min(want, samples.size());
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::size_t> pick;
  std::mt19937_64 rng(seed);
  std::sample(idx.begin(), idx.end(), std::back_inserter(pick), static_cast<std::ptrdiff_t>(n), rng);
  std::vector<SampleRecord> out;
  out.reserve(n);
  for (auto i : pick) out.push_back(samples[i]);
  return out;
}

double IterationRecord::mean_j2() const {
  if (j2.empty()) return 0.0;
  return std::accumulate(j2.begin(), j2.end(), 0.0) / static_cast<double>(j2.size());
}

std::vector<double> RunReport::validation_history() const {
  std::vector<double> h;
  for (const auto& r : iterations) h.push_back(r.val_metric);
  return h;
}

ojson RunReport::to_json(bool with_timing) const {
  ojson j;
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  j["agent"] = agent;
  j["judge"] = judge;
  j["completed_iterations"] = completed_iterations;
  j["stop_reason"] = stop_reason;
  j["early_stop_iteration"] = early_stop_iteration ? ojson(*early_stop_iteration) : ojson(nullptr);
  j["best_iteration"] = best_iteration;
  j["failure"] = failure ? ojson(*failure) : ojson(nullptr);
  j["incidents"] = incidents;
  j["final_test_metric"] = final_test_metric ? ojson(*final_test_metric) : ojson(nullptr);
  j["total_valid"] = total_valid;
  j["total_attempts"] = total_attempts;
  j["validation_digest"] = validation_digest;
  j["test_digest"] = test_digest;
  j["samples_digest"] = samples_digest;
  j["iterations"] = ojson::array();
  for (const auto& r : iterations) {
    ojson o;
    o["iteration"] = r.iteration;
    o["cumulative_valid"] = r.cumulative_valid;
    o["cumulative_attempts"] = r.cumulative_attempts;
    o["val_metric"] = r.val_metric;
    o["test_metric"] = r.test_metric ? ojson(*r.test_metric) : ojson(nullptr);
    o["j2"] = r.j2;
    o["mean_j2"] = r.mean_j2();
    o["batch_size"] = r.batch_size;
    o["truncated_episodes"] = r.truncated_episodes;
    o["discarded_episodes"] = r.discarded_episodes;
    if (with_timing) o["seconds"] = r.seconds;
    j["iterations"].push_back(std::move(o));
  }
  if (with_timing) j["wall_seconds"] = wall_seconds;
  return j;
}

std::string RunReport::digest() const { return sha256_hex(to_json(false).dump()); }

struct Orchestrator::Writers {
  std::ofstream samples, verdicts, metrics, losses, validation;
};

Orchestrator::Orchestrator(RunConfig config, std::filesystem::path run_dir, std::unique_ptr<Judge> judge)
    : config_(std::move(config)), run_dir_(std::move(run_dir)), judge_(std::move(judge)) {}

Orchestrator::~Orchestrator() = default;

void Orchestrator::prepare() {
  if (prepared_) return;
  std::filesystem::create_directories(run_dir_);
  {
    std::ofstream out(run_dir_ / "config.json", std::ios::trunc);
    ojson c;
    c["config"] = config_.resolved;
    c["digest"] = config_.digest;
    out << c.dump(2) << '\n';
  }
  train_suite_ = config_.train_scenes ? load_suite(*config_.train_scenes) : training_suite();
  test_suite_ = config_.test_scenes ? load_suite(*config_.test_scenes) : test_suite();

  validation_ = generate_fixed_set(train_suite_, config_.validation_count, fixed_set_seed(config_.dataset_seed, false));
  write_fixed_set(run_dir_ / "datasets" / "validation.jsonl", validation_);
  if (config_.test_count > 0) {
    test_ = generate_fixed_set(test_suite_, config_.test_count, fixed_set_seed(config_.dataset_seed, true));
    write_fixed_set(run_dir_ / "datasets" / "test.jsonl", test_);
  }

  std::vector<std::string> catalog;
  for (const auto& o : train_suite_.catalog) catalog.push_back(o.name);
  if (!judge_) judge_ = make_judge(config_, catalog);

  EnvOptions env_options;
  env_options.samples_per_episode = config_.samples_per_episode;
  env_ = std::make_unique<SceneEnv>(train_suite_, env_options);

  if (config_.agent == "sac") {
    const SacOptions o = agent_options(config_);
    sac_ = std::make_unique<SacAgent>(kObservationSize, o);
    buffer_ = std::make_unique<AgentBuffer>(o.buffer_capacity, kObservationSize);
    if (config_.agent_checkpoint) {
      load_agent(*config_.agent_checkpoint, *sac_);
    } else if (config_.pretrain_steps > 0) {
      pretrain_for_config(config_, train_suite_, *sac_, *buffer_);
      if (config_.save_checkpoints) save_agent(run_dir_ / "checkpoints" / "agent_pretrained", *sac_);
    }
  } else {
    random_ = std::make_unique<RandomAgent>(derive_seed(config_.seed, {kTagRandomAgent}));
  }

  writers_ = std::make_unique<Writers>();
  auto open = [&](std::ofstream& f, const char* name) {
    f.open(run_dir_ / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + (run_dir_ / name).string());
  };
  open(writers_->samples, "samples.jsonl");
  open(writers_->verdicts, "verdicts.jsonl");
  open(writers_->metrics, "metrics.csv");
  open(writers_->losses, "finetune_loss.csv");
  open(writers_->validation, "validation.csv");
  writers_->metrics << "iteration,cumulative_valid,cumulative_attempts,val_metric,test_metric,mean_J2,batch_size\n";
  writers_->losses << "iteration,step,loss\n";
  writers_->validation << "iteration,step,val_metric\n";

  report_ = RunReport{};
  report_.seed = config_.seed;
  report_.config_digest = config_.digest;
  report_.agent = config_.agent;
  report_.judge = config_.judge;
  report_.validation_digest = validation_.digest;
  report_.test_digest = test_.digest;
  prepared_ = true;
}

Eigen::Vector3d Orchestrator::act(const Eigen::VectorXd& observation) {
  if (sac_) return sac_->select_action(observation, config_.stochastic_actions);
  return random_->act();
}

void Orchestrator::learn() {
  if (sac_) sac_->update(*buffer_);
}

bool Orchestrator::budget_left() const { return !config_.budget || report_.total_attempts < *config_.budget; }

EpisodeResult Orchestrator::run_episode(std::int64_t iteration) {
  prepare();
  EpisodeResult ep;
  const std::size_t t0 = config_.samples_per_episode;
  const std::size_t t_max = config_.max_steps();
  std::vector<SceneSnapshot> snapshots;
  constexpr int kRetries = 3;
  for (int attempt = 0; attempt <= kRetries && snapshots.empty(); ++attempt) {
    const std::uint64_t e = episode_counter_++;
    env_->reset_episode(e, derive_seed(config_.seed, {kTagEpisode, e}));
    std::size_t steps = 0;
    while (snapshots.size() < t0 && steps < t_max) {
      if (!budget_left()) {
        ep.budget_exhausted = true;
        break;
      }
      Transition t;
      t.observation = normalize_observation(env_->observe());
      t.action = act(t.observation);
      auto r = env_->step(t.action);
      ++steps;
      ++ep.steps;
      ++report_.total_attempts;
      t.reward = r.reward;
      ep.j1 += r.reward;
      if (r.snapshot) {
        snapshots.push_back(std::move(*r.snapshot));
        ++ep.valid;
        ++report_.total_valid;
        env_->advance_scene(snapshots.size());
      }
      t.next_observation = normalize_observation(env_->observe());
      ep.transitions.push(std::move(t));
      if (sac_) {
        // Held transitions are not yet in the buffer; earlier episodes are.
        learn();
      }
    }
    if (ep.budget_exhausted) break;
    if (snapshots.empty() && attempt < kRetries) {
      // Nothing usable: close this attempt without bonus and start over.
      if (!ep.transitions.empty() && buffer_) {
        ep.transitions.inject_terminal_bonus(0.0, config_.beta);
        ep.transitions.flush_into(*buffer_);
        ep.transitions = EpisodeTransitions{};
      }
    }
  }
  if (ep.budget_exhausted) return ep;
  if (snapshots.empty()) throw std::runtime_error("episode produced no valid placement after retries");

  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    const std::uint64_t id = sample_counter_++;
    ep.samples.push_back(make_sample(snapshots[i], id, derive_seed(config_.seed, {kTagPrompt, id}),
                                     static_cast<std::int64_t>(episode_counter_ - 1), iteration));
  }
  if (snapshots.size() < t0) {
    ep.truncated = true;
    const std::size_t have = ep.samples.size();
    for (std::size_t k = 0; ep.samples.size() < t0; ++k) {
      SampleRecord copy = ep.samples[k % have];
      copy.id = sample_counter_++;
      ep.samples.push_back(std::move(copy));
      ++ep.padded;
    }
  }
  return ep;
}

void Orchestrator::log_metrics_row(const IterationRecord& r) {
  auto& m = writers_->metrics;
  m << r.iteration << ',' << r.cumulative_valid << ',' << r.cumulative_attempts << ',' << num(r.val_metric) << ','
    << (r.test_metric ? num(*r.test_metric) : std::string()) << ',' << (r.j2.empty() ? std::string() : num(r.mean_j2()))
    << ',' << r.batch_size << '\n';
  m.flush();
}

bool Orchestrator::run_iteration(std::size_t iteration) {
  prepare();
  const auto started = std::chrono::steady_clock::now();
  batch_.clear();
  IterationRecord rec;
  rec.iteration = iteration;
  std::vector<SampleRecord> iteration_samples;
  std::vector<std::string> verdict_lines;

  for (std::size_t e = 0; e < config_.episodes; ++e) {
    auto ep = run_episode(static_cast<std::int64_t>(iteration));
    if (ep.budget_exhausted) {
      if (!ep.transitions.empty() && buffer_) {
        ep.transitions.inject_terminal_bonus(0.0, config_.beta);
        ep.transitions.flush_into(*buffer_);
      }
      return false;
    }
    if (ep.truncated) ++rec.truncated_episodes;
    const std::string before = judge_->weight_digest();
    double j2 = 0.0;
    bool discarded = false;
    try {
      auto scored = score_episode(*judge_, ep.samples);
      j2 = scored.j2;
      for (const auto& v : scored.inference.verdicts) {
        ojson o;
        o["iteration"] = iteration;
        o["episode"] = ep.samples.front().episode;
        o["sample_id"] = v.sample_id;
        o["flagged"] = v.flagged;
        if (v.flagged) o["flag_reason"] = v.flag_reason;
        o["truth"] = terms_json(v.truth);
        if (judge_->kind() == JudgeKind::generative) {
          o["predicted"] = terms_json(v.predicted);
          o["score"] = v.score;
        } else {
          o["similarities"] = v.similarities;
          o["correct"] = v.correct;
        }
        verdict_lines.push_back(o.dump());
      }
    } catch (const std::exception& ex) {
      discarded = true;
      ++rec.discarded_episodes;
      report_.incidents.push_back("iteration " + std::to_string(iteration) + " episode " + std::to_string(e) +
                                  ": judge failure: " + ex.what());
      std::cerr << "warning: " << report_.incidents.back() << '\n';
    }
    if (judge_->weight_digest() != before) throw std::logic_error("judge weights changed during inference");

    if (buffer_) {
      ep.transitions.inject_terminal_bonus(discarded ? 0.0 : j2, config_.beta);
      ep.transitions.flush_into(*buffer_);
    }
    if (discarded) continue;
    rec.j2.push_back(j2);
    auto chosen = sample_for_batch(ep.samples, config_.sampling_rate, config_.samples_per_episode,
                                   derive_seed(config_.seed, {kTagBatch, iteration, e}));
    batch_.insert(batch_.end(), chosen.begin(), chosen.end());
    iteration_samples.insert(iteration_samples.end(), ep.samples.begin(), ep.samples.end());
  }
  if (batch_.empty()) throw std::runtime_error("iteration " + std::to_string(iteration) + " produced no scored episode");

  for (const auto& s : iteration_samples) writers_->samples << to_jsonl_line(s) << '\n';
  writers_->samples.flush();
  for (const auto& l : verdict_lines) writers_->verdicts << l << '\n';
  writers_->verdicts.flush();

  FineTuneOptions ft = config_.finetune;
  ft.seed = derive_seed(config_.seed, {kTagFinetune, iteration});
  auto validate = [this] { return judge_->validation_metric(validation_.samples); };
  const auto ftr = judge_->finetune(batch_, ft, validate);
  for (std::size_t k = 0; k < ftr.losses.size(); ++k)
    writers_->losses << iteration << ',' << (k + 1) << ',' << num(ftr.losses[k]) << '\n';
  writers_->losses.flush();
  for (const auto& p : ftr.validation)
    writers_->validation << iteration << ',' << p.step << ',' << num(p.metric) << '\n';
  writers_->validation.flush();

  rec.batch_size = batch_.size();
  rec.val_metric = judge_->validation_metric(validation_.samples);
  if (config_.test_every_iteration && !test_.samples.empty()) rec.test_metric = judge_->validation_metric(test_.samples);
  rec.cumulative_valid = report_.total_valid;
  rec.cumulative_attempts = report_.total_attempts;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (config_.save_checkpoints) {
    char name[32];
    std::snprintf(name, sizeof name, "iter_%03zu", iteration);
    judge_->save(run_dir_ / "checkpoints" / name / "judge");
    if (sac_) save_agent(run_dir_ / "checkpoints" / name / "agent", *sac_);
  }
  log_metrics_row(rec);
  report_.iterations.push_back(std::move(rec));
  report_.completed_iterations = iteration;
  batch_.clear();
  return true;
}

void Orchestrator::write_report() {
  writers_->samples.flush();
  report_.samples_digest = sha256_file(run_dir_ / "samples.jsonl");
  std::ofstream out(run_dir_ / "report.json", std::ios::trunc);
  ojson j = report_.to_json(true);
  j["report_digest"] = report_.digest();
  out << j.dump(2) << '\n';
}

RunReport Orchestrator::run() {
  const auto started = std::chrono::steady_clock::now();
  try {
    prepare();
    IterationRecord base;
    base.iteration = 0;
    base.val_metric = judge_->validation_metric(validation_.samples);
    if (config_.test_every_iteration && !test_.samples.empty()) base.test_metric = judge_->validation_metric(test_.samples);
    log_metrics_row(base);
    report_.iterations.push_back(base);

    for (std::size_t it = 1; it <= config_.iterations; ++it) {
      if (!run_iteration(it)) {
        report_.stop_reason = "budget";
        break;
      }
      if (config_.early_stop_enabled && config_.agent == "sac") {
        const auto h = report_.validation_history();
        if (early_stop(h, config_.early_stop_policy)) {
          report_.stop_reason = "early_stop";
          report_.early_stop_iteration = it;
          break;
        }
      }
      if (!budget_left()) {
        report_.stop_reason = "budget";
        break;
      }
    }
    const auto h = report_.validation_history();
    report_.best_iteration = static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
    if (!test_.samples.empty()) report_.final_test_metric = judge_->validation_metric(test_.samples);
  } catch (const std::exception& e) {
    report_.stop_reason = "failure";
    report_.failure = e.what();
  }
  report_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (writers_) write_report();
  return report_;
}

RunReport run_loop(const RunConfig& config, const std::filesystem::path& run_dir, std::unique_ptr<Judge> judge) {
  Orchestrator o(config, run_dir, std::move(judge));
  return o.run();
}

}  // namespace rls3
