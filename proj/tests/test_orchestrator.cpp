#include "rls3/orchestrator.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace rls3;

namespace {

std::vector<std::string> catalog() {
  std::vector<std::string> names;
  for (const auto& o : training_suite().catalog) names.push_back(o.name);
  return names;
}

std::vector<std::string> tiny_overrides() {
  return {"loop.iterations=2",          "loop.episodes=3",
          "loop.samples_per_episode=6", "finetune.steps=4",
          "finetune.cadence=2",         "finetune.minibatch=8",
          "agent.pretrain_steps=300",   "agent.warmup=100",
          "agent.minibatch=32",         "agent.hidden_width=16",
          "datasets.validation_count=40", "datasets.test_count=40",
          "output.save_checkpoints=false"};
}

RunConfig tiny_config(std::vector<std::string> extra = {}) {
  auto o = tiny_overrides();
  o.insert(o.end(), extra.begin(), extra.end());
  return resolve_config(std::nullopt, o);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Records the order of calls and can misbehave on request.
class SpyJudge final : public Judge {
 public:
  explicit SpyJudge(std::vector<std::string>* log) : inner_(catalog(), {2, 16, 3e-3, 1}), log_(log) {}
  JudgeKind kind() const override { return JudgeKind::generative; }
  InferenceResult infer(std::span<const SampleRecord> samples) override {
    log_->push_back("infer");
    ++calls_;
    if (calls_ == fail_on) throw JudgeError("spy failure");
    if (calls_ == tamper_on) inner_.finetune(samples, FineTuneOptions{1, 1, 8, 0}, {});
    return inner_.infer(samples);
  }
  FineTuneReport finetune(std::span<const SampleRecord> batch, const FineTuneOptions& options,
                          const ValidationFn& validate) override {
    log_->push_back("finetune:" + std::to_string(batch.size()));
    return inner_.finetune(batch, options, validate);
  }
  double validation_metric(std::span<const SampleRecord> samples) override {
    return inner_.validation_metric(samples);
  }
  std::string weight_digest() const override { return inner_.weight_digest(); }
  void save(const std::filesystem::path& d) const override { inner_.save(d); }

  int fail_on = -1;
  int tamper_on = -1;

 private:
  GenerativeJudge inner_;
  std::vector<std::string>* log_;
  int calls_ = 0;
};

}  // namespace

TEST_CASE("batch sampling takes round(eta * T0) distinct samples in order") {
  std::vector<SampleRecord> samples(200);
  for (std::size_t k = 0; k < samples.size(); ++k) samples[k].id = k;
  const auto half = sample_for_batch(samples, 0.5, 200, 3);
  CHECK(half.size() == 100);
  std::set<std::uint64_t> ids;
  for (std::size_t k = 0; k < half.size(); ++k) {
    ids.insert(half[k].id);
    if (k) CHECK(half[k - 1].id < half[k].id);
  }
  CHECK(ids.size() == 100);
  CHECK(sample_for_batch(samples, 1.0, 200, 3).size() == 200);
  CHECK(sample_for_batch(samples, 0.5, 200, 3)[7].id == half[7].id);
  CHECK(sample_for_batch(samples, 0.5, 200, 4)[7].id != half[7].id);
}

TEST_CASE("early stopping on hand-built histories") {
  const EarlyStopPolicy gen{15, 10, 0.02};
  std::vector<double> flat(16, 2.0);  // baseline plus 15 iterations
  CHECK(early_stop(flat, gen));
  flat.pop_back();
  CHECK_FALSE(early_stop(flat, gen));  // only 14 done

  // late improvement inside the window keeps going
  std::vector<double> late(16, 2.0);
  late[12] = 2.05;
  CHECK_FALSE(early_stop(late, gen));
  late[12] = 2.015;  // within epsilon
  CHECK(early_stop(late, gen));

  // a strictly improving history never stops
  std::vector<double> rising;
  for (int k = 0; k <= 60; ++k) {
    rising.push_back(1.0 + 0.03 * k);
    CHECK_FALSE(early_stop(rising, gen));
  }

  const EarlyStopPolicy con{10, 5, 0.005};
  std::vector<double> h = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7};
  CHECK(early_stop(h, con));
  h[8] = 0.71;
  CHECK_FALSE(early_stop(h, con));
  CHECK(default_early_stop(JudgeKind::generative).patience == 10);
  CHECK(default_early_stop(JudgeKind::contrastive).epsilon == 0.005);
}

TEST_CASE("config resolution") {
  const auto d = resolve_config(std::nullopt, {});
  CHECK(d.finetune.steps == 64);
  CHECK(d.finetune.cadence == 32);
  const auto c = resolve_config(std::nullopt, {"judge.kind=contrastive"});
  CHECK(c.finetune.steps == 4);
  CHECK(c.finetune.cadence == 1);
  CHECK(c.early_stop_policy.patience == 5);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"loop.bogus=1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"loop.iterations=\"ten\""}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"loop.iterations=-1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"loop.sampling_rate=0.01"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"noequals"}), ConfigError);
  CHECK_THROWS_AS(resolve_config("/nonexistent/config.json", {}), ConfigError);

  const auto a = resolve_config(std::nullopt, {"loop.iterations=3"});
  const auto b = resolve_config(std::nullopt, {"loop.iterations=3"});
  CHECK(a.digest == b.digest);
  CHECK(a.digest != d.digest);
  CHECK(a.iterations == 3);

  const auto desk = resolve_config(RLS3_SOURCE_DIR "/configs/desk.json", {});
  CHECK(desk.samples_per_episode == 20);
  CHECK(desk.per_episode_batch() == 10);
  const auto full = resolve_config(RLS3_SOURCE_DIR "/configs/full_generative.json", {});
  CHECK(full.iterations == 50);
  CHECK(full.samples_per_episode == 200);
  CHECK(full.finetune.steps == 256);
  const auto pc = resolve_config(RLS3_SOURCE_DIR "/configs/full_contrastive.json", {});
  CHECK(pc.finetune.steps == 10);
  CHECK(pc.finetune.cadence == 1);
  CHECK(pc.judge_kind() == JudgeKind::contrastive);
}

TEST_CASE("a small run keeps the loop bookkeeping") {
  const auto dir = testing::scratch_dir("small_run");
  const auto cfg = tiny_config();
  std::vector<std::string> log;
  auto spy = std::make_unique<SpyJudge>(&log);
  const auto report = run_loop(cfg, dir, std::move(spy));
  REQUIRE(report.stop_reason == "completed");
  REQUIRE(report.iterations.size() == 3);
  CHECK(report.completed_iterations == 2);

  // E inferences strictly before each fine-tune, on E * round(eta T0) samples
  const std::vector<std::string> want = {"infer", "infer", "infer", "finetune:9",
                                         "infer", "infer", "infer", "finetune:9"};
  CHECK(log == want);
  std::uint64_t prev_valid = 0;
  for (std::size_t k = 1; k < report.iterations.size(); ++k) {
    const auto& r = report.iterations[k];
    CHECK(r.batch_size == 9);
    CHECK(r.j2.size() == 3);
    if (r.truncated_episodes == 0) CHECK(r.cumulative_valid - prev_valid == 18);
    CHECK(r.cumulative_valid - prev_valid <= 18);
    prev_valid = r.cumulative_valid;
    for (double j : r.j2) CHECK(j >= 0.0);
  }
  CHECK(report.final_test_metric.has_value());

  for (const char* f : {"config.json", "samples.jsonl", "verdicts.jsonl", "metrics.csv", "finetune_loss.csv",
                        "validation.csv", "report.json", "datasets/validation.jsonl", "datasets/test.jsonl"})
    CHECK(std::filesystem::exists(dir / f));
  std::ifstream samples(dir / "samples.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(samples, l);) ++lines;
  CHECK(lines == 2 * 3 * 6);
  std::ifstream metrics(dir / "metrics.csv");
  std::size_t rows = 0;
  for (std::string l; std::getline(metrics, l);) ++rows;
  CHECK(rows == 1 + 3);
  std::ifstream losses(dir / "finetune_loss.csv");
  rows = 0;
  for (std::string l; std::getline(losses, l);) ++rows;
  CHECK(rows == 1 + 2 * 4);
}

TEST_CASE("runs with the same config are byte identical") {
  const auto cfg = tiny_config({"agent.kind=random"});
  const auto d1 = testing::scratch_dir("det_a");
  const auto d2 = testing::scratch_dir("det_b");
  const auto r1 = run_loop(cfg, d1);
  const auto r2 = run_loop(cfg, d2);
  CHECK(r1.digest() == r2.digest());
  CHECK(slurp(d1 / "samples.jsonl") == slurp(d2 / "samples.jsonl"));
  CHECK(slurp(d1 / "verdicts.jsonl") == slurp(d2 / "verdicts.jsonl"));
  const auto r3 = run_loop(tiny_config({"agent.kind=random", "seed=1"}), testing::scratch_dir("det_c"));
  CHECK(r3.samples_digest != r1.samples_digest);
}

TEST_CASE("a judge that changes weights during inference fails the run") {
  std::vector<std::string> log;
  auto spy = std::make_unique<SpyJudge>(&log);
  spy->tamper_on = 2;
  const auto report = run_loop(tiny_config({"agent.kind=random"}), testing::scratch_dir("barrier"), std::move(spy));
  CHECK(report.stop_reason == "failure");
  REQUIRE(report.failure.has_value());
  CHECK(report.failure->find("changed during inference") != std::string::npos);
}

TEST_CASE("a judge failure discards one episode and records an incident") {
  std::vector<std::string> log;
  auto spy = std::make_unique<SpyJudge>(&log);
  spy->fail_on = 2;
  const auto report = run_loop(tiny_config({"agent.kind=random"}), testing::scratch_dir("incident"), std::move(spy));
  CHECK(report.stop_reason == "completed");
  CHECK(report.incidents.size() == 1);
  CHECK(report.iterations[1].discarded_episodes == 1);
  CHECK(report.iterations[1].j2.size() == 2);
  CHECK(report.iterations[1].batch_size == 6);
}

TEST_CASE("an attempt budget ends the run early") {
  const auto report =
      run_loop(tiny_config({"agent.kind=random", "loop.iterations=20", "loop.budget=60"}), testing::scratch_dir("budget"));
  CHECK(report.stop_reason == "budget");
  CHECK(report.total_attempts <= 60);
  CHECK(report.completed_iterations < 20);
  CHECK(report.iterations.size() == report.completed_iterations + 1);
}
