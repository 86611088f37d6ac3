#include "rls3/datasets.hpp"
#include "rls3/orchestrator.hpp"
#include "rls3/wire.hpp"
#include "support.hpp"

#include <doctest.h>

#include <unistd.h>

#include <cstdio>

using namespace rls3;

namespace {

std::string stub(const std::string& fault = "none") { return std::string(RLS3_STUB) + " --fault " + fault; }

const std::vector<SampleRecord>& samples() {
  static const auto set = generate_fixed_set(training_suite(), 12, 55);
  return set.samples;
}

ExternalJudge external(const std::string& fault, JudgeKind mode, int timeout_ms = 5000) {
  const auto cmd = stub(fault);
  return ExternalJudge(cmd, mode, open_transport(cmd), std::chrono::milliseconds(timeout_ms));
}

}  // namespace

TEST_CASE("all-correct stub gives J2 = 1 for the generative mode") {
  auto j = external("none", JudgeKind::generative);
  const auto r = j.infer(samples());
  REQUIRE(r.verdicts.size() == samples().size());
  for (const auto& v : r.verdicts) CHECK(v.score == 5);
  CHECK(batch_reward(r, JudgeKind::generative) == 1.0);
  const auto before = j.weight_digest();
  j.infer(samples());
  CHECK(j.weight_digest() == before);
  j.finetune(samples(), FineTuneOptions{}, {});
  CHECK(j.weight_digest() != before);
}

TEST_CASE("contrastive stub loss 0 gives J2 = 0") {
  auto j = external("none", JudgeKind::contrastive);
  const auto r = j.infer(samples());
  CHECK(batch_reward(r, JudgeKind::contrastive) == 0.0);
  CHECK(j.validation_metric(samples()) == 1.0);
}

TEST_CASE("wire faults surface as typed errors") {
  {
    auto j = external("wrong-id", JudgeKind::generative);
    CHECK_THROWS_AS(j.infer(samples()), WireIdMismatch);
  }
  {
    auto j = external("garbage", JudgeKind::generative);
    CHECK_THROWS_AS(j.infer(samples()), WireMalformed);
  }
  {
    auto j = external("wrong-count", JudgeKind::generative);
    CHECK_THROWS_AS(j.infer(samples()), WireMalformed);
  }
  {
    auto j = external("silent", JudgeKind::generative, 200);
    CHECK_THROWS_AS(j.infer(samples()), WireTimeout);
  }
  CHECK_THROWS_AS(open_transport("tcp://127.0.0.1:notaport"), WireError);
}

TEST_CASE("external judges come from the config") {
  const auto cfg = resolve_config(std::nullopt, {"judge.kind=" + nlohmann::json("external:" + stub()).dump()});
  CHECK(cfg.judge_kind() == JudgeKind::generative);
  auto j = make_judge(cfg, {});
  CHECK(j->validation_metric(samples()) == 5.0);
}

TEST_CASE("wire requests carry every sample") {
  const auto req = wire_request("infer", JudgeKind::generative, samples());
  CHECK(req.at("op") == "infer");
  CHECK(req.at("mode") == "generative");
  CHECK(req.at("samples").size() == samples().size());
  CHECK(req.at("samples")[0].at("caption") == samples()[0].caption);
}

TEST_CASE("stub over tcp") {
  const int port = 20000 + static_cast<int>(::getpid() % 20000);
  const auto cmd = std::string(RLS3_STUB) + " --listen " + std::to_string(port);
  FILE* proc = ::popen(cmd.c_str(), "r");
  REQUIRE(proc != nullptr);
  char line[64] = {};
  REQUIRE(std::fgets(line, sizeof line, proc) != nullptr);
  CHECK(std::string(line) == "listening\n");
  {
    const auto address = "tcp://127.0.0.1:" + std::to_string(port);
    ExternalJudge j(address, JudgeKind::generative, open_transport(address), std::chrono::milliseconds(5000));
    CHECK(j.validation_metric(samples()) == 5.0);
  }
  CHECK(::pclose(proc) == 0);
}

TEST_CASE("runs against external stub judges") {
  auto cfg = resolve_config(std::nullopt, {"loop.iterations=1", "loop.episodes=2", "loop.samples_per_episode=4",
                                           "agent.kind=random", "datasets.validation_count=8",
                                           "datasets.test_count=8", "judge.timeout_ms=2000",
                                           "output.save_checkpoints=false"});
  auto judge = std::make_unique<ExternalJudge>(stub("none"), JudgeKind::generative, open_transport(stub("none")),
                                               std::chrono::milliseconds(5000));
  const auto good = run_loop(cfg, testing::scratch_dir("wire_run"), std::move(judge));
  CHECK(good.stop_reason == "completed");
  REQUIRE(good.iterations.size() == 2);
  for (double j : good.iterations[1].j2) CHECK(j == 1.0);
  CHECK(good.iterations[1].val_metric == 5.0);

  auto bad = std::make_unique<ExternalJudge>(stub("wrong-count"), JudgeKind::generative,
                                             open_transport(stub("wrong-count")), std::chrono::milliseconds(5000));
  const auto r = run_loop(cfg, testing::scratch_dir("wire_bad"), std::move(bad));
  // validation itself fails, so the run stops with a failure
  CHECK(r.stop_reason == "failure");
}
