// rls3 command-line entry point.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include "rls3/datasets.hpp"
#include "rls3/digest.hpp"
#include "rls3/orchestrator.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>

namespace {

using namespace rls3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string run_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string judge;
  std::string agent;
  std::optional<std::uint64_t> budget;
};

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--run-dir", c.run_dir, "output directory (default: $RLS3_RUN_DIR)");
  cmd->add_option("--set", c.overrides, "dotted key=value override, repeatable");
  cmd->add_option("--seed", c.seed, "run seed");
}

std::filesystem::path run_dir_of(const Common& c) {
  if (!c.run_dir.empty()) return c.run_dir;
  if (const char* env = std::getenv("RLS3_RUN_DIR"); env && *env) return env;
  throw UsageError("no run directory: pass --run-dir or set RLS3_RUN_DIR");
}

RunConfig resolve(const Common& c) {
  std::vector<std::string> ov = c.overrides;
  if (c.seed) ov.push_back("seed=" + std::to_string(*c.seed));
  if (!c.judge.empty()) ov.push_back("judge.kind=" + nlohmann::json(c.judge).dump());
  if (!c.agent.empty()) ov.push_back("agent.kind=" + c.agent);
  if (c.budget) ov.push_back("loop.budget=" + std::to_string(*c.budget));
  std::optional<std::filesystem::path> file;
  if (!c.config.empty()) file = c.config;
  return resolve_config(file, ov);
}

SceneSuite suite_named(const std::string& name) {
  if (name == "train") return training_suite();
  if (name == "test") return test_suite();
  return load_suite(name);
}

std::vector<std::string> catalog_of(const SceneSuite& s) {
  std::vector<std::string> names;
  for (const auto& o : s.catalog) names.push_back(o.name);
  return names;
}

int cmd_pretrain(const Common& c) {
  const RunConfig config = resolve(c);
  const auto dir = run_dir_of(c);
  const SceneSuite suite = config.train_scenes ? load_suite(*config.train_scenes) : training_suite();
  SacAgent agent(kObservationSize, agent_options(config));
  AgentBuffer buffer(config.sac.buffer_capacity, kObservationSize);
  const auto rep = pretrain_for_config(config, suite, agent, buffer);
  save_agent(dir / "agent", agent);
  std::cout << "pretrained " << rep.steps << " steps, " << rep.valid << " valid, " << rep.updates << " updates\n"
            << "checkpoint " << (dir / "agent").string() << '\n';
  return 0;
}

int cmd_run(const Common& c) {
  const RunConfig config = resolve(c);
  const auto dir = run_dir_of(c);
  const RunReport report = run_loop(config, dir);
  std::cout << "stop_reason " << report.stop_reason << "\n"
            << "completed_iterations " << report.completed_iterations << "\n"
            << "best_iteration " << report.best_iteration << "\n"
            << "total_valid " << report.total_valid << "\n"
            << "total_attempts " << report.total_attempts << "\n"
            << "report_digest " << report.digest() << '\n';
  if (report.failure) {
    std::cerr << "run failed: " << *report.failure << '\n';
    return 2;
  }
  return 0;
}

int cmd_gen_fixed_set(const Common& c, std::size_t count, const std::string& scenes) {
  const RunConfig config = resolve(c);
  const auto dir = run_dir_of(c);
  const bool test = scenes == "test";
  const SceneSuite suite = suite_named(scenes);
  const FixedSet set = generate_fixed_set(suite, count, fixed_set_seed(config.dataset_seed, test));
  if (auto issue = replay_samples(set.samples))
    throw std::runtime_error("generated record " + std::to_string(issue->line) + " fails replay: " + issue->reason);
  const std::string name = (scenes == "train" || scenes == "test") ? scenes : std::string("custom");
  const auto path = dir / (name + "_" + std::to_string(count) + ".jsonl");
  write_fixed_set(path, set);
  std::cout << path.string() << ' ' << set.digest << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& dataset, const std::string& checkpoint) {
  const RunConfig config = resolve(c);
  const auto dir = run_dir_of(c);
  const SceneSuite suite = config.train_scenes ? load_suite(*config.train_scenes) : training_suite();
  auto judge = make_judge(config, catalog_of(suite));
  if (!checkpoint.empty()) {
    if (auto* g = dynamic_cast<GenerativeJudge*>(judge.get())) g->load(checkpoint);
    else if (auto* k = dynamic_cast<ContrastiveJudge*>(judge.get())) k->load(checkpoint);
    else throw UsageError("--checkpoint applies to built-in judges only");
  }
  const FixedSet set = load_fixed_set(dataset);
  const auto result = judge->infer(set.samples);
  const auto per_term = per_term_breakdown(result.verdicts, set.samples, judge->kind());
  const auto per_complexity = complexity_breakdown(result.verdicts, set.samples, judge->kind());
  std::filesystem::create_directories(dir);
  write_breakdown_csv(dir / "breakdown_terms.csv", per_term);
  write_breakdown_csv(dir / "breakdown_complexity.csv", per_complexity);
  std::printf("metric %.6f\n", judge->validation_metric(set.samples));
  for (const auto& r : per_term.rows) std::printf("%-8s %.4f %zu\n", r.key.c_str(), r.mean, r.count);
  for (const auto& r : per_complexity.rows) std::printf("terms=%s %.4f %zu\n", r.key.c_str(), r.mean, r.count);
  return 0;
}

int cmd_export_plots(const Common& c) {
  const auto dir = run_dir_of(c);
  const auto exp = export_plot_data(dir);
  for (const auto& w : exp.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& p : exp.written) std::cout << p.string() << '\n';
  return exp.written.empty() ? 2 : 0;
}

int cmd_replay(const Common& c, const std::string& samples_path) {
  std::filesystem::path path = samples_path;
  if (path.empty()) path = run_dir_of(c) / "samples.jsonl";
  const auto samples = read_samples(path);
  if (auto issue = replay_samples(samples)) {
    std::cerr << path.string() << ": record " << issue->line << " (id " << issue->id << "): " << issue->reason << '\n';
    return 2;
  }
  std::cout << samples.size() << " records consistent\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic spatial-reasoning data generation loop"};
  app.require_subcommand(1);
  Common c;

  auto* pretrain = app.add_subcommand("pretrain", "intrinsic-only agent pretraining");
  add_config_flags(pretrain, c);

  auto* run = app.add_subcommand("run", "full generation and fine-tuning loop");
  add_config_flags(run, c);
  run->add_option("--judge", c.judge, "generative | contrastive | external:<addr>");
  run->add_option("--agent", c.agent, "sac | random")->check(CLI::IsMember({"sac", "random"}));
  run->add_option("--budget", c.budget, "generation budget in attempted steps");

  std::size_t count = 500;
  std::string scenes = "train";
  auto* gen = app.add_subcommand("gen-fixed-set", "write a fixed validation or test set");
  add_config_flags(gen, c);
  gen->add_option("--count", count, "number of records")->check(CLI::PositiveNumber);
  gen->add_option("--scenes", scenes, "train | test | path to a scene suite JSON");

  std::string dataset, checkpoint;
  auto* eval = app.add_subcommand("eval", "score a judge on a fixed set with breakdowns");
  add_config_flags(eval, c);
  eval->add_option("--judge", c.judge, "generative | contrastive | external:<addr>");
  eval->add_option("--dataset", dataset, "fixed-set JSONL")->required();
  eval->add_option("--checkpoint", checkpoint, "judge checkpoint directory");

  auto* plots = app.add_subcommand("export-plots", "write plot CSVs for a run directory");
  plots->add_option("--run-dir", c.run_dir, "run directory (default: $RLS3_RUN_DIR)");

  std::string samples_path;
  auto* replay = app.add_subcommand("replay", "re-derive relations from samples.jsonl and verify");
  replay->add_option("--run-dir", c.run_dir, "run directory (default: $RLS3_RUN_DIR)");
  replay->add_option("--samples", samples_path, "samples file (default: <run-dir>/samples.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return 1;
  }

  try {
    if (*pretrain) return cmd_pretrain(c);
    if (*run) return cmd_run(c);
    if (*gen) return cmd_gen_fixed_set(c, count, scenes);
    if (*eval) return cmd_eval(c, dataset, checkpoint);
    if (*plots) return cmd_export_plots(c);
    if (*replay) return cmd_replay(c, samples_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
