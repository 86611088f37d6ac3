#include "rls3/digest.hpp"
#include "rls3/orchestrator.hpp"

#include <cmath>
#include <fstream>
#include <map>

namespace rls3 {

using ojson = nlohmann::ordered_json;

ojson default_config_json() {
  ojson c;
  c["seed"] = 0;
  c["loop"] = {{"iterations", 10},     {"episodes", 4},           {"samples_per_episode", 20},
               {"sampling_rate", 0.5}, {"beta", 10.0},            {"max_steps_factor", 4},
               {"budget", nullptr},    {"test_every_iteration", false}};
  c["finetune"] = {{"steps", nullptr}, {"cadence", nullptr}, {"minibatch", 64}};
  c["judge"] = {{"kind", "generative"}, {"external_mode", "generative"}, {"learning_rate", 3e-3},
                {"hidden_layers", 2},   {"hidden_width", 64},            {"temperature", 0.07},
                {"negatives", "both"},  {"timeout_ms", 30000}};
  c["agent"] = {{"kind", "sac"},        {"pretrain_steps", 20000}, {"pretrain_episode_steps", 100},
                {"checkpoint", nullptr}, {"hidden_layers", 2},     {"hidden_width", 128},
                {"learning_rate", 3e-4}, {"gamma", 0.99},          {"alpha", 0.2},
                {"auto_alpha", false},   {"polyak", 0.995},        {"minibatch", 256},
                {"warmup", 1000},        {"buffer_capacity", 100000}, {"stochastic", true}};
  c["early_stop"] = {{"enabled", true}, {"min_iterations", nullptr}, {"patience", nullptr}, {"epsilon", nullptr}};
  c["datasets"] = {{"validation_count", 500}, {"test_count", 1000}, {"seed", 20240501},
                   {"train_scenes", nullptr},  {"test_scenes", nullptr}};
  c["output"] = {{"save_checkpoints", true}};
  return c;
}

namespace {

// Keys whose default is null accept either null or a value of this kind.
const std::map<std::string, ojson::value_t>& nullable_kinds() {
  static const std::map<std::string, ojson::value_t> kinds{
      {"loop.budget", ojson::value_t::number_unsigned},
      {"finetune.steps", ojson::value_t::number_unsigned},
      {"finetune.cadence", ojson::value_t::number_unsigned},
      {"agent.checkpoint", ojson::value_t::string},
      {"early_stop.min_iterations", ojson::value_t::number_unsigned},
      {"early_stop.patience", ojson::value_t::number_unsigned},
      {"early_stop.epsilon", ojson::value_t::number_float},
      {"datasets.train_scenes", ojson::value_t::string},
      {"datasets.test_scenes", ojson::value_t::string},
  };
  return kinds;
}

bool is_number(const ojson& j) { return j.is_number(); }

void check_type(const std::string& key, const ojson& def, const ojson& value) {
  if (value.is_null()) {
    if (def.is_null()) return;
    throw ConfigError("'" + key + "' may not be null");
  }
  ojson::value_t want = def.type();
  if (def.is_null()) want = nullable_kinds().at(key);
  const bool ok = [&] {
    switch (want) {
      case ojson::value_t::boolean: return value.is_boolean();
      case ojson::value_t::string: return value.is_string();
      case ojson::value_t::number_unsigned:
      case ojson::value_t::number_integer:
        return value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
      case ojson::value_t::number_float: return is_number(value);
      default: return false;
    }
  }();
  if (!ok) throw ConfigError("'" + key + "' has the wrong type: " + value.dump());
}

void merge(ojson& target, const ojson& source, const ojson& defaults, const std::string& prefix) {
  if (!source.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : source.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (defaults[key].is_object()) {
      merge(target[key], value, defaults[key], path);
    } else {
      check_type(path, defaults[key], value);
      target[key] = value;
    }
  }
}

void apply_override(ojson& config, const ojson& defaults, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  ojson value;
  try {
    value = ojson::parse(text);
  } catch (const ojson::exception&) {
    value = text;
  }
  ojson* node = &config;
  const ojson* def = &defaults;
  std::string path;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    path += (path.empty() ? "" : ".") + part;
    if (!def->is_object() || !def->contains(part)) throw ConfigError("unknown config key '" + path + "'");
    def = &(*def)[part];
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (def->is_object()) throw ConfigError("'" + key + "' is a section, not a value");
  check_type(key, *def, value);
  *node = value;
}

template <typename T>
T get(const ojson& j, const char* section, const char* key) {
  return j.at(section).at(key).get<T>();
}

}  // namespace

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  const ojson defaults = default_config_json();
  ojson resolved = defaults;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config " + file->string());
    ojson source;
    try {
      source = ojson::parse(in);
    } catch (const ojson::exception& e) {
      throw ConfigError("config " + file->string() + " is not valid JSON: " + e.what());
    }
    merge(resolved, source, defaults, "");
  }
  for (const auto& o : overrides) apply_override(resolved, defaults, o);
  return config_from_json(resolved);
}

RunConfig config_from_json(const ojson& j) {
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.iterations = get<std::size_t>(j, "loop", "iterations");
    c.episodes = get<std::size_t>(j, "loop", "episodes");
    c.samples_per_episode = get<std::size_t>(j, "loop", "samples_per_episode");
    c.sampling_rate = get<double>(j, "loop", "sampling_rate");
    c.beta = get<double>(j, "loop", "beta");
    c.max_steps_factor = get<std::size_t>(j, "loop", "max_steps_factor");
    if (!j["loop"]["budget"].is_null()) c.budget = get<std::uint64_t>(j, "loop", "budget");
    c.test_every_iteration = get<bool>(j, "loop", "test_every_iteration");

    c.finetune.minibatch = get<std::size_t>(j, "finetune", "minibatch");

    c.judge = get<std::string>(j, "judge", "kind");
    c.external_mode = judge_kind_from_string(get<std::string>(j, "judge", "external_mode"));
    c.judge_network.learning_rate = get<double>(j, "judge", "learning_rate");
    c.judge_network.hidden_layers = get<std::size_t>(j, "judge", "hidden_layers");
    c.judge_network.hidden_width = get<std::size_t>(j, "judge", "hidden_width");
    c.temperature = get<double>(j, "judge", "temperature");
    c.negatives = get<std::string>(j, "judge", "negatives");
    c.timeout_ms = get<std::size_t>(j, "judge", "timeout_ms");

    c.agent = get<std::string>(j, "agent", "kind");
    c.pretrain_steps = get<std::size_t>(j, "agent", "pretrain_steps");
    c.pretrain_episode_steps = get<std::size_t>(j, "agent", "pretrain_episode_steps");
    if (!j["agent"]["checkpoint"].is_null()) c.agent_checkpoint = get<std::string>(j, "agent", "checkpoint");
    c.sac.hidden_layers = get<std::size_t>(j, "agent", "hidden_layers");
    c.sac.hidden_width = get<std::size_t>(j, "agent", "hidden_width");
    c.sac.learning_rate = get<double>(j, "agent", "learning_rate");
    c.sac.gamma = get<double>(j, "agent", "gamma");
    c.sac.alpha = get<double>(j, "agent", "alpha");
    c.sac.auto_alpha = get<bool>(j, "agent", "auto_alpha");
    c.sac.polyak = get<double>(j, "agent", "polyak");
    c.sac.minibatch = get<std::size_t>(j, "agent", "minibatch");
    c.sac.warmup = get<std::size_t>(j, "agent", "warmup");
    c.sac.buffer_capacity = get<std::size_t>(j, "agent", "buffer_capacity");
    c.stochastic_actions = get<bool>(j, "agent", "stochastic");

    c.early_stop_enabled = get<bool>(j, "early_stop", "enabled");
    c.validation_count = get<std::size_t>(j, "datasets", "validation_count");
    c.test_count = get<std::size_t>(j, "datasets", "test_count");
    c.dataset_seed = get<std::uint64_t>(j, "datasets", "seed");
    if (!j["datasets"]["train_scenes"].is_null()) c.train_scenes = get<std::string>(j, "datasets", "train_scenes");
    if (!j["datasets"]["test_scenes"].is_null()) c.test_scenes = get<std::string>(j, "datasets", "test_scenes");
    c.save_checkpoints = get<bool>(j, "output", "save_checkpoints");
    // K and F default per judge kind: steps for generative, epochs for contrastive.
    const bool gen = c.judge_kind() == JudgeKind::generative;
    c.finetune.steps = j["finetune"]["steps"].is_null() ? (gen ? 64 : 4) : get<std::size_t>(j, "finetune", "steps");
    c.finetune.cadence = j["finetune"]["cadence"].is_null() ? (gen ? 32 : 1) : get<std::size_t>(j, "finetune", "cadence");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (c.iterations == 0 || c.episodes == 0 || c.samples_per_episode == 0 || c.max_steps_factor == 0)
    throw ConfigError("iterations, episodes, samples_per_episode and max_steps_factor must be positive");
  if (!(c.sampling_rate > 0.0 && c.sampling_rate <= 1.0)) throw ConfigError("sampling_rate must lie in (0, 1]");
  if (!(c.beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (c.finetune.steps == 0 || c.finetune.cadence == 0 || c.finetune.minibatch == 0)
    throw ConfigError("finetune steps, cadence and minibatch must be positive");
  if (c.judge != "generative" && c.judge != "contrastive" && !c.judge.starts_with("external:"))
    throw ConfigError("judge.kind must be generative, contrastive or external:<addr>");
  if (c.judge == "external:") throw ConfigError("external judge needs an address");
  if (c.negatives != "both" && c.negatives != "term" && c.negatives != "none")
    throw ConfigError("judge.negatives must be both, term or none");
  if (!(c.temperature > 0.0)) throw ConfigError("judge.temperature must be positive");
  if (c.agent != "sac" && c.agent != "random") throw ConfigError("agent.kind must be sac or random");
  if (c.per_episode_batch() == 0) throw ConfigError("round(sampling_rate * samples_per_episode) must be positive");
  if (c.validation_count == 0) throw ConfigError("validation_count must be positive");
  if (c.budget && *c.budget == 0) throw ConfigError("budget must be positive");

  c.early_stop_policy = default_early_stop(c.judge_kind());
  const auto& es = j.at("early_stop");
  if (!es["min_iterations"].is_null()) c.early_stop_policy.min_iterations = es["min_iterations"].get<std::size_t>();
  if (!es["patience"].is_null()) c.early_stop_policy.patience = es["patience"].get<std::size_t>();
  if (!es["epsilon"].is_null()) c.early_stop_policy.epsilon = es["epsilon"].get<double>();
  if (c.early_stop_policy.patience == 0) throw ConfigError("early_stop.patience must be at least 1");

  c.resolved = j;
  c.digest = sha256_hex(j.dump());
  return c;
}

JudgeKind RunConfig::judge_kind() const {
  if (judge.starts_with("external:")) return external_mode;
  return judge_kind_from_string(judge);
}

std::size_t RunConfig::per_episode_batch() const {
  return static_cast<std::size_t>(std::llround(sampling_rate * static_cast<double>(samples_per_episode)));
}

EarlyStopPolicy default_early_stop(JudgeKind kind) {
  if (kind == JudgeKind::generative) return {15, 10, 0.02};
  return {10, 5, 0.005};
}

bool early_stop(std::span<const double> history, const EarlyStopPolicy& policy) {
  if (history.empty()) throw std::invalid_argument("early-stop history is empty");
  if (policy.patience == 0) throw std::invalid_argument("patience must be at least 1");
  const std::size_t done = history.size() - 1;
  if (done < policy.min_iterations || history.size() <= policy.patience) return false;
  double best = history[0];
  const std::size_t window = history.size() - policy.patience;
  for (std::size_t k = 1; k < window; ++k) best = std::max(best, history[k]);
  for (std::size_t k = window; k < history.size(); ++k) {
    if (history[k] > best + policy.epsilon) return false;
    best = std::max(best, history[k]);
  }
  return true;
}

}  // namespace rls3
