#include "rls3/datasets.hpp"

#include "rls3/digest.hpp"
#include "rls3/random.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <sstream>

namespace rls3 {

std::string jsonl_bytes(const std::vector<SampleRecord>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_jsonl_line(s);
    out += '\n';
  }
  return out;
}

FixedSet generate_fixed_set(const SceneSuite& suite, std::size_t count, std::uint64_t seed) {
  suite.validate();
  SceneEnv env(suite);
  FixedSet set;
  set.samples.reserve(count);
  std::uint64_t attempt = 0;
  std::size_t consecutive_failures = 0;
  while (set.samples.size() < count) {
    const std::uint64_t a = attempt++;
    try {
      env.reset_episode(a, derive_seed(seed, {0xf1, a}));
      const auto snap = make_snapshot(env.suite(), env.state());
      set.samples.push_back(
          make_sample(snap, set.samples.size(), derive_seed(seed, {0xf2, a}), std::int64_t{-1}, std::int64_t{-1}));
      consecutive_failures = 0;
    } catch (const PlacementFailure&) {
      if (++consecutive_failures > 100) throw;
    } catch (const DegenerateGeometry&) {
      if (++consecutive_failures > 100) throw;
    }
  }
  set.digest = sha256_hex(jsonl_bytes(set.samples));
  return set;
}

std::string write_fixed_set(const std::filesystem::path& path, const FixedSet& set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = jsonl_bytes(set.samples);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << bytes;
  if (!out) throw std::runtime_error("failed writing " + path.string());
  return sha256_hex(bytes);
}

FixedSet load_fixed_set(const std::filesystem::path& path, const std::string& expected_digest) {
  FixedSet set;
  set.digest = sha256_file(path);
  if (!expected_digest.empty() && set.digest != expected_digest)
    throw std::runtime_error("digest mismatch for " + path.string() + ": expected " + expected_digest + ", got " +
                             set.digest);
  set.samples = read_samples(path);
  return set;
}

double verdict_value(const JudgeVerdict& v, JudgeKind kind) {
  return kind == JudgeKind::generative ? static_cast<double>(v.score) : (v.correct ? 1.0 : 0.0);
}

namespace {

template <typename KeyFn>
BreakdownTable breakdown(const std::vector<JudgeVerdict>& verdicts, const std::vector<SampleRecord>& samples,
                         JudgeKind kind, std::vector<std::string> keys, KeyFn&& keys_of) {
  std::map<std::uint64_t, const SampleRecord*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  BreakdownTable t;
  std::vector<double> sums(keys.size(), 0.0);
  for (auto& k : keys) t.rows.push_back({std::move(k), 0.0, 0});
  for (const auto& v : verdicts) {
    const auto it = by_id.find(v.sample_id);
    if (v.flagged || it == by_id.end()) {
      ++t.unjoined;
      continue;
    }
    for (std::size_t row : keys_of(*it->second)) {
      sums[row] += verdict_value(v, kind);
      ++t.rows[row].count;
    }
  }
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (t.rows[i].count > 0) t.rows[i].mean = sums[i] / static_cast<double>(t.rows[i].count);
  return t;
}

}  // namespace

BreakdownTable per_term_breakdown(const std::vector<JudgeVerdict>& verdicts, const std::vector<SampleRecord>& samples,
                                  JudgeKind kind) {
  std::vector<std::string> keys;
  for (auto p : kAllPrimitives) keys.emplace_back(to_string(p));
  return breakdown(verdicts, samples, kind, std::move(keys), [](const SampleRecord& s) {
    std::vector<std::size_t> rows;
    for (auto p : s.relation.terms().to_vector()) rows.push_back(static_cast<std::size_t>(p));
    return rows;
  });
}

BreakdownTable complexity_breakdown(const std::vector<JudgeVerdict>& verdicts,
                                    const std::vector<SampleRecord>& samples, JudgeKind kind) {
  return breakdown(verdicts, samples, kind, {"1", "2", "3"}, [](const SampleRecord& s) {
    const int c = s.relation.complexity();
    return c >= 1 && c <= 3 ? std::vector<std::size_t>{static_cast<std::size_t>(c - 1)} : std::vector<std::size_t>{};
  });
}

void write_breakdown_csv(const std::filesystem::path& path, const BreakdownTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "key,mean,count\n";
  for (const auto& r : table.rows) out << r.key << ',' << r.mean << ',' << r.count << '\n';
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::out_of_range("no CSV column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

PlotExport export_plot_data(const std::filesystem::path& run_dir) {
  PlotExport result;
  const auto plots = run_dir / "plots";
  std::filesystem::create_directories(plots);

  if (std::filesystem::exists(run_dir / "metrics.csv")) {
    const auto m = read_csv(run_dir / "metrics.csv");
    const auto it = m.column("iteration"), cv = m.column("cumulative_valid"), ca = m.column("cumulative_attempts"),
               vm = m.column("val_metric");
    std::ofstream out(plots / "score_vs_samples.csv", std::ios::trunc);
    out << "iteration,cumulative_valid,cumulative_attempts,val_metric\n";
    for (const auto& r : m.rows) out << r[it] << ',' << r[cv] << ',' << r[ca] << ',' << r[vm] << '\n';
    result.written.push_back(plots / "score_vs_samples.csv");
  } else {
    result.warnings.push_back("metrics.csv missing; score_vs_samples.csv not written");
  }

  if (std::filesystem::exists(run_dir / "finetune_loss.csv")) {
    const auto l = read_csv(run_dir / "finetune_loss.csv");
    const auto it = l.column("iteration"), st = l.column("step"), lo = l.column("loss");
    std::ofstream out(plots / "loss_concat.csv", std::ios::trunc);
    out << "index,iteration,step,loss,boundary\n";
    std::string previous;
    for (std::size_t i = 0; i < l.rows.size(); ++i) {
      const auto& r = l.rows[i];
      const bool boundary = i > 0 && r[it] != previous;
      out << i << ',' << r[it] << ',' << r[st] << ',' << r[lo] << ',' << (boundary ? 1 : 0) << '\n';
      previous = r[it];
    }
    result.written.push_back(plots / "loss_concat.csv");
  } else {
    result.warnings.push_back("finetune_loss.csv missing; loss_concat.csv not written");
  }

  std::optional<long long> stop_iteration;
  if (std::filesystem::exists(run_dir / "report.json")) {
    std::ifstream in(run_dir / "report.json");
    try {
      const auto report = nlohmann::json::parse(in);
      if (report.contains("early_stop_iteration") && report["early_stop_iteration"].is_number_integer())
        stop_iteration = report["early_stop_iteration"].get<long long>();
    } catch (const nlohmann::json::exception&) {
      result.warnings.push_back("report.json unreadable; early-stop marker omitted");
    }
  } else {
    result.warnings.push_back("report.json missing; early-stop marker omitted");
  }

  if (std::filesystem::exists(run_dir / "metrics.csv")) {
    const auto m = read_csv(run_dir / "metrics.csv");
    const auto it = m.column("iteration"), vm = m.column("val_metric");
    std::ofstream out(plots / "validation_curve.csv", std::ios::trunc);
    out << "iteration,val_metric,early_stop\n";
    for (const auto& r : m.rows) {
      const bool stop = stop_iteration && std::stoll(r[it]) == *stop_iteration;
      out << r[it] << ',' << r[vm] << ',' << (stop ? 1 : 0) << '\n';
    }
    result.written.push_back(plots / "validation_curve.csv");
  }
  return result;
}

}  // namespace rls3
