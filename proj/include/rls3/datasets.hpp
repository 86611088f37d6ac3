#pragma once

#include "rls3/judges.hpp"
#include "rls3/sample.hpp"
#include "rls3/scene.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace rls3 {

struct FixedSet {
  std::vector<SampleRecord> samples;
  std::string digest;  // sha256 of the JSONL byte stream
};

/// `count` samples from seeded random placements cycling through the
/// suite's scenes. Records carry episode = iteration = -1.
FixedSet generate_fixed_set(const SceneSuite& suite, std::size_t count, std::uint64_t seed);

/// Writes the set and returns the digest of the written bytes.
std::string write_fixed_set(const std::filesystem::path& path, const FixedSet& set);

/// Loads a set and, when `expected_digest` is non-empty, verifies it.
FixedSet load_fixed_set(const std::filesystem::path& path, const std::string& expected_digest = {});

std::string jsonl_bytes(const std::vector<SampleRecord>& samples);

struct BreakdownRow {
  std::string key;
  double mean = 0.0;  // mean rubric score or accuracy; 0 when count is 0
  std::size_t count = 0;
};

struct BreakdownTable {
  std::vector<BreakdownRow> rows;
  std::size_t unjoined = 0;  // verdicts without a matching sample, or flagged
};

/// Value a verdict contributes to aggregates: rubric score for generative
/// judges, 1/0 retrieval hit for contrastive ones.
double verdict_value(const JudgeVerdict& v, JudgeKind kind);

/// Six rows in primitive order; a sample counts toward every primitive of
/// its stored relation.
BreakdownTable per_term_breakdown(const std::vector<JudgeVerdict>& verdicts, const std::vector<SampleRecord>& samples,
                                  JudgeKind kind);

/// Rows for complexity 1, 2 and 3.
BreakdownTable complexity_breakdown(const std::vector<JudgeVerdict>& verdicts,
                                    const std::vector<SampleRecord>& samples, JudgeKind kind);

void write_breakdown_csv(const std::filesystem::path& path, const BreakdownTable& table);

struct PlotExport {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// Writes plots/score_vs_samples.csv, plots/loss_concat.csv and
/// plots/validation_curve.csv from a run directory. Missing inputs are
/// skipped with a warning.
PlotExport export_plot_data(const std::filesystem::path& run_dir);

/// Minimal CSV reader for the files this project writes (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace rls3
