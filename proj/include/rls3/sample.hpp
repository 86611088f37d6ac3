#pragma once

#include "rls3/prompt.hpp"
#include "rls3/scene.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rls3 {

/// One generated sample: scene metadata, the described pair, the positive
/// caption with its question and both hard negatives.
struct SampleRecord {
  std::uint64_t id = 0;
  int scene_id = 0;
  std::vector<SnapshotObject> objects;
  CameraPose camera;
  std::string subject;
  std::string reference;
  SpatialRelation relation;
  std::string caption;
  std::string question;
  std::string neg_term;
  std::string neg_object;
  std::int64_t episode = 0;
  std::int64_t iteration = 0;

  const SnapshotObject* find_object(std::string_view name) const;
};

SampleRecord make_sample(const SceneSnapshot& snapshot, std::uint64_t id, std::uint64_t prompt_seed,
                         std::int64_t episode, std::int64_t iteration);

nlohmann::ordered_json to_json(const SampleRecord& s);
/// Throws std::invalid_argument on a schema violation.
SampleRecord sample_from_json(const nlohmann::json& j);
SampleRecord sample_from_json(const nlohmann::ordered_json& j);

/// Compact single-line JSON (no trailing newline).
std::string to_jsonl_line(const SampleRecord& s);

std::vector<SampleRecord> read_samples(const std::filesystem::path& path);
void write_samples(const std::filesystem::path& path, const std::vector<SampleRecord>& samples);

struct ReplayIssue {
  std::size_t line = 0;  // 1-based record position
  std::uint64_t id = 0;
  std::string reason;
};

/// Re-derives the relation from stored geometry and checks every caption
/// against it. Returns the first inconsistency, if any.
std::optional<ReplayIssue> check_sample(const SampleRecord& s);
std::optional<ReplayIssue> replay_samples(const std::vector<SampleRecord>& samples);

}  // namespace rls3
