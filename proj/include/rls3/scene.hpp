#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rls3 {

inline constexpr std::size_t kActiveObjects = 3;
inline constexpr std::size_t kCatalogSize = 9;
inline constexpr std::size_t kObservationSize = 32;

struct ObjectSpec {
  std::string name;
  Eigen::Vector3d half_extents;  // metres, axis-aligned box
};

/// Flat support rectangle; objects rest with their base at top_center.y().
struct Surface {
  Eigen::Vector3d top_center;
  double half_extent_x = 0.0;
  double half_extent_z = 0.0;
};

struct CameraPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double yaw = 0.0;  // degrees; yaw 0 looks along +z, camera-right is +x
  double pitch = 0.0;
  double roll = 0.0;
};

struct SceneSpec {
  int id = 0;
  std::array<Surface, 2> surfaces;
  CameraPose camera;
};

class SceneConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SceneSuite {
  std::vector<SceneSpec> scenes;
  std::vector<ObjectSpec> catalog;

  /// Throws SceneConfigError on any broken invariant.
  void validate() const;
  std::size_t object_index(std::string_view name) const;
};

SceneSuite training_suite();
SceneSuite test_suite();

SceneSuite load_suite(const std::filesystem::path& path);
SceneSuite parse_suite(std::string_view json_text);
std::string suite_to_json(const SceneSuite& suite);

struct SceneState {
  std::size_t scene_idx = 0;
  std::array<std::size_t, kActiveObjects> active{};  // catalog indices
  std::array<Eigen::Vector3d, kActiveObjects> positions{};  // box centres
  std::array<double, kActiveObjects> yaws{};  // degrees
  std::vector<std::size_t> container;  // catalog indices not active
  std::size_t moved_slot = 0;
  CameraPose camera;
  std::uint64_t step_index = 0;
};

enum class PlacementReason { ok, off_surface, overlap, no_support, invalid_action };

std::string_view to_string(PlacementReason r);

struct ValidityReport {
  bool valid = false;
  PlacementReason reason = PlacementReason::off_surface;
  std::optional<std::size_t> surface;  // supporting surface when valid
};

struct SnapshotObject {
  std::string name;
  Eigen::Vector3d position;
  double yaw = 0.0;
};

struct SceneSnapshot {
  int scene_id = 0;
  std::uint64_t step_index = 0;
  std::vector<SnapshotObject> objects;
  CameraPose camera;
};

struct EnvOptions {
  double delta_max = 0.25;  // metres per axis per step
  double snap_tolerance = 0.05;
  double swap_probability = 1.0;
  std::size_t max_placement_attempts = 1000;
  std::size_t samples_per_episode = 20;  // T0, sets the scene-cycling period
};

struct StepResult {
  double reward = -1.0;
  ValidityReport report;
  std::optional<SceneSnapshot> snapshot;
  bool swapped = false;
};

class PlacementFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Strict-interior overlap of two axis-aligned boxes. Shared faces do not
/// count as overlap.
bool boxes_overlap(const Eigen::Vector3d& center_a, const Eigen::Vector3d& half_a, const Eigen::Vector3d& center_b,
                   const Eigen::Vector3d& half_b);

/// Would `object` (catalog index) centred at `candidate` be a feasible
/// placement for `slot`? Other active slots are taken from `state`. A valid
/// report names the supporting surface; the caller snaps the base to it.
ValidityReport check_placement(const SceneSuite& suite, const SceneState& state, std::size_t slot,
                               std::size_t object, const Eigen::Vector3d& candidate, double snap_tolerance);
ValidityReport check_placement(const SceneSuite& suite, const SceneState& state, std::size_t slot,
                               const Eigen::Vector3d& candidate, double snap_tolerance);

/// Observation layout (32 entries):
///   [0] moved_slot, [1] scene_idx,
///   [2..7] surface 0 top centre (3) + (half_x, 0, half_z),
///   [8..13] surface 1 likewise,
///   [14..22] object positions (3 x 3), [23..25] object yaws,
///   [26..28] camera position, [29..31] camera yaw, pitch, roll.
Eigen::VectorXd observe(const SceneSuite& suite, const SceneState& state);

struct DecodedObservation {
  std::size_t moved_slot = 0;
  std::size_t scene_idx = 0;
  std::array<Eigen::Vector3d, kActiveObjects> positions{};
  std::array<double, kActiveObjects> yaws{};
  CameraPose camera;
};

DecodedObservation decode_observation(const Eigen::VectorXd& obs);

SceneSnapshot make_snapshot(const SceneSuite& suite, const SceneState& state);

/// Geometric stand-in for the interactive 3D environment.
class SceneEnv {
 public:
  SceneEnv(SceneSuite suite, EnvOptions options = {});

  /// Draws 3 of the catalog objects and places them by seeded rejection
  /// sampling on scene `episode_idx mod scene_count`.
  const SceneState& reset_episode(std::uint64_t episode_idx, std::uint64_t seed);

  StepResult step(const Eigen::Vector3d& action);

  /// Cycles to the next scene when `valid_count` is a positive multiple of
  /// ceil(T0 / scene_count). Returns true when the scene changed.
  bool advance_scene(std::size_t valid_count);

  Eigen::VectorXd observe() const { return rls3::observe(suite_, state_); }

  std::size_t cycle_period() const;
  const SceneState& state() const { return state_; }
  const SceneSuite& suite() const { return suite_; }
  const EnvOptions& options() const { return options_; }
  bool initialized() const { return initialized_; }

 private:
  void place_all(std::size_t scene_idx);

  SceneSuite suite_;
  EnvOptions options_;
  SceneState state_;
  std::mt19937_64 rng_;
  bool initialized_ = false;
};

}  // namespace rls3
