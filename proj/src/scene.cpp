#include "rls3/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace rls3 {

using nlohmann::json;

std::string_view to_string(PlacementReason r) {
  switch (r) {
    case PlacementReason::ok: return "ok";
    case PlacementReason::off_surface: return "off_surface";
    case PlacementReason::overlap: return "overlap";
    case PlacementReason::no_support: return "no_support";
    case PlacementReason::invalid_action: return "invalid_action";
  }
  return "unknown";
}

namespace {

std::vector<ObjectSpec> default_catalog() {
  return {
      {"small pot", {0.10, 0.08, 0.10}},  {"yellow bowl", {0.09, 0.05, 0.09}}, {"mug", {0.05, 0.06, 0.05}},
      {"plate", {0.12, 0.01, 0.12}},      {"small pan", {0.14, 0.04, 0.14}},   {"vase", {0.06, 0.15, 0.06}},
      {"book", {0.12, 0.03, 0.09}},       {"lamp", {0.10, 0.22, 0.10}},        {"teapot", {0.11, 0.09, 0.08}},
  };
}

// Camera placed `distance` metres behind `target` along its viewing direction.
CameraPose look_at(const Eigen::Vector3d& target, double yaw_deg, double distance, double height, double pitch) {
  const double yaw = yaw_deg * M_PI / 180.0;
  const Eigen::Vector3d forward(std::sin(yaw), 0.0, std::cos(yaw));
  CameraPose cam;
  cam.position = target - distance * forward;
  cam.position.y() = height;
  cam.yaw = yaw_deg;
  cam.pitch = pitch;
  return cam;
}

SceneSpec scene(int id, Surface main, Surface side, double yaw, double distance, double height) {
  SceneSpec s;
  s.id = id;
  s.surfaces = {main, side};
  s.camera = look_at(main.top_center, yaw, distance, height, -20.0);
  return s;
}

bool point_in_surface_volume(const Surface& s, const Eigen::Vector3d& p) {
  return std::abs(p.x() - s.top_center.x()) < s.half_extent_x && std::abs(p.z() - s.top_center.z()) < s.half_extent_z &&
         p.y() <= s.top_center.y();
}

bool footprint_inside(const Surface& s, const Eigen::Vector3d& center, const Eigen::Vector3d& half) {
  return std::abs(center.x() - s.top_center.x()) + half.x() <= s.half_extent_x &&
         std::abs(center.z() - s.top_center.z()) + half.z() <= s.half_extent_z;
}

json vec_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw SceneConfigError("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void SceneSuite::validate() const {
  if (scenes.empty()) throw SceneConfigError("scene suite has no scenes");
  if (catalog.size() != kCatalogSize)
    throw SceneConfigError("catalog must have exactly " + std::to_string(kCatalogSize) + " objects");
  std::set<std::string> names;
  for (const auto& o : catalog) {
    if (o.name.empty() || !names.insert(o.name).second) throw SceneConfigError("catalog names must be unique");
    if ((o.half_extents.array() <= 0.0).any()) throw SceneConfigError("half extents must be positive: " + o.name);
  }
  for (const auto& s : scenes) {
    for (const auto& surf : s.surfaces)
      if (!(surf.half_extent_x > 0.0 && surf.half_extent_z > 0.0))
        throw SceneConfigError("surface extents must be positive in scene " + std::to_string(s.id));
    const auto& a = s.surfaces[0];
    const auto& b = s.surfaces[1];
    const bool overlap_x = std::abs(a.top_center.x() - b.top_center.x()) < a.half_extent_x + b.half_extent_x;
    const bool overlap_z = std::abs(a.top_center.z() - b.top_center.z()) < a.half_extent_z + b.half_extent_z;
    if (overlap_x && overlap_z) throw SceneConfigError("surfaces overlap in plan view in scene " + std::to_string(s.id));
    for (const auto& surf : s.surfaces)
      if (point_in_surface_volume(surf, s.camera.position))
        throw SceneConfigError("camera inside a surface volume in scene " + std::to_string(s.id));
  }
}

std::size_t SceneSuite::object_index(std::string_view name) const {
  for (std::size_t i = 0; i < catalog.size(); ++i)
    if (catalog[i].name == name) return i;
  throw SceneConfigError("unknown object '" + std::string(name) + "'");
}

SceneSuite training_suite() {
  SceneSuite s;
  s.catalog = default_catalog();
  // kitchen, bedroom, living room, office, dining room
  s.scenes.push_back(scene(0, {{0.0, 0.75, 0.0}, 0.80, 0.45}, {{1.15, 0.90, 0.0}, 0.25, 0.30}, 0.0, 2.2, 1.5));
  s.scenes.push_back(scene(1, {{0.0, 0.72, 0.0}, 0.60, 0.35}, {{0.0, 0.55, 0.65}, 0.25, 0.20}, 30.0, 2.3, 1.4));
  s.scenes.push_back(scene(2, {{0.0, 0.45, 0.0}, 0.70, 0.40}, {{-1.0, 0.60, 0.1}, 0.20, 0.20}, -45.0, 2.4, 1.3));
  s.scenes.push_back(scene(3, {{0.0, 0.74, 0.0}, 0.90, 0.40}, {{1.2, 0.90, 0.0}, 0.20, 0.35}, 90.0, 2.4, 1.5));
  s.scenes.push_back(scene(4, {{0.0, 0.76, 0.0}, 1.00, 0.50}, {{0.0, 0.92, 0.75}, 0.50, 0.20}, 180.0, 2.4, 1.5));
  return s;
}

SceneSuite test_suite() {
  SceneSuite s;
  s.catalog = default_catalog();
  s.scenes.push_back(scene(100, {{0.0, 0.90, 0.0}, 0.75, 0.40}, {{0.0, 0.70, -0.65}, 0.30, 0.20}, 15.0, 2.3, 1.45));
  s.scenes.push_back(scene(101, {{0.0, 0.50, 0.0}, 0.80, 0.30}, {{1.1, 0.65, 0.0}, 0.20, 0.25}, 135.0, 2.4, 1.3));
  s.scenes.push_back(scene(102, {{0.0, 0.85, 0.0}, 0.65, 0.45}, {{-0.9, 1.00, 0.0}, 0.20, 0.30}, -100.0, 2.4, 1.4));
  return s;
}

SceneSuite parse_suite(std::string_view json_text) {
  SceneSuite suite;
  try {
    const json doc = json::parse(json_text);
    for (const auto& js : doc.at("scenes")) {
      SceneSpec spec;
      spec.id = js.at("id").get<int>();
      const auto& surfaces = js.at("surfaces");
      if (!surfaces.is_array() || surfaces.size() != 2) throw SceneConfigError("each scene needs exactly 2 surfaces");
      for (std::size_t i = 0; i < 2; ++i) {
        spec.surfaces[i].top_center = vec_from(surfaces[i].at("top_center"));
        spec.surfaces[i].half_extent_x = surfaces[i].at("half_extent_x").get<double>();
        spec.surfaces[i].half_extent_z = surfaces[i].at("half_extent_z").get<double>();
      }
      const auto& cam = js.at("camera");
      spec.camera.position = vec_from(cam.at("position"));
      spec.camera.yaw = cam.at("yaw").get<double>();
      spec.camera.pitch = cam.at("pitch").get<double>();
      spec.camera.roll = cam.at("roll").get<double>();
      suite.scenes.push_back(spec);
    }
    for (const auto& jo : doc.at("catalog"))
      suite.catalog.push_back({jo.at("name").get<std::string>(), vec_from(jo.at("half_extents"))});
  } catch (const json::exception& e) {
    throw SceneConfigError(std::string("malformed scene suite: ") + e.what());
  }
  suite.validate();
  return suite;
}

SceneSuite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SceneConfigError("cannot open scene suite " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_suite(buf.str());
}

std::string suite_to_json(const SceneSuite& suite) {
  json doc;
  doc["scenes"] = json::array();
  for (const auto& s : suite.scenes) {
    json js;
    js["id"] = s.id;
    js["surfaces"] = json::array();
    for (const auto& surf : s.surfaces)
      js["surfaces"].push_back(
          {{"top_center", vec_json(surf.top_center)}, {"half_extent_x", surf.half_extent_x}, {"half_extent_z", surf.half_extent_z}});
    js["camera"] = {{"position", vec_json(s.camera.position)},
                    {"yaw", s.camera.yaw},
                    {"pitch", s.camera.pitch},
                    {"roll", s.camera.roll}};
    doc["scenes"].push_back(js);
  }
  doc["catalog"] = json::array();
  for (const auto& o : suite.catalog) doc["catalog"].push_back({{"name", o.name}, {"half_extents", vec_json(o.half_extents)}});
  return doc.dump(2) + "\n";
}

bool boxes_overlap(const Eigen::Vector3d& center_a, const Eigen::Vector3d& half_a, const Eigen::Vector3d& center_b,
                   const Eigen::Vector3d& half_b) {
  return ((center_a - center_b).cwiseAbs().array() < (half_a + half_b).array()).all();
}

ValidityReport check_placement(const SceneSuite& suite, const SceneState& state, std::size_t slot, std::size_t object,
                               const Eigen::Vector3d& candidate, double snap_tolerance) {
  if (slot >= kActiveObjects) throw std::out_of_range("slot must be 0, 1 or 2");
  ValidityReport report;
  if (!candidate.allFinite()) {
    report.reason = PlacementReason::invalid_action;
    return report;
  }
  const auto& spec = suite.scenes.at(state.scene_idx);
  const Eigen::Vector3d& half = suite.catalog.at(object).half_extents;
  const double base = candidate.y() - half.y();

  bool any_footprint = false;
  std::optional<std::size_t> support;
  for (std::size_t i = 0; i < spec.surfaces.size(); ++i) {
    if (!footprint_inside(spec.surfaces[i], candidate, half)) continue;
    any_footprint = true;
    if (std::abs(base - spec.surfaces[i].top_center.y()) <= snap_tolerance) {
      support = i;
      break;
    }
  }
  if (!any_footprint) {
    report.reason = PlacementReason::off_surface;
    return report;
  }
  if (!support) {
    report.reason = PlacementReason::no_support;
    return report;
  }
  Eigen::Vector3d snapped = candidate;
  snapped.y() = spec.surfaces[*support].top_center.y() + half.y();
  for (std::size_t other = 0; other < kActiveObjects; ++other) {
    if (other == slot) continue;
    if (boxes_overlap(snapped, half, state.positions[other], suite.catalog[state.active[other]].half_extents)) {
      report.reason = PlacementReason::overlap;
      return report;
    }
  }
  report.valid = true;
  report.reason = PlacementReason::ok;
  report.surface = support;
  return report;
}

ValidityReport check_placement(const SceneSuite& suite, const SceneState& state, std::size_t slot,
                               const Eigen::Vector3d& candidate, double snap_tolerance) {
  if (slot >= kActiveObjects) throw std::out_of_range("slot must be 0, 1 or 2");
  return check_placement(suite, state, slot, state.active[slot], candidate, snap_tolerance);
}

Eigen::VectorXd observe(const SceneSuite& suite, const SceneState& state) {
  Eigen::VectorXd obs(kObservationSize);
  obs(0) = static_cast<double>(state.moved_slot);
  obs(1) = static_cast<double>(state.scene_idx);
  const auto& spec = suite.scenes.at(state.scene_idx);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& s = spec.surfaces[i];
    const auto o = static_cast<Eigen::Index>(2 + 6 * i);
    obs.segment<3>(o) = s.top_center;
    obs.segment<3>(o + 3) << s.half_extent_x, 0.0, s.half_extent_z;
  }
  for (std::size_t k = 0; k < kActiveObjects; ++k) {
    obs.segment<3>(static_cast<Eigen::Index>(14 + 3 * k)) = state.positions[k];
    obs(static_cast<Eigen::Index>(23 + k)) = state.yaws[k];
  }
  obs.segment<3>(26) = state.camera.position;
  obs(29) = state.camera.yaw;
  obs(30) = state.camera.pitch;
  obs(31) = state.camera.roll;
  return obs;
}

DecodedObservation decode_observation(const Eigen::VectorXd& obs) {
  if (obs.size() != static_cast<Eigen::Index>(kObservationSize)) throw std::invalid_argument("observation must have 32 entries");
  DecodedObservation d;
  d.moved_slot = static_cast<std::size_t>(obs(0));
  d.scene_idx = static_cast<std::size_t>(obs(1));
  for (std::size_t k = 0; k < kActiveObjects; ++k) {
    d.positions[k] = obs.segment<3>(static_cast<Eigen::Index>(14 + 3 * k));
    d.yaws[k] = obs(static_cast<Eigen::Index>(23 + k));
  }
  d.camera.position = obs.segment<3>(26);
  d.camera.yaw = obs(29);
  d.camera.pitch = obs(30);
  d.camera.roll = obs(31);
  return d;
}

SceneSnapshot make_snapshot(const SceneSuite& suite, const SceneState& state) {
  SceneSnapshot snap;
  snap.scene_id = suite.scenes.at(state.scene_idx).id;
  snap.step_index = state.step_index;
  snap.camera = state.camera;
  for (std::size_t k = 0; k < kActiveObjects; ++k)
    snap.objects.push_back({suite.catalog[state.active[k]].name, state.positions[k], state.yaws[k]});
  return snap;
}

SceneEnv::SceneEnv(SceneSuite suite, EnvOptions options) : suite_(std::move(suite)), options_(options) {
  suite_.validate();
  if (!(options_.delta_max > 0.0) || !(options_.snap_tolerance >= 0.0))
    throw std::invalid_argument("delta_max must be positive and snap tolerance non-negative");
  if (options_.swap_probability < 0.0 || options_.swap_probability > 1.0)
    throw std::invalid_argument("swap probability must lie in [0, 1]");
  if (options_.samples_per_episode == 0) throw std::invalid_argument("samples_per_episode must be positive");
}

std::size_t SceneEnv::cycle_period() const {
  const std::size_t n = suite_.scenes.size();
  return (options_.samples_per_episode + n - 1) / n;
}

void SceneEnv::place_all(std::size_t scene_idx) {
  state_.scene_idx = scene_idx;
  state_.camera = suite_.scenes[scene_idx].camera;
  const auto& surfaces = suite_.scenes[scene_idx].surfaces;
  const double area0 = surfaces[0].half_extent_x * surfaces[0].half_extent_z;
  const double area1 = surfaces[1].half_extent_x * surfaces[1].half_extent_z;
  std::bernoulli_distribution pick_second(area1 / (area0 + area1));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> yaw_dist(0.0, 360.0);

  std::size_t attempts = 0;
  for (std::size_t k = 0; k < kActiveObjects; ++k) {
    const Eigen::Vector3d& half = suite_.catalog[state_.active[k]].half_extents;
    bool placed = false;
    while (!placed) {
      if (attempts++ >= options_.max_placement_attempts)
        throw PlacementFailure("placement rejection sampling exceeded " +
                               std::to_string(options_.max_placement_attempts) + " attempts in scene " +
                               std::to_string(suite_.scenes[scene_idx].id));
      const Surface& s = surfaces[pick_second(rng_) ? 1 : 0];
      const double free_x = s.half_extent_x - half.x();
      const double free_z = s.half_extent_z - half.z();
      if (free_x < 0.0 || free_z < 0.0) continue;
      const Eigen::Vector3d c(s.top_center.x() + free_x * unit(rng_), s.top_center.y() + half.y(),
                              s.top_center.z() + free_z * unit(rng_));
      placed = true;
      for (std::size_t j = 0; j < k; ++j)
        if (boxes_overlap(c, half, state_.positions[j], suite_.catalog[state_.active[j]].half_extents)) placed = false;
      if (placed) {
        state_.positions[k] = c;
        state_.yaws[k] = yaw_dist(rng_);
      }
    }
  }
}

const SceneState& SceneEnv::reset_episode(std::uint64_t episode_idx, std::uint64_t seed) {
  rng_.seed(seed);
  std::vector<std::size_t> order(suite_.catalog.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);
  state_ = SceneState{};
  std::copy_n(order.begin(), kActiveObjects, state_.active.begin());
  state_.container.assign(order.begin() + kActiveObjects, order.end());
  place_all(static_cast<std::size_t>(episode_idx % suite_.scenes.size()));
  initialized_ = true;
  return state_;
}

StepResult SceneEnv::step(const Eigen::Vector3d& action) {
  if (!initialized_) throw std::logic_error("step before reset_episode");
  StepResult result;
  const std::size_t slot = state_.moved_slot;
  ++state_.step_index;
  state_.moved_slot = (slot + 1) % kActiveObjects;

  // The swap draw happens unconditionally so the random stream does not
  // depend on whether the action was finite.
  std::bernoulli_distribution swap_draw(options_.swap_probability);
  const bool swap = swap_draw(rng_);
  std::size_t container_pos = 0;
  if (swap) {
    std::uniform_int_distribution<std::size_t> pick(0, state_.container.size() - 1);
    container_pos = pick(rng_);
  }

  if (!action.allFinite()) {
    result.report.reason = PlacementReason::invalid_action;
    return result;
  }
  const Eigen::Vector3d displacement = action.cwiseMax(-1.0).cwiseMin(1.0) * options_.delta_max;
  const std::size_t current = state_.active[slot];
  const std::size_t object = swap ? state_.container[container_pos] : current;
  const double base = state_.positions[slot].y() - suite_.catalog[current].half_extents.y();
  Eigen::Vector3d candidate = state_.positions[slot] + displacement;
  candidate.y() = base + displacement.y() + suite_.catalog[object].half_extents.y();

  result.report = check_placement(suite_, state_, slot, object, candidate, options_.snap_tolerance);
  if (!result.report.valid) return result;

  const auto& surface = suite_.scenes[state_.scene_idx].surfaces[*result.report.surface];
  candidate.y() = surface.top_center.y() + suite_.catalog[object].half_extents.y();
  if (swap) {
    state_.container[container_pos] = current;
    state_.active[slot] = object;
    result.swapped = true;
  }
  state_.positions[slot] = candidate;
  result.reward = 1.0;
  result.snapshot = make_snapshot(suite_, state_);
  return result;
}

bool SceneEnv::advance_scene(std::size_t valid_count) {
  if (!initialized_) throw std::logic_error("advance_scene before reset_episode");
  const std::size_t n = suite_.scenes.size();
  if (n <= 1 || valid_count == 0 || valid_count % cycle_period() != 0) return false;
  place_all((state_.scene_idx + 1) % n);
  return true;
}

}  // namespace rls3
