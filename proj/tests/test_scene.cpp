#include "rls3/scene.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace rls3;

TEST_CASE("built-in suites validate and match the shipped scene files") {
  const auto train = training_suite();
  const auto test = test_suite();
  CHECK_NOTHROW(train.validate());
  CHECK_NOTHROW(test.validate());
  CHECK(train.scenes.size() == 5);
  CHECK(test.scenes.size() == 3);
  CHECK(train.catalog.size() == 9);
  const std::filesystem::path configs = RLS3_SOURCE_DIR "/configs";
  CHECK(suite_to_json(load_suite(configs / "scenes_train.json")) == suite_to_json(train));
  CHECK(suite_to_json(load_suite(configs / "scenes_test.json")) == suite_to_json(test));
  for (const auto& a : train.scenes)
    for (const auto& b : test.scenes) CHECK(a.id != b.id);
}

TEST_CASE("suite parsing rejects broken files") {
  CHECK_THROWS_AS(parse_suite("{}"), SceneConfigError);
  CHECK_THROWS_AS(parse_suite("not json"), SceneConfigError);
  auto j = suite_to_json(training_suite());
  const auto pos = j.find("\"half_extent_x\"");
  REQUIRE(pos != std::string::npos);
  std::string broken = j;
  broken.replace(j.find(':', pos) + 1, 1, " -");
  CHECK_THROWS_AS(parse_suite(broken), SceneConfigError);
}

TEST_CASE("box overlap is strict interior") {
  const Eigen::Vector3d h(0.1, 0.1, 0.1);
  CHECK(boxes_overlap({0, 0, 0}, h, {0.15, 0, 0}, h));
  CHECK_FALSE(boxes_overlap({0, 0, 0}, h, {0.2, 0, 0}, h));  // shared face
  CHECK_FALSE(boxes_overlap({0, 0, 0}, h, {0.1, 0.3, 0}, h));
}

TEST_CASE("placement reasons") {
  SceneEnv env(training_suite());
  env.reset_episode(0, 42);
  const auto& st = env.state();
  const auto& suite = env.suite();
  // current position is valid
  CHECK(check_placement(suite, st, 0, st.positions[0], 0.05).valid);
  Eigen::Vector3d far = st.positions[0];
  far.x() += 10.0;
  CHECK(check_placement(suite, st, 0, far, 0.05).reason == PlacementReason::off_surface);
  Eigen::Vector3d lifted = st.positions[0];
  lifted.y() += 0.2;
  CHECK(check_placement(suite, st, 0, lifted, 0.05).reason == PlacementReason::no_support);
  SceneState crowded = st;
  crowded.positions[1] = st.positions[0];
  CHECK(check_placement(suite, crowded, 0, st.positions[0], 0.05).reason == PlacementReason::overlap);
  CHECK(check_placement(suite, st, 0, Eigen::Vector3d(std::nan(""), 0, 0), 0.05).reason ==
        PlacementReason::invalid_action);
}

TEST_CASE("reset is seeded and places a sound scene") {
  SceneEnv a(training_suite()), b(training_suite());
  for (std::uint64_t e = 0; e < 20; ++e) {
    a.reset_episode(e, 100 + e);
    b.reset_episode(e, 100 + e);
    CHECK(a.state().scene_idx == e % 5);
    CHECK(a.state().active == b.state().active);
    for (std::size_t k = 0; k < kActiveObjects; ++k) CHECK(a.state().positions[k] == b.state().positions[k]);
    CHECK(oracle::snapshot_sound(a.suite(), make_snapshot(a.suite(), a.state())));
    CHECK(a.state().container.size() == 6);
  }
}

TEST_CASE("observation layout round-trips through decode") {
  SceneEnv env(training_suite());
  env.reset_episode(3, 7);
  const auto obs = env.observe();
  REQUIRE(obs.size() == 32);
  const auto d = decode_observation(obs);
  CHECK(d.scene_idx == 3);
  for (std::size_t k = 0; k < kActiveObjects; ++k) CHECK(d.positions[k] == env.state().positions[k]);
  CHECK(d.camera.yaw == env.state().camera.yaw);
  CHECK(obs(5) == env.suite().scenes[3].surfaces[0].half_extent_x);
}

TEST_CASE("step before reset is a logic error") {
  SceneEnv env(training_suite());
  CHECK_THROWS_AS(env.step(Eigen::Vector3d::Zero()), std::logic_error);
}

TEST_CASE("zero action keeps the object valid and cycles slots") {
  EnvOptions o;
  o.swap_probability = 0.0;
  SceneEnv env(training_suite(), o);
  env.reset_episode(0, 5);
  for (int t = 0; t < 6; ++t) {
    CHECK(env.state().moved_slot == static_cast<std::size_t>(t % 3));
    const auto r = env.step(Eigen::Vector3d::Zero());
    CHECK(r.report.valid);
    CHECK(r.reward == 1.0);
  }
}

TEST_CASE("non-finite action is an invalid step with reward -1") {
  SceneEnv env(training_suite());
  env.reset_episode(0, 5);
  const auto r = env.step(Eigen::Vector3d(std::nan(""), 0, 0));
  CHECK_FALSE(r.snapshot.has_value());
  CHECK(r.reward == -1.0);
  CHECK(r.report.reason == PlacementReason::invalid_action);
}

TEST_CASE("scene cycling period") {
  EnvOptions o;
  o.samples_per_episode = 20;
  SceneEnv env(training_suite(), o);
  env.reset_episode(0, 1);
  CHECK(env.cycle_period() == 4);
  CHECK_FALSE(env.advance_scene(3));
  CHECK(env.advance_scene(4));
  CHECK(env.state().scene_idx == 1);
  CHECK_FALSE(env.advance_scene(0));
}

TEST_CASE("random-walk fuzz keeps snapshots sound and rewards in bijection") {
  SceneEnv env(training_suite());
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::size_t snapshots = 0, positives = 0, unsound = 0;
  for (int t = 0; t < 3000; ++t) {
    if (t % 100 == 0) env.reset_episode(static_cast<std::uint64_t>(t / 100), rng());
    const auto r = env.step(Eigen::Vector3d(u(rng), u(rng), u(rng)));
    CHECK((r.reward == 1.0) == r.snapshot.has_value());
    CHECK((r.reward == 1.0 || r.reward == -1.0));
    if (r.snapshot) {
      ++snapshots;
      if (!oracle::snapshot_sound(env.suite(), *r.snapshot)) ++unsound;
    }
    if (r.reward > 0) ++positives;
  }
  CHECK(unsound == 0);
  CHECK(snapshots == positives);
  CHECK(snapshots > 0);
}
