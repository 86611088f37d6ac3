#include "rls3/prompt.hpp"
#include "rls3/sample.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace rls3;

namespace {

SpatialRelation random_relation(std::mt19937_64& rng) {
  for (;;) {
    const auto r = SpatialRelation::from_terms(PrimitiveSet::from_mask(static_cast<std::uint8_t>(rng() & 0x3f)));
    if (r) return *r;
  }
}

}  // namespace

TEST_CASE("primitive names and opposites") {
  for (auto p : kAllPrimitives) {
    CHECK(primitive_from_string(to_string(p)) == p);
    CHECK(opposite(opposite(p)) == p);
    CHECK(opposite(p) != p);
  }
  CHECK_FALSE(primitive_from_string("sideways").has_value());
}

TEST_CASE("relation validity") {
  CHECK(SpatialRelation::from_terms({Primitive::left}).has_value());
  CHECK(SpatialRelation::from_terms({Primitive::above, Primitive::behind, Primitive::left}).has_value());
  CHECK_FALSE(SpatialRelation::from_terms({Primitive::left, Primitive::right}).has_value());
  CHECK_FALSE(SpatialRelation::from_terms({Primitive::above, Primitive::below}).has_value());
  CHECK_FALSE(SpatialRelation::from_terms({}).has_value());
  CHECK_FALSE(SpatialRelation::from_terms({Primitive::left, Primitive::front, Primitive::above, Primitive::right})
                  .has_value());
}

TEST_CASE("relative geometry conventions") {
  CameraPose cam;
  auto g = relative_geometry({0, 0, 1}, {0, 0, 0}, cam);
  CHECK(g.azimuth == doctest::Approx(0.0));
  CHECK(g.elevation == doctest::Approx(0.0));
  g = relative_geometry({1, 0, 0}, {0, 0, 0}, cam);
  CHECK(g.azimuth == doctest::Approx(90.0));
  g = relative_geometry({0, 2, 0}, {0, 0, 0}, cam);
  CHECK(g.elevation == doctest::Approx(90.0));
  CHECK_THROWS_AS(relative_geometry({1, 1, 1}, {1, 1, 1}, cam), DegenerateGeometry);
}

TEST_CASE("rotating the camera yaw by 90 shifts azimuth by -90") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    CameraPose c0, c1;
    c0.yaw = 360 * u(rng);
    c1.yaw = c0.yaw + 90.0;
    const double a0 = relative_geometry(a, b, c0).azimuth;
    const double a1 = relative_geometry(a, b, c1).azimuth;
    double diff = std::fmod(a1 - a0 + 720.0, 360.0);
    if (diff > 359.999999) diff -= 360.0;
    CHECK(diff == doctest::Approx(270.0).epsilon(1e-9));
  }
}

TEST_CASE("horizontal regions match the interval table") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 360.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = u(rng);
    CHECK(classify_horizontal(a) == oracle::horizontal(a));
  }
  for (int k = 0; k < 8; ++k) {
    const double edge = 22.5 + 45.0 * k;
    CHECK(classify_horizontal(edge) == oracle::horizontal(edge));
  }
  CHECK(classify_horizontal(0.0) == PrimitiveSet{Primitive::behind});
  CHECK(classify_horizontal(180.0) == PrimitiveSet{Primitive::front});
  CHECK(classify_horizontal(45.0) == PrimitiveSet{Primitive::behind, Primitive::right});
  CHECK(classify_horizontal(22.5) == PrimitiveSet{Primitive::behind, Primitive::right});
}

TEST_CASE("elevation bands") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-90.0, 90.0);
  for (int i = 0; i < 10000; ++i) {
    const double e = u(rng);
    CHECK(classify_elevation(e) == oracle::elevation(e));
  }
  for (double e : {-90.0, -75.0, -20.0, 0.0, 20.0, 75.0, 90.0}) CHECK(classify_elevation(e) == oracle::elevation(e));
  CHECK(classify_elevation(10.0).kind == ElevationBand::Kind::horizontal_only);
  CHECK(classify_elevation(45.0).vertical == Primitive::above);
  CHECK(classify_elevation(-80.0).kind == ElevationBand::Kind::vertical_only);
}

TEST_CASE("worked example yields above, behind and left") {
  CameraPose cam;  // looking along +z
  const Eigen::Vector3d bowl(0.0, 0.8, 0.0);
  const Eigen::Vector3d pot(-0.3, 1.1, 0.3);
  const auto r = relation_between(pot, bowl, cam);
  CHECK(r.terms() == PrimitiveSet{Primitive::above, Primitive::behind, Primitive::left});
  CHECK(render_caption("small pot", "yellow bowl", r) ==
        "The small pot is above, behind and to the left of the yellow bowl.");
}

TEST_CASE("caption and question templates") {
  CHECK(render_caption("mug", "plate", *SpatialRelation::from_terms({Primitive::right})) ==
        "The mug is to the right of the plate.");
  CHECK(render_caption("mug", "plate", *SpatialRelation::from_terms({Primitive::front, Primitive::below})) ==
        "The mug is below and in front of the plate.");
  CHECK(render_question("small pot", "yellow bowl") ==
        "What is the position of the small pot relative to the yellow bowl?");
  CHECK_THROWS(render_caption("a", "b", SpatialRelation{}));
}

TEST_CASE("parse caption") {
  CHECK(parse_caption("above, behind and to the left of").terms ==
        PrimitiveSet{Primitive::above, Primitive::behind, Primitive::left});
  CHECK(parse_caption("to the right and behind").terms == PrimitiveSet{Primitive::right, Primitive::behind});
  const auto g = parse_caption("zorp blat");
  CHECK(g.flagged());
  CHECK(g.unknown_tokens == 2);
}

TEST_CASE("caption round trip and negatives over many relations") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 10000; ++i) {
    const auto r = random_relation(rng);
    const auto caption = render_caption("mug", "plate", r);
    CHECK(parse_caption(caption).terms == r.terms());
    const auto neg = make_negatives("mug", "plate", r, rng());
    CHECK(neg.term_swapped != caption);
    CHECK(neg.object_swapped != caption);
    const auto swapped_terms = parse_caption(neg.term_swapped).terms;
    CHECK(swapped_terms.size() == r.terms().size());
    CHECK((swapped_terms & r.terms()).size() + 1 == r.terms().size());
    CHECK(swapped_terms.contains(opposite(neg.swapped_term)));
    CHECK(neg.object_swapped == render_caption("plate", "mug", r));
  }
}

TEST_CASE("generated prompts from snapshots are consistent") {
  SceneEnv env(training_suite());
  for (std::uint64_t e = 0; e < 200; ++e) {
    env.reset_episode(e, e * 31 + 1);
    const auto snap = make_snapshot(env.suite(), env.state());
    const auto p = generate_prompt(snap, e);
    CHECK(p.pair.subject != p.pair.reference);
    const auto& a = snap.objects[p.pair.subject];
    const auto& b = snap.objects[p.pair.reference];
    const auto oracle_rel = relation_between(a.position, b.position, snap.camera);
    CHECK(p.pair.relation == oracle_rel);
    CHECK(p.pair.relation.complexity() >= 1);
    CHECK(p.pair.relation.complexity() <= 3);
    // term-swapped negative is geometrically false
    CHECK(parse_caption(p.captions.term_swapped).terms != oracle_rel.terms());
    CHECK(p.captions.question.find(a.name) < p.captions.question.find(b.name));
  }
}

TEST_CASE("sample records serialize and replay") {
  SceneEnv env(training_suite());
  env.reset_episode(0, 3);
  const auto s = make_sample(make_snapshot(env.suite(), env.state()), 5, 9, 2, 1);
  const auto line = to_jsonl_line(s);
  const auto back = sample_from_json(nlohmann::json::parse(line));
  CHECK(to_jsonl_line(back) == line);
  CHECK_FALSE(check_sample(back).has_value());
  auto bad = back;
  bad.caption = render_caption(bad.subject, bad.reference,
                               *SpatialRelation::from_terms({opposite(bad.relation.terms().to_vector()[0])}));
  CHECK(check_sample(bad).has_value());
  auto j = nlohmann::json::parse(line);
  j.erase("caption");
  CHECK_THROWS_AS(sample_from_json(j), std::invalid_argument);
}
