#include "rls3/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

namespace rls3 {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

std::string_view surface_form(Primitive p) {
  switch (p) {
    case Primitive::left: return "to the left of";
    case Primitive::right: return "to the right of";
    case Primitive::front: return "in front of";
    case Primitive::behind: return "behind";
    case Primitive::above: return "above";
    case Primitive::below: return "below";
  }
  return "";
}

// Caption order: vertical, depth, lateral.
std::vector<Primitive> ordered_terms(const SpatialRelation& r) {
  std::vector<Primitive> out;
  if (r.vertical) out.push_back(*r.vertical);
  for (auto p : {Primitive::front, Primitive::behind, Primitive::left, Primitive::right})
    if (r.horizontal.contains(p)) out.push_back(p);
  return out;
}

bool is_connective(std::string_view w) {
  static constexpr std::array<std::string_view, 14> words{"the", "is", "of", "to",  "and",      "in",       "a",
                                                          "an",  "on", "at", "what", "position", "relative", "side"};
  return std::find(words.begin(), words.end(), w) != words.end();
}

}  // namespace

std::string_view to_string(Primitive p) {
  switch (p) {
    case Primitive::left: return "left";
    case Primitive::right: return "right";
    case Primitive::front: return "front";
    case Primitive::behind: return "behind";
    case Primitive::above: return "above";
    case Primitive::below: return "below";
  }
  return "";
}

std::optional<Primitive> primitive_from_string(std::string_view s) {
  for (auto p : kAllPrimitives)
    if (to_string(p) == s) return p;
  return std::nullopt;
}

std::vector<Primitive> PrimitiveSet::to_vector() const {
  std::vector<Primitive> out;
  for (auto p : kAllPrimitives)
    if (contains(p)) out.push_back(p);
  return out;
}

PrimitiveSet SpatialRelation::terms() const {
  PrimitiveSet t = horizontal;
  if (vertical) t.insert(*vertical);
  return t;
}

bool SpatialRelation::valid() const {
  if (horizontal.contains(Primitive::above) || horizontal.contains(Primitive::below)) return false;
  if (horizontal.contains(Primitive::left) && horizontal.contains(Primitive::right)) return false;
  if (horizontal.contains(Primitive::front) && horizontal.contains(Primitive::behind)) return false;
  if (vertical && !is_vertical(*vertical)) return false;
  const int c = complexity();
  return c >= 1 && c <= 3;
}

std::optional<SpatialRelation> SpatialRelation::from_terms(PrimitiveSet terms) {
  SpatialRelation r;
  for (auto p : terms.to_vector()) {
    if (is_vertical(p)) {
      if (r.vertical) return std::nullopt;
      r.vertical = p;
    } else {
      r.horizontal.insert(p);
    }
  }
  if (!r.valid()) return std::nullopt;
  return r;
}

RelativeGeometry relative_geometry(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const CameraPose& camera) {
  const Eigen::Vector3d d = a - b;
  if (d.squaredNorm() == 0.0) throw DegenerateGeometry("object centres coincide");
  const double yaw = camera.yaw / kRadToDeg;
  const double forward = d.x() * std::sin(yaw) + d.z() * std::cos(yaw);
  const double right = d.x() * std::cos(yaw) - d.z() * std::sin(yaw);
  RelativeGeometry g;
  g.azimuth = std::atan2(right, forward) * kRadToDeg;
  if (g.azimuth < 0.0) g.azimuth += 360.0;
  if (g.azimuth >= 360.0) g.azimuth -= 360.0;
  g.elevation = std::atan2(d.y(), std::hypot(forward, right)) * kRadToDeg;
  return g;
}

PrimitiveSet classify_horizontal(double azimuth) {
  static constexpr std::array<PrimitiveSet, 8> regions{
      PrimitiveSet{Primitive::behind},
      PrimitiveSet{Primitive::behind, Primitive::right},
      PrimitiveSet{Primitive::right},
      PrimitiveSet{Primitive::front, Primitive::right},
      PrimitiveSet{Primitive::front},
      PrimitiveSet{Primitive::front, Primitive::left},
      PrimitiveSet{Primitive::left},
      PrimitiveSet{Primitive::behind, Primitive::left},
  };
  double a = std::fmod(azimuth, 360.0);
  if (a < 0.0) a += 360.0;
  const auto idx = static_cast<std::size_t>(std::floor((a + 22.5) / 45.0)) % regions.size();
  return regions[idx];
}

ElevationBand classify_elevation(double elevation) {
  ElevationBand band;
  const double mag = std::abs(elevation);
  if (mag <= 20.0) return band;
  band.kind = mag <= 75.0 ? ElevationBand::Kind::mixed : ElevationBand::Kind::vertical_only;
  band.vertical = elevation > 0.0 ? Primitive::above : Primitive::below;
  return band;
}

SpatialRelation relation_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const CameraPose& camera) {
  const auto g = relative_geometry(a, b, camera);
  const auto band = classify_elevation(g.elevation);
  SpatialRelation r;
  r.vertical = band.vertical;
  if (band.kind != ElevationBand::Kind::vertical_only) r.horizontal = classify_horizontal(g.azimuth);
  return r;
}

PairRelation build_relation(const SceneSnapshot& snapshot, std::uint64_t seed) {
  const std::size_t n = snapshot.objects.size();
  if (n < 2) throw std::invalid_argument("a snapshot needs at least two objects");
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::uniform_int_distribution<std::size_t> second(0, n - 2);
    PairRelation out;
    out.subject = first(rng);
    out.reference = second(rng);
    if (out.reference >= out.subject) ++out.reference;
    try {
      out.relation = relation_between(snapshot.objects[out.subject].position, snapshot.objects[out.reference].position,
                                      snapshot.camera);
      return out;
    } catch (const DegenerateGeometry&) {
      continue;
    }
  }
  throw DegenerateGeometry("no non-degenerate object pair after resampling");
}

std::string render_caption(std::string_view subject, std::string_view reference, const SpatialRelation& relation) {
  if (!relation.valid()) throw std::invalid_argument("cannot render an invalid or empty relation");
  const auto terms = ordered_terms(relation);
  std::string phrase;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i > 0) phrase += (i + 1 == terms.size()) ? " and " : ", ";
    phrase += surface_form(terms[i]);
  }
  std::string out = "The ";
  out += subject;
  out += " is ";
  out += phrase;
  out += " the ";
  out += reference;
  out += ".";
  return out;
}

std::string render_question(std::string_view subject, std::string_view reference) {
  std::string out = "What is the position of the ";
  out += subject;
  out += " relative to the ";
  out += reference;
  out += "?";
  return out;
}

ParsedCaption parse_caption(std::string_view text) {
  ParsedCaption parsed;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (auto p = primitive_from_string(word)) {
      parsed.terms.insert(*p);
    } else if (!is_connective(word)) {
      ++parsed.unknown_tokens;
    }
    word.clear();
  };
  for (char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      flush();
    }
  }
  flush();
  return parsed;
}

Negatives make_negatives(std::string_view subject, std::string_view reference, const SpatialRelation& relation,
                         std::uint64_t seed) {
  const auto terms = relation.terms().to_vector();
  if (terms.empty()) throw std::invalid_argument("relation has no terms to swap");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, terms.size() - 1);
  const Primitive chosen = terms[pick(rng)];

  SpatialRelation swapped = relation;
  if (is_vertical(chosen)) {
    swapped.vertical = opposite(chosen);
  } else {
    swapped.horizontal.erase(chosen);
    swapped.horizontal.insert(opposite(chosen));
  }
  Negatives out;
  out.swapped_term = chosen;
  out.term_swapped = render_caption(subject, reference, swapped);
  out.object_swapped = render_caption(reference, subject, relation);
  return out;
}

GeneratedPrompt generate_prompt(const SceneSnapshot& snapshot, std::uint64_t seed) {
  GeneratedPrompt g;
  g.pair = build_relation(snapshot, seed);
  const auto& a = snapshot.objects[g.pair.subject].name;
  const auto& b = snapshot.objects[g.pair.reference].name;
  g.captions.subject = a;
  g.captions.reference = b;
  g.captions.positive = render_caption(a, b, g.pair.relation);
  g.captions.question = render_question(a, b);
  auto neg = make_negatives(a, b, g.pair.relation, seed ^ 0x5bd1e995ull);
  g.captions.term_swapped = std::move(neg.term_swapped);
  g.captions.object_swapped = std::move(neg.object_swapped);
  return g;
}

}  // namespace rls3
