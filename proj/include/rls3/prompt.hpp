#pragma once

#include "rls3/scene.hpp"

#include <Eigen/Core>

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rls3 {

enum class Primitive : std::uint8_t { left = 0, right, front, behind, above, below };

inline constexpr std::array<Primitive, 6> kAllPrimitives{Primitive::left,   Primitive::right, Primitive::front,
                                                         Primitive::behind, Primitive::above, Primitive::below};

constexpr Primitive opposite(Primitive p) {
  switch (p) {
    case Primitive::left: return Primitive::right;
    case Primitive::right: return Primitive::left;
    case Primitive::front: return Primitive::behind;
    case Primitive::behind: return Primitive::front;
    case Primitive::above: return Primitive::below;
    case Primitive::below: return Primitive::above;
  }
  return p;
}

constexpr bool is_vertical(Primitive p) { return p == Primitive::above || p == Primitive::below; }

std::string_view to_string(Primitive p);
std::optional<Primitive> primitive_from_string(std::string_view s);

/// Set of spatial primitives as a 6-bit mask.
class PrimitiveSet {
 public:
  constexpr PrimitiveSet() = default;
  constexpr PrimitiveSet(std::initializer_list<Primitive> ps) {
    for (auto p : ps) insert(p);
  }
  static constexpr PrimitiveSet from_mask(std::uint8_t mask) {
    PrimitiveSet s;
    s.bits_ = mask & 0x3f;
    return s;
  }

  constexpr void insert(Primitive p) { bits_ |= bit(p); }
  constexpr void erase(Primitive p) { bits_ &= static_cast<std::uint8_t>(~bit(p)); }
  constexpr bool contains(Primitive p) const { return (bits_ & bit(p)) != 0; }
  constexpr std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t mask() const { return bits_; }

  constexpr PrimitiveSet operator&(PrimitiveSet o) const { return from_mask(bits_ & o.bits_); }
  constexpr PrimitiveSet operator|(PrimitiveSet o) const { return from_mask(bits_ | o.bits_); }
  constexpr bool operator==(const PrimitiveSet&) const = default;

  std::vector<Primitive> to_vector() const;

 private:
  static constexpr std::uint8_t bit(Primitive p) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(p)); }
  std::uint8_t bits_ = 0;
};

/// 0-2 horizontal primitives plus an optional vertical one.
struct SpatialRelation {
  PrimitiveSet horizontal;
  std::optional<Primitive> vertical;

  int complexity() const { return static_cast<int>(horizontal.size()) + (vertical ? 1 : 0); }
  PrimitiveSet terms() const;
  /// Complexity in 1..3, no opposite pair, at most one term per axis.
  bool valid() const;
  bool operator==(const SpatialRelation&) const = default;

  static std::optional<SpatialRelation> from_terms(PrimitiveSet terms);
};

class DegenerateGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RelativeGeometry {
  double azimuth = 0.0;    // [0, 360); 0 points away from the camera, 90 toward camera-right
  double elevation = 0.0;  // [-90, 90]
};

/// Direction of `a` as seen from `b`, measured in the camera's yaw frame.
RelativeGeometry relative_geometry(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const CameraPose& camera);

/// Eight half-open 45 degree regions with boundaries at 22.5 + k*45.
PrimitiveSet classify_horizontal(double azimuth);

struct ElevationBand {
  enum class Kind { horizontal_only, mixed, vertical_only };
  Kind kind = Kind::horizontal_only;
  std::optional<Primitive> vertical;
  bool operator==(const ElevationBand&) const = default;
};

ElevationBand classify_elevation(double elevation);

/// Relation describing where `a` sits relative to `b`.
SpatialRelation relation_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const CameraPose& camera);

struct PairRelation {
  std::size_t subject = 0;    // index into snapshot objects
  std::size_t reference = 0;
  SpatialRelation relation;
};

PairRelation build_relation(const SceneSnapshot& snapshot, std::uint64_t seed);

std::string render_caption(std::string_view subject, std::string_view reference, const SpatialRelation& relation);
std::string render_question(std::string_view subject, std::string_view reference);

struct ParsedCaption {
  PrimitiveSet terms;
  std::size_t unknown_tokens = 0;
  bool flagged() const { return terms.empty(); }
};

/// Phrase-matches spatial primitives in caption or answer text.
ParsedCaption parse_caption(std::string_view text);

struct Negatives {
  std::string term_swapped;
  std::string object_swapped;
  Primitive swapped_term = Primitive::left;
};

Negatives make_negatives(std::string_view subject, std::string_view reference, const SpatialRelation& relation,
                         std::uint64_t seed);

struct CaptionSet {
  std::string subject;
  std::string reference;
  std::string positive;
  std::string question;
  std::string term_swapped;
  std::string object_swapped;
};

struct GeneratedPrompt {
  PairRelation pair;
  CaptionSet captions;
};

/// build_relation + caption, question and both negatives.
GeneratedPrompt generate_prompt(const SceneSnapshot& snapshot, std::uint64_t seed);

}  // namespace rls3
