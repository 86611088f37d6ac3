#pragma once

// Reference implementations written independently of the library code,
// shared by the unit tests and the acceptance binary.

#include "rls3/prompt.hpp"
#include "rls3/scene.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace rls3::oracle {

inline int rubric(unsigned predicted_mask, unsigned truth_mask) {
  auto count = [](unsigned m) {
    int c = 0;
    for (; m; m &= m - 1) ++c;
    return c;
  };
  const int t = count(truth_mask);
  const int p = count(predicted_mask);
  const int hits = count(predicted_mask & truth_mask);
  int score;
  if (hits == t) score = 5;
  else if (hits == 0) score = 1;
  else if (t == 3 && hits == 2) score = 4;
  else if (t == 2 && hits == 1) score = 3;
  else score = 2;  // 1 of 3
  // bit pairs (0,1) (2,3) (4,5) are opposites
  unsigned mirrored = 0;
  for (unsigned b = 0; b < 6; ++b)
    if (truth_mask & (1u << b)) mirrored |= 1u << (b ^ 1u);
  if (predicted_mask & mirrored) score -= 1;
  if (p > t) score -= 1;
  return std::max(score, 1);
}

// Direct interval table for the eight horizontal regions.
inline PrimitiveSet horizontal(double azimuth) {
  struct Row {
    double lo, hi;
    PrimitiveSet terms;
  };
  static const Row table[] = {
      {0.0, 22.5, {Primitive::behind}},
      {22.5, 67.5, {Primitive::behind, Primitive::right}},
      {67.5, 112.5, {Primitive::right}},
      {112.5, 157.5, {Primitive::front, Primitive::right}},
      {157.5, 202.5, {Primitive::front}},
      {202.5, 247.5, {Primitive::front, Primitive::left}},
      {247.5, 292.5, {Primitive::left}},
      {292.5, 337.5, {Primitive::behind, Primitive::left}},
      {337.5, 360.0, {Primitive::behind}},
  };
  for (const auto& r : table)
    if (azimuth >= r.lo && azimuth < r.hi) return r.terms;
  return {};
}

inline ElevationBand elevation(double e) {
  ElevationBand b;
  const double m = std::abs(e);
  if (m <= 20.0) return b;
  b.kind = m <= 75.0 ? ElevationBand::Kind::mixed : ElevationBand::Kind::vertical_only;
  b.vertical = e > 0 ? Primitive::above : Primitive::below;
  return b;
}

// Symmetric contrastive loss from plain loops. Columns are embeddings; the
// first N texts are the positives of the N images.
struct LossParts {
  double total, image_to_text, text_to_image;
};

inline LossParts contrastive(const std::vector<std::vector<double>>& images,
                             const std::vector<std::vector<double>>& texts, double tau) {
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      ab += a[k] * b[k];
      aa += a[k] * a[k];
      bb += b[k] * b[k];
    }
    return ab / std::sqrt(aa * bb);
  };
  const std::size_t n = images.size(), m = texts.size();
  double i2t = 0, t2i = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < m; ++j) denom += std::exp(cosine(images[i], texts[j]) / tau);
    i2t += -(cosine(images[i], texts[i]) / tau - std::log(denom));
  }
  for (std::size_t j = 0; j < n; ++j) {
    double denom = 0;
    for (std::size_t i = 0; i < n; ++i) denom += std::exp(cosine(images[i], texts[j]) / tau);
    t2i += -(cosine(images[j], texts[j]) / tau - std::log(denom));
  }
  i2t /= static_cast<double>(n);
  t2i /= static_cast<double>(n);
  return {(i2t + t2i) / 2, i2t, t2i};
}

// Every object rests on a surface with its footprint inside and no two boxes
// share interior volume.
inline bool snapshot_sound(const SceneSuite& suite, const SceneSnapshot& snap) {
  const SceneSpec* scene = nullptr;
  for (const auto& s : suite.scenes)
    if (s.id == snap.scene_id) scene = &s;
  if (!scene) return false;
  auto half_of = [&](const std::string& name) -> Eigen::Vector3d {
    for (const auto& o : suite.catalog)
      if (o.name == name) return o.half_extents;
    return Eigen::Vector3d::Constant(-1);
  };
  for (const auto& o : snap.objects) {
    const Eigen::Vector3d h = half_of(o.name);
    if (h.x() < 0) return false;
    bool supported = false;
    for (const auto& surf : scene->surfaces) {
      const bool inside_x = o.position.x() - h.x() >= surf.top_center.x() - surf.half_extent_x - 1e-12 &&
                            o.position.x() + h.x() <= surf.top_center.x() + surf.half_extent_x + 1e-12;
      const bool inside_z = o.position.z() - h.z() >= surf.top_center.z() - surf.half_extent_z - 1e-12 &&
                            o.position.z() + h.z() <= surf.top_center.z() + surf.half_extent_z + 1e-12;
      const bool resting = std::abs(o.position.y() - h.y() - surf.top_center.y()) < 1e-9;
      supported = supported || (inside_x && inside_z && resting);
    }
    if (!supported) return false;
  }
  for (std::size_t i = 0; i < snap.objects.size(); ++i)
    for (std::size_t j = i + 1; j < snap.objects.size(); ++j) {
      const auto& a = snap.objects[i];
      const auto& b = snap.objects[j];
      const Eigen::Vector3d ha = half_of(a.name), hb = half_of(b.name);
      bool separated = false;
      for (int k = 0; k < 3; ++k) separated = separated || std::abs(a.position(k) - b.position(k)) >= ha(k) + hb(k);
      if (!separated) return false;
    }
  return true;
}

}  // namespace rls3::oracle
