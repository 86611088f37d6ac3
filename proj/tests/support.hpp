#pragma once

#include "rls3/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace rls3::testing {

inline std::vector<double> flatten(const MlpGradients<double>& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    out.insert(out.end(), g.weight[l].data(), g.weight[l].data() + g.weight[l].size());
    out.insert(out.end(), g.bias[l].data(), g.bias[l].data() + g.bias[l].size());
  }
  return out;
}

// Central differences on `probes` seeded parameter indices; returns the worst
// relative error |fd - an| / max(|fd| + |an|, floor).
inline double worst_fd_error(Mlp<double>& net, const std::vector<double>& analytic,
                             const std::function<double()>& loss, std::size_t probes, std::uint64_t seed,
                             double h = 1e-6, double floor = 1e-7) {
  const auto p = net.flat_parameters();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
  double worst = 0.0;
  for (std::size_t k = 0; k < probes; ++k) {
    const std::size_t i = pick(rng);
    auto q = p;
    q[i] = p[i] + h;
    net.set_flat_parameters(q);
    const double lp = loss();
    q[i] = p[i] - h;
    net.set_flat_parameters(q);
    const double lm = loss();
    net.set_flat_parameters(p);
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(std::abs(fd) + std::abs(analytic[i]), floor));
  }
  return worst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rls3_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace rls3::testing
