#pragma once

#include "rls3/mlp.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace rls3 {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

template <typename Scalar>
std::string parameter_digest(const Mlp<Scalar>& net) {
  const auto p = net.flat_parameters();
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(Scalar)));
}

}  // namespace rls3
