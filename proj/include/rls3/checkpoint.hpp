#pragma once

#include "rls3/mlp.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace rls3 {

// Layout:
//   "RLS3NET1"                      8 bytes
//   u64 layer_count
//   per layer: u64 inputs, u64 outputs, u64 activation tag
//   per layer: weights (row-major, f64), then bias (f64)
// All integers and floats little-endian.
inline constexpr std::array<char, 8> kCheckpointMagic{'R', 'L', 'S', '3', 'N', 'E', 'T', '1'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace detail

template <typename Scalar>
void write_network(std::ostream& out, const Mlp<Scalar>& net) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u64(out, net.layer_count());
  for (const auto& l : net.layers()) {
    detail::put_u64(out, l.inputs());
    detail::put_u64(out, l.outputs());
    detail::put_u64(out, static_cast<std::uint64_t>(l.activation));
  }
  for (const auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::put_f64(out, static_cast<double>(l.weight(r, c)));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::put_f64(out, static_cast<double>(l.bias(r)));
  }
  if (!out) throw CheckpointError("failed to write checkpoint");
}

template <typename Scalar>
Mlp<Scalar> read_network(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw CheckpointError("not an RLS3NET1 checkpoint");
  const std::uint64_t count = detail::get_u64(in);
  if (count == 0 || count > 1024) throw CheckpointError("implausible layer count");
  std::vector<DenseLayer<Scalar>> layers(count);
  for (auto& l : layers) {
    const auto inputs = detail::get_u64(in);
    const auto outputs = detail::get_u64(in);
    const auto tag = detail::get_u64(in);
    if (inputs == 0 || outputs == 0 || inputs > (1u << 20) || outputs > (1u << 20))
      throw CheckpointError("implausible layer dimensions");
    if (tag > 2) throw CheckpointError("unknown activation tag");
    l.weight.resize(static_cast<Eigen::Index>(outputs), static_cast<Eigen::Index>(inputs));
    l.bias.resize(static_cast<Eigen::Index>(outputs));
    l.activation = static_cast<Activation>(tag);
  }
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = static_cast<Scalar>(detail::get_f64(in));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = static_cast<Scalar>(detail::get_f64(in));
  }
  try {
    return Mlp<Scalar>::from_layers(std::move(layers));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
}

template <typename Scalar>
void save_network(const std::filesystem::path& path, const Mlp<Scalar>& net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_network(out, net);
}

template <typename Scalar>
Mlp<Scalar> load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_network<Scalar>(in);
}

}  // namespace rls3
