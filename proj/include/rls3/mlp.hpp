#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rls3 {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Activation : std::uint8_t { identity = 0, tanh = 1, relu = 2 };

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // rows = outputs, cols = inputs
  VectorX<Scalar> bias;
  Activation activation = Activation::identity;

  std::size_t inputs() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t outputs() const { return static_cast<std::size_t>(weight.rows()); }
};

/// Per-parameter gradients of a scalar loss, plus the gradient with respect
/// to the network input (same shape as the batch that was fed forward).
template <typename Scalar>
struct MlpGradients {
  std::vector<MatrixX<Scalar>> weight;
  std::vector<VectorX<Scalar>> bias;
  MatrixX<Scalar> input;

  MlpGradients& operator+=(const MlpGradients& other) {
    if (other.weight.size() != weight.size()) throw std::invalid_argument("gradient layer count mismatch");
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] += other.weight[i];
      bias[i] += other.bias[i];
    }
    if (input.size() == other.input.size()) input += other.input;
    return *this;
  }

  bool all_finite() const {
    for (std::size_t i = 0; i < weight.size(); ++i)
      if (!weight[i].allFinite() || !bias[i].allFinite()) return false;
    return true;
  }
};

template <typename Scalar>
class Mlp;

/// Activations recorded by a training-mode forward pass. Tied to the
/// parameter version of the network that produced it; a cache taken before
/// an update is stale and backward() refuses it.
template <typename Scalar>
class ForwardCache {
 public:
  const MatrixX<Scalar>& output() const { return outputs_.back(); }
  const MatrixX<Scalar>& input() const { return outputs_.front(); }
  bool empty() const { return outputs_.empty(); }

 private:
  friend class Mlp<Scalar>;
  std::vector<MatrixX<Scalar>> outputs_;
  std::uint64_t version_ = 0;
};

class StaleCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Dense multilayer perceptron over column batches (one sample per column).
template <typename Scalar>
class Mlp {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  Mlp() = default;

  /// `sizes` holds input size followed by every layer's output size;
  /// `activations` has one entry per layer. Parameters are drawn uniformly
  /// from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Mlp(std::span<const std::size_t> sizes, std::span<const Activation> activations, std::uint64_t seed) {
    if (sizes.size() < 2) throw std::invalid_argument("an Mlp needs at least one layer");
    if (activations.size() != sizes.size() - 1)
      throw std::invalid_argument("one activation per layer is required");
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      if (sizes[l] == 0 || sizes[l + 1] == 0) throw std::invalid_argument("layer sizes must be positive");
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      DenseLayer<Scalar> layer;
      layer.weight.resize(static_cast<Eigen::Index>(sizes[l + 1]), static_cast<Eigen::Index>(sizes[l]));
      layer.bias.resize(static_cast<Eigen::Index>(sizes[l + 1]));
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = static_cast<Scalar>(dist(rng));
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = static_cast<Scalar>(dist(rng));
      layer.activation = activations[l];
      layers_.push_back(std::move(layer));
    }
  }

  Mlp(std::initializer_list<std::size_t> sizes, std::initializer_list<Activation> activations, std::uint64_t seed)
      : Mlp(std::span<const std::size_t>(sizes.begin(), sizes.size()),
            std::span<const Activation>(activations.begin(), activations.size()), seed) {}

  static Mlp from_layers(std::vector<DenseLayer<Scalar>> layers) {
    if (layers.empty()) throw std::invalid_argument("an Mlp needs at least one layer");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].bias.size() != layers[l].weight.rows())
        throw std::invalid_argument("bias length must equal layer output size");
      if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows())
        throw std::invalid_argument("consecutive layer dimensions are incompatible");
    }
    Mlp net;
    net.layers_ = std::move(layers);
    return net;
  }

  std::size_t input_size() const { return layers_.empty() ? 0 : layers_.front().inputs(); }
  std::size_t output_size() const { return layers_.empty() ? 0 : layers_.back().outputs(); }
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  std::uint64_t version() const { return version_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Mutable access bumps the parameter version, invalidating caches.
  DenseLayer<Scalar>& mutable_layer(std::size_t i) {
    ++version_;
    return layers_.at(i);
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  Matrix forward(const Matrix& input) const {
    check_input(input);
    Matrix x = input;
    for (const auto& layer : layers_) x = apply_layer(layer, x);
    return x;
  }

  Vector forward(const Vector& input) const { return forward(Matrix(input)).col(0); }

  Matrix forward(const Matrix& input, ForwardCache<Scalar>& cache) const {
    check_input(input);
    cache.outputs_.clear();
    cache.outputs_.reserve(layers_.size() + 1);
    cache.outputs_.push_back(input);
    for (const auto& layer : layers_) cache.outputs_.push_back(apply_layer(layer, cache.outputs_.back()));
    cache.version_ = version_;
    return cache.outputs_.back();
  }

  /// Gradients of a loss given dLoss/dOutput for the cached batch.
  MlpGradients<Scalar> backward(const ForwardCache<Scalar>& cache, const Matrix& output_gradient) const {
    if (cache.outputs_.size() != layers_.size() + 1 || cache.version_ != version_)
      throw StaleCacheError("forward cache does not match the current parameters");
    if (output_gradient.rows() != cache.output().rows() || output_gradient.cols() != cache.output().cols())
      throw std::invalid_argument("output gradient shape does not match the cached output");

    MlpGradients<Scalar> grads;
    grads.weight.resize(layers_.size());
    grads.bias.resize(layers_.size());
    Matrix delta = output_gradient;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      const Matrix& out = cache.outputs_[l + 1];
      switch (layer.activation) {
        case Activation::identity:
          break;
        case Activation::tanh:
          delta.array() *= (Scalar(1) - out.array().square());
          break;
        case Activation::relu:
          delta.array() *= (out.array() > Scalar(0)).template cast<Scalar>();
          break;
      }
      grads.weight[l].noalias() = delta * cache.outputs_[l].transpose();
      grads.bias[l] = delta.rowwise().sum();
      Matrix next = layer.weight.transpose() * delta;
      delta = std::move(next);
    }
    grads.input = std::move(delta);
    return grads;
  }

  MlpGradients<Scalar> zero_gradients() const {
    MlpGradients<Scalar> g;
    for (const auto& l : layers_) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  /// target <- keep * target + (1 - keep) * source, layer by layer.
  void polyak_from(const Mlp& source, Scalar keep) {
    if (source.layers_.size() != layers_.size()) throw std::invalid_argument("polyak shape mismatch");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].weight = keep * layers_[l].weight + (Scalar(1) - keep) * source.layers_[l].weight;
      layers_[l].bias = keep * layers_[l].bias + (Scalar(1) - keep) * source.layers_[l].bias;
    }
    ++version_;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    std::vector<DenseLayer<Other>> out;
    for (const auto& l : layers_)
      out.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>(), l.activation});
    return Mlp<Other>::from_layers(std::move(out));
  }

  /// Flat parameter view in layer order (weights column-major, then bias).
  std::vector<Scalar> flat_parameters() const {
    std::vector<Scalar> p;
    p.reserve(parameter_count());
    for (const auto& l : layers_) {
      p.insert(p.end(), l.weight.data(), l.weight.data() + l.weight.size());
      p.insert(p.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return p;
  }

  void set_flat_parameters(std::span<const Scalar> p) {
    if (p.size() != parameter_count()) throw std::invalid_argument("flat parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : layers_) {
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(k), l.weight.size(), l.weight.data());
      k += static_cast<std::size_t>(l.weight.size());
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(k), l.bias.size(), l.bias.data());
      k += static_cast<std::size_t>(l.bias.size());
    }
    ++version_;
  }

 private:
  void check_input(const Matrix& input) const {
    if (layers_.empty()) throw std::logic_error("forward on an empty network");
    if (static_cast<std::size_t>(input.rows()) != input_size())
      throw std::invalid_argument("input has " + std::to_string(input.rows()) + " rows, network expects " +
                                  std::to_string(input_size()));
  }

  static Matrix apply_layer(const DenseLayer<Scalar>& layer, const Matrix& x) {
    Matrix z = layer.weight * x;
    z.colwise() += layer.bias;
    switch (layer.activation) {
      case Activation::identity:
        break;
      case Activation::tanh:
        z = z.array().tanh().matrix();
        break;
      case Activation::relu:
        z = z.cwiseMax(Scalar(0));
        break;
    }
    return z;
  }

  std::vector<DenseLayer<Scalar>> layers_;
  std::uint64_t version_ = 0;
};

/// Hidden layers of `width` with `hidden` activation, identity output.
template <typename Scalar>
Mlp<Scalar> make_mlp(std::size_t inputs, std::size_t hidden_layers, std::size_t width, std::size_t outputs,
                     Activation hidden, std::uint64_t seed) {
  std::vector<std::size_t> sizes{inputs};
  std::vector<Activation> acts;
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    sizes.push_back(width);
    acts.push_back(hidden);
  }
  sizes.push_back(outputs);
  acts.push_back(Activation::identity);
  return Mlp<Scalar>(sizes, acts, seed);
}

}  // namespace rls3
