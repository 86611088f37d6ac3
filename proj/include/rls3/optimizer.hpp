#pragma once

#include "rls3/mlp.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rls3 {

enum class UpdateRule { gradient_descent, adam };

enum class StepOutcome { applied, skipped_non_finite };

template <typename Scalar>
struct OptimizerOptions {
  UpdateRule rule = UpdateRule::adam;
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
};

/// First-order optimizer state for one network. Moment accumulators mirror
/// the parameter shapes of the network it was built for.
template <typename Scalar>
class Optimizer {
 public:
  Optimizer() = default;

  Optimizer(const Mlp<Scalar>& net, OptimizerOptions<Scalar> options) : options_(options) {
    if (!(options.learning_rate > Scalar(0))) throw std::invalid_argument("learning rate must be positive");
    for (const auto& l : net.layers()) {
      m_weight_.push_back(MatrixX<Scalar>::Zero(l.weight.rows(), l.weight.cols()));
      v_weight_.push_back(MatrixX<Scalar>::Zero(l.weight.rows(), l.weight.cols()));
      m_bias_.push_back(VectorX<Scalar>::Zero(l.bias.size()));
      v_bias_.push_back(VectorX<Scalar>::Zero(l.bias.size()));
    }
  }

  StepOutcome step(Mlp<Scalar>& net, const MlpGradients<Scalar>& grads) {
    if (grads.weight.size() != m_weight_.size() || net.layer_count() != m_weight_.size())
      throw std::invalid_argument("gradient/optimizer layer count mismatch");
    for (std::size_t l = 0; l < m_weight_.size(); ++l) {
      if (grads.weight[l].rows() != m_weight_[l].rows() || grads.weight[l].cols() != m_weight_[l].cols() ||
          grads.bias[l].size() != m_bias_[l].size())
        throw std::invalid_argument("gradient shape does not match optimizer state");
    }
    if (!grads.all_finite()) {
      ++skipped_;
      return StepOutcome::skipped_non_finite;
    }
    ++steps_;
    const Scalar lr = options_.learning_rate;
    if (options_.rule == UpdateRule::gradient_descent) {
      for (std::size_t l = 0; l < m_weight_.size(); ++l) {
        auto& layer = net.mutable_layer(l);
        layer.weight -= lr * grads.weight[l];
        layer.bias -= lr * grads.bias[l];
      }
      return StepOutcome::applied;
    }
    const Scalar b1 = options_.beta1, b2 = options_.beta2;
    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(static_cast<double>(b1), static_cast<double>(steps_)));
    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(static_cast<double>(b2), static_cast<double>(steps_)));
    const Scalar step_size = lr * std::sqrt(c2) / c1;
    const Scalar eps_hat = options_.epsilon * std::sqrt(c2);
    for (std::size_t l = 0; l < m_weight_.size(); ++l) {
      auto& layer = net.mutable_layer(l);
      m_weight_[l] = b1 * m_weight_[l] + (Scalar(1) - b1) * grads.weight[l];
      v_weight_[l] = b2 * v_weight_[l] + (Scalar(1) - b2) * grads.weight[l].cwiseAbs2();
      layer.weight.array() -= step_size * m_weight_[l].array() / (v_weight_[l].array().sqrt() + eps_hat);
      m_bias_[l] = b1 * m_bias_[l] + (Scalar(1) - b1) * grads.bias[l];
      v_bias_[l] = b2 * v_bias_[l] + (Scalar(1) - b2) * grads.bias[l].cwiseAbs2();
      layer.bias.array() -= step_size * m_bias_[l].array() / (v_bias_[l].array().sqrt() + eps_hat);
    }
    return StepOutcome::applied;
  }

  std::uint64_t steps() const { return steps_; }
  std::uint64_t skipped() const { return skipped_; }
  const OptimizerOptions<Scalar>& options() const { return options_; }

 private:
  OptimizerOptions<Scalar> options_;
  std::vector<MatrixX<Scalar>> m_weight_, v_weight_;
  std::vector<VectorX<Scalar>> m_bias_, v_bias_;
  std::uint64_t steps_ = 0;
  std::uint64_t skipped_ = 0;
};

/// Adam on a single scalar parameter (used for the entropy temperature).
struct ScalarAdam {
  double learning_rate = 3e-4;
  double m = 0.0, v = 0.0;
  std::uint64_t t = 0;

  double step(double param, double grad) {
    if (!std::isfinite(grad)) return param;
    ++t;
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    return param - learning_rate * mh / (std::sqrt(vh) + 1e-8);
  }
};

}  // namespace rls3
