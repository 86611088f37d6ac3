#pragma once

#include "rls3/mlp.hpp"
#include "rls3/optimizer.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace rls3 {

inline constexpr std::size_t kActionSize = 3;
inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct Transition {
  Eigen::VectorXd observation;
  Eigen::Vector3d action;
  double reward = 0.0;
  Eigen::VectorXd next_observation;
  bool terminal = false;
};

template <typename Scalar>
struct TransitionBatch {
  MatrixX<Scalar> observation;       // obs x B
  MatrixX<Scalar> action;            // 3 x B
  VectorX<Scalar> reward;            // B
  MatrixX<Scalar> next_observation;  // obs x B
  VectorX<Scalar> done;              // B, 1 for terminal
  std::size_t size() const { return static_cast<std::size_t>(reward.size()); }
};

/// Fixed-capacity ring buffer. Minibatches are uniform without replacement.
template <typename Scalar>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000, std::size_t observation_size = 32)
      : capacity_(capacity), obs_size_(observation_size) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
    const auto c = static_cast<Eigen::Index>(capacity);
    const auto o = static_cast<Eigen::Index>(observation_size);
    obs_.resize(o, c);
    next_obs_.resize(o, c);
    act_.resize(static_cast<Eigen::Index>(kActionSize), c);
    reward_.resize(c);
    done_.resize(c);
  }

  void push(const Transition& t) {
    if (static_cast<std::size_t>(t.observation.size()) != obs_size_ ||
        static_cast<std::size_t>(t.next_observation.size()) != obs_size_)
      throw std::invalid_argument("transition observation has the wrong size");
    const auto i = static_cast<Eigen::Index>(head_);
    obs_.col(i) = t.observation.cast<Scalar>();
    next_obs_.col(i) = t.next_observation.cast<Scalar>();
    act_.col(i) = t.action.cast<Scalar>();
    reward_(i) = static_cast<Scalar>(t.reward);
    done_(i) = t.terminal ? Scalar(1) : Scalar(0);
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
    ++pushed_;
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t pushed() const { return pushed_; }

  Transition at(std::size_t k) const {
    if (k >= size_) throw std::out_of_range("replay index out of range");
    const auto i = static_cast<Eigen::Index>(slot(k));
    Transition t;
    t.observation = obs_.col(i).template cast<double>();
    t.next_observation = next_obs_.col(i).template cast<double>();
    t.action = act_.col(i).template cast<double>();
    t.reward = static_cast<double>(reward_(i));
    t.terminal = done_(i) != Scalar(0);
    return t;
  }

  /// Floyd's algorithm: `n` distinct indices, uniform.
  TransitionBatch<Scalar> sample(std::size_t n, std::mt19937_64& rng) const {
    if (n == 0 || n > size_) throw std::invalid_argument("cannot sample that many transitions");
    std::vector<std::size_t> picked;
    picked.reserve(n);
    std::unordered_set<std::size_t> seen;
    for (std::size_t j = size_ - n; j < size_; ++j) {
      std::uniform_int_distribution<std::size_t> d(0, j);
      std::size_t t = d(rng);
      if (seen.count(t)) t = j;
      seen.insert(t);
      picked.push_back(t);
    }
    TransitionBatch<Scalar> b;
    const auto m = static_cast<Eigen::Index>(n);
    b.observation.resize(obs_.rows(), m);
    b.next_observation.resize(obs_.rows(), m);
    b.action.resize(act_.rows(), m);
    b.reward.resize(m);
    b.done.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto i = static_cast<Eigen::Index>(picked[static_cast<std::size_t>(k)]);
      b.observation.col(k) = obs_.col(i);
      b.next_observation.col(k) = next_obs_.col(i);
      b.action.col(k) = act_.col(i);
      b.reward(k) = reward_(i);
      b.done(k) = done_(i);
    }
    return b;
  }

 private:
  // k-th oldest live entry
  std::size_t slot(std::size_t k) const { return size_ < capacity_ ? k : (head_ + k) % capacity_; }

  std::size_t capacity_;
  std::size_t obs_size_;
  MatrixX<Scalar> obs_, next_obs_, act_;
  VectorX<Scalar> reward_, done_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::uint64_t pushed_ = 0;
};

struct SacOptions {
  std::size_t hidden_layers = 2;
  std::size_t hidden_width = 128;
  double gamma = 0.99;
  double learning_rate = 3e-4;
  double alpha = 0.2;
  bool auto_alpha = false;
  double target_entropy = -static_cast<double>(kActionSize);
  double polyak = 0.995;
  std::size_t minibatch = 256;
  std::size_t warmup = 1000;
  std::size_t buffer_capacity = 100000;
  std::uint64_t seed = 0;
};

struct SacUpdateReport {
  bool applied = false;
  double critic1_loss = 0.0;
  double critic2_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
};

class SacNumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tanh-squashed Gaussian sample and its log-density, given standard
/// normal noise.
template <typename Scalar>
struct SquashedSample {
  MatrixX<Scalar> mean, log_std, log_std_raw, pre_tanh, action;
  VectorX<Scalar> log_prob;
};

template <typename Scalar>
SquashedSample<Scalar> squash(const MatrixX<Scalar>& actor_out, const MatrixX<Scalar>& noise) {
  const auto d = static_cast<Eigen::Index>(kActionSize);
  SquashedSample<Scalar> s;
  s.mean = actor_out.topRows(d);
  s.log_std_raw = actor_out.bottomRows(d);
  s.log_std = s.log_std_raw.cwiseMax(Scalar(kLogStdMin)).cwiseMin(Scalar(kLogStdMax));
  s.pre_tanh = s.mean + (s.log_std.array().exp() * noise.array()).matrix();
  s.action = s.pre_tanh.array().tanh().matrix();
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
  const auto u = s.pre_tanh.array();
  const auto softplus = (-2 * u).max(Scalar(0)) + ((-(-2 * u).abs()).exp() + Scalar(1)).log();
  const MatrixX<Scalar> log_jac = (Scalar(2) * (Scalar(std::numbers::ln2) - u - softplus)).matrix();
  const Scalar c = Scalar(0.5 * std::log(2.0 * std::numbers::pi));
  s.log_prob = ((Scalar(-0.5) * noise.array().square() - s.log_std.array() - c) - log_jac.array())
                   .colwise()
                   .sum()
                   .transpose();
  return s;
}

template <typename Scalar>
class SoftActorCritic {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  SoftActorCritic(std::size_t observation_size, SacOptions options)
      : options_(options), obs_size_(observation_size), rng_(options.seed), log_alpha_(std::log(options.alpha)) {
    if (!(options.alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (!(options.polyak >= 0.0 && options.polyak <= 1.0)) throw std::invalid_argument("polyak must lie in [0, 1]");
    const auto a = kActionSize;
    actor_ = make_mlp<Scalar>(obs_size_, options.hidden_layers, options.hidden_width, 2 * a, Activation::relu,
                              options.seed ^ 0xa1ull);
    q1_ = make_mlp<Scalar>(obs_size_ + a, options.hidden_layers, options.hidden_width, 1, Activation::relu,
                           options.seed ^ 0xc1ull);
    q2_ = make_mlp<Scalar>(obs_size_ + a, options.hidden_layers, options.hidden_width, 1, Activation::relu,
                           options.seed ^ 0xc2ull);
    q1_target_ = q1_;
    q2_target_ = q2_;
    reset_optimizers();
    alpha_opt_.learning_rate = options.learning_rate;
  }

  const SacOptions& options() const { return options_; }
  std::size_t observation_size() const { return obs_size_; }
  double alpha() const { return std::exp(log_alpha_); }
  double log_alpha() const { return log_alpha_; }
  void set_log_alpha(double v) { log_alpha_ = v; }

  const Mlp<Scalar>& actor() const { return actor_; }
  const Mlp<Scalar>& q1() const { return q1_; }
  const Mlp<Scalar>& q2() const { return q2_; }
  const Mlp<Scalar>& q1_target() const { return q1_target_; }
  const Mlp<Scalar>& q2_target() const { return q2_target_; }
  Mlp<Scalar>& mutable_actor() { return actor_; }
  Mlp<Scalar>& mutable_q1() { return q1_; }
  Mlp<Scalar>& mutable_q2() { return q2_; }

  void set_networks(Mlp<Scalar> actor, Mlp<Scalar> q1, Mlp<Scalar> q2, Mlp<Scalar> q1t, Mlp<Scalar> q2t) {
    if (actor.input_size() != obs_size_ || actor.output_size() != 2 * kActionSize ||
        q1.input_size() != obs_size_ + kActionSize || q1.output_size() != 1 || q2.input_size() != q1.input_size() ||
        q1t.input_size() != q1.input_size() || q2t.input_size() != q1.input_size())
      throw std::invalid_argument("network shapes do not fit this agent");
    actor_ = std::move(actor);
    q1_ = std::move(q1);
    q2_ = std::move(q2);
    q1_target_ = std::move(q1t);
    q2_target_ = std::move(q2t);
    reset_optimizers();
  }

  std::mt19937_64& rng() { return rng_; }

  Eigen::Vector3d select_action(const Eigen::VectorXd& observation, bool stochastic) {
    if (static_cast<std::size_t>(observation.size()) != obs_size_)
      throw std::invalid_argument("observation has the wrong size");
    if (!observation.allFinite()) throw std::invalid_argument("observation is not finite");
    const Vector out = actor_.forward(Vector(observation.cast<Scalar>()));
    const auto d = static_cast<Eigen::Index>(kActionSize);
    if (!stochastic) return out.head(d).array().tanh().matrix().template cast<double>();
    Matrix noise(d, 1);
    std::normal_distribution<double> n01;
    for (Eigen::Index i = 0; i < d; ++i) noise(i, 0) = static_cast<Scalar>(n01(rng_));
    return squash<Scalar>(Matrix(out), noise).action.col(0).template cast<double>();
  }

  struct CriticGradients {
    double loss1 = 0.0, loss2 = 0.0;
    MlpGradients<Scalar> q1, q2;
  };

  /// Mean-squared soft Bellman error of both critics. `next_noise` is the
  /// standard normal noise for the next-state action sample (3 x B).
  CriticGradients critic_loss_and_gradients(const TransitionBatch<Scalar>& b, const Matrix& next_noise) const {
    const auto n = static_cast<Eigen::Index>(b.size());
    const auto next = squash<Scalar>(actor_.forward(b.next_observation), next_noise);
    Matrix next_in(b.next_observation.rows() + next.action.rows(), n);
    next_in << b.next_observation, next.action;
    const Matrix t1 = q1_target_.forward(next_in);
    const Matrix t2 = q2_target_.forward(next_in);
    const Scalar a = static_cast<Scalar>(alpha());
    const Scalar g = static_cast<Scalar>(options_.gamma);
    const Vector soft = t1.row(0).cwiseMin(t2.row(0)).transpose() - a * next.log_prob;
    const Vector y = b.reward + g * (Vector::Ones(n) - b.done).cwiseProduct(soft);

    Matrix in(b.observation.rows() + b.action.rows(), n);
    in << b.observation, b.action;
    CriticGradients out;
    ForwardCache<Scalar> c1, c2;
    const Matrix p1 = q1_.forward(in, c1);
    const Matrix p2 = q2_.forward(in, c2);
    const Matrix e1 = p1 - y.transpose();
    const Matrix e2 = p2 - y.transpose();
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
    out.loss1 = static_cast<double>(e1.squaredNorm() * inv_n);
    out.loss2 = static_cast<double>(e2.squaredNorm() * inv_n);
    out.q1 = q1_.backward(c1, Scalar(2) * inv_n * e1);
    out.q2 = q2_.backward(c2, Scalar(2) * inv_n * e2);
    return out;
  }

  struct ActorGradients {
    double loss = 0.0;
    double mean_log_prob = 0.0;
    MlpGradients<Scalar> actor;
  };

  /// mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a)) with a reparameterized by
  /// `noise` (3 x B).
  ActorGradients actor_loss_and_gradients(const Matrix& observation, const Matrix& noise) const {
    const auto n = static_cast<Eigen::Index>(observation.cols());
    const auto d = static_cast<Eigen::Index>(kActionSize);
    ForwardCache<Scalar> ac;
    const Matrix out = actor_.forward(observation, ac);
    const auto s = squash<Scalar>(out, noise);
    Matrix in(observation.rows() + d, n);
    in << observation, s.action;
    ForwardCache<Scalar> c1, c2;
    const Matrix p1 = q1_.forward(in, c1);
    const Matrix p2 = q2_.forward(in, c2);
    const Scalar a = static_cast<Scalar>(alpha());
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);

    Matrix g1 = Matrix::Zero(1, n), g2 = Matrix::Zero(1, n);
    Scalar qsum = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (p1(0, j) <= p2(0, j)) {
        g1(0, j) = -inv_n;
        qsum += p1(0, j);
      } else {
        g2(0, j) = -inv_n;
        qsum += p2(0, j);
      }
    }
    const Matrix da = (q1_.backward(c1, g1).input + q2_.backward(c2, g2).input).bottomRows(d);
    const Matrix du =
        (da.array() * (Scalar(1) - s.action.array().square()) + a * inv_n * Scalar(2) * s.action.array()).matrix();
    const auto sigma = s.log_std.array().exp();
    const auto active = (s.log_std_raw.array() >= Scalar(kLogStdMin) && s.log_std_raw.array() <= Scalar(kLogStdMax))
                            .template cast<Scalar>();
    Matrix dout(2 * d, n);
    dout.topRows(d) = du;
    dout.bottomRows(d) = ((du.array() * sigma * noise.array() - a * inv_n) * active).matrix();

    ActorGradients res;
    res.mean_log_prob = static_cast<double>(s.log_prob.mean());
    res.loss = static_cast<double>(a * s.log_prob.sum() * inv_n - qsum * inv_n);
    res.actor = actor_.backward(ac, dout);
    return res;
  }

  /// One gradient step each for the critics, the actor and (when enabled)
  /// alpha, followed by polyak target updates. No-op before warmup.
  SacUpdateReport update(const ReplayBuffer<Scalar>& buffer) {
    SacUpdateReport r;
    r.alpha = alpha();
    if (buffer.size() < std::max(options_.warmup, options_.minibatch)) return r;
    const auto b = buffer.sample(options_.minibatch, rng_);
    const auto n = static_cast<Eigen::Index>(b.size());
    const auto d = static_cast<Eigen::Index>(kActionSize);

    const auto cg = critic_loss_and_gradients(b, gaussian(d, n));
    q1_opt_.step(q1_, cg.q1);
    q2_opt_.step(q2_, cg.q2);

    const auto ag = actor_loss_and_gradients(b.observation, gaussian(d, n));
    actor_opt_.step(actor_, ag.actor);

    if (options_.auto_alpha) log_alpha_ = alpha_opt_.step(log_alpha_, -(ag.mean_log_prob + options_.target_entropy));

    const Scalar keep = static_cast<Scalar>(options_.polyak);
    q1_target_.polyak_from(q1_, keep);
    q2_target_.polyak_from(q2_, keep);

    if (!actor_.all_finite() || !q1_.all_finite() || !q2_.all_finite() || !std::isfinite(log_alpha_))
      throw SacNumericError("non-finite agent parameters after update");
    r.applied = true;
    r.critic1_loss = cg.loss1;
    r.critic2_loss = cg.loss2;
    r.actor_loss = ag.loss;
    r.alpha = alpha();
    ++updates_;
    return r;
  }

  std::uint64_t updates() const { return updates_; }

 private:
  Matrix gaussian(Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n01;
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(n01(rng_));
    return m;
  }

  void reset_optimizers() {
    const OptimizerOptions<Scalar> o{UpdateRule::adam, static_cast<Scalar>(options_.learning_rate)};
    actor_opt_ = Optimizer<Scalar>(actor_, o);
    q1_opt_ = Optimizer<Scalar>(q1_, o);
    q2_opt_ = Optimizer<Scalar>(q2_, o);
  }

  SacOptions options_;
  std::size_t obs_size_;
  std::mt19937_64 rng_;
  double log_alpha_;
  Mlp<Scalar> actor_, q1_, q2_, q1_target_, q2_target_;
  Optimizer<Scalar> actor_opt_, q1_opt_, q2_opt_;
  ScalarAdam alpha_opt_;
  std::uint64_t updates_ = 0;
};

}  // namespace rls3
