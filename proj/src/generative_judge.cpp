#include "rls3/checkpoint.hpp"
#include "rls3/digest.hpp"
#include "rls3/judges.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>

namespace rls3 {

namespace {

std::size_t catalog_index(std::span<const std::string> catalog, std::string_view name) {
  for (std::size_t i = 0; i < catalog.size(); ++i)
    if (catalog[i] == name) return i;
  throw JudgeError("object '" + std::string(name) + "' is not in the judge catalog");
}

double wrapped_yaw(double yaw) {
  double y = std::fmod(yaw, 360.0);
  if (y > 180.0) y -= 360.0;
  if (y <= -180.0) y += 360.0;
  return y / 180.0;
}

Eigen::VectorXd term_targets(PrimitiveSet truth) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(6);
  for (auto p : truth.to_vector()) y(static_cast<Eigen::Index>(p)) = 1.0;
  return y;
}

}  // namespace

Eigen::VectorXd generative_features(const SampleRecord& s, std::span<const std::string> catalog) {
  const auto* a = s.find_object(s.subject);
  const auto* b = s.find_object(s.reference);
  if (!a || !b) throw JudgeError("sample " + std::to_string(s.id) + " lacks subject/reference geometry");
  const std::size_t n = catalog.size();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n + 10));
  x(static_cast<Eigen::Index>(catalog_index(catalog, s.subject))) = 1.0;
  x(static_cast<Eigen::Index>(n + catalog_index(catalog, s.reference))) = 1.0;
  const auto o = static_cast<Eigen::Index>(2 * n);
  x.segment<3>(o) = a->position;
  x.segment<3>(o + 3) = b->position;
  x.segment<3>(o + 6) = s.camera.position;
  x(o + 9) = wrapped_yaw(s.camera.yaw);
  return x;
}

GenerativeJudge::GenerativeJudge(std::vector<std::string> catalog, JudgeNetworkOptions options)
    : catalog_(std::move(catalog)),
      net_(make_mlp<double>(2 * catalog_.size() + 10, options.hidden_layers, options.hidden_width, 6,
                            Activation::tanh, options.seed)),
      optimizer_(net_, {UpdateRule::adam, options.learning_rate}) {
  if (catalog_.size() != kCatalogSize) throw std::invalid_argument("judge catalog must hold 9 objects");
}

PrimitiveSet GenerativeJudge::predict(const SampleRecord& s) const {
  const Eigen::VectorXd logits = net_.forward(generative_features(s, catalog_));
  PrimitiveSet out;
  for (auto p : kAllPrimitives) {
    const double prob = 1.0 / (1.0 + std::exp(-logits(static_cast<Eigen::Index>(p))));
    if (prob > threshold_) out.insert(p);
  }
  return out;
}

InferenceResult GenerativeJudge::infer(std::span<const SampleRecord> samples) {
  InferenceResult result;
  result.verdicts.reserve(samples.size());
  std::vector<std::size_t> ok;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(kGenerativeFeatures), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    JudgeVerdict v;
    v.sample_id = samples[i].id;
    v.truth = truth_terms(samples[i]);
    try {
      if (v.truth.size() < 1 || v.truth.size() > 3) throw JudgeError("caption does not carry 1-3 spatial terms");
      x.col(static_cast<Eigen::Index>(ok.size())) = generative_features(samples[i], catalog_);
      ok.push_back(i);
    } catch (const JudgeError& e) {
      v.flagged = true;
      v.flag_reason = e.what();
    }
    result.verdicts.push_back(std::move(v));
  }
  if (ok.empty()) return result;
  const Eigen::MatrixXd logits = net_.forward(Eigen::MatrixXd(x.leftCols(static_cast<Eigen::Index>(ok.size()))));
  for (std::size_t k = 0; k < ok.size(); ++k) {
    auto& v = result.verdicts[ok[k]];
    for (auto p : kAllPrimitives) {
      const double prob = 1.0 / (1.0 + std::exp(-logits(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k))));
      if (prob > threshold_) v.predicted.insert(p);
    }
    v.score = rubric_score(v.predicted, v.truth);
  }
  return result;
}

std::pair<double, MlpGradients<double>> GenerativeJudge::loss_and_gradients(const Eigen::MatrixXd& features,
                                                                            const Eigen::MatrixXd& targets) const {
  ForwardCache<double> cache;
  const Eigen::MatrixXd logits = net_.forward(features, cache);
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw std::invalid_argument("target shape does not match network output");
  const double scale = 1.0 / static_cast<double>(logits.size());
  const Eigen::ArrayXXd xl = logits.array();
  const Eigen::ArrayXXd loss = xl.max(0.0) - xl * targets.array() + (1.0 + (-xl.abs()).exp()).log();
  const Eigen::MatrixXd grad = ((1.0 / (1.0 + (-xl).exp())) - targets.array()).matrix() * scale;
  return {loss.sum() * scale, net_.backward(cache, grad)};
}

FineTuneReport GenerativeJudge::finetune(std::span<const SampleRecord> batch, const FineTuneOptions& options,
                                         const ValidationFn& validate) {
  if (batch.empty()) throw std::invalid_argument("fine-tuning batch is empty");
  if (options.cadence == 0 || options.minibatch == 0) throw std::invalid_argument("cadence and minibatch must be positive");
  std::vector<Eigen::VectorXd> xs, ys;
  for (const auto& s : batch) {
    const auto truth = truth_terms(s);
    if (truth.size() < 1 || truth.size() > 3) continue;
    try {
      xs.push_back(generative_features(s, catalog_));
      ys.push_back(term_targets(truth));
    } catch (const JudgeError&) {
    }
  }
  if (xs.empty()) throw JudgeError("no usable samples in fine-tuning batch");

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> all(xs.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::size_t mb = std::min(options.minibatch, xs.size());

  FineTuneReport report;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    std::vector<std::size_t> pick;
    pick.reserve(mb);
    std::sample(all.begin(), all.end(), std::back_inserter(pick), static_cast<std::ptrdiff_t>(mb), rng);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(kGenerativeFeatures), static_cast<Eigen::Index>(mb));
    Eigen::MatrixXd y(6, static_cast<Eigen::Index>(mb));
    for (std::size_t k = 0; k < mb; ++k) {
      x.col(static_cast<Eigen::Index>(k)) = xs[pick[k]];
      y.col(static_cast<Eigen::Index>(k)) = ys[pick[k]];
    }
    auto [loss, grads] = loss_and_gradients(x, y);
    if (!std::isfinite(loss)) throw JudgeError("non-finite fine-tuning loss at step " + std::to_string(step));
    report.losses.push_back(loss);
    if (optimizer_.step(net_, grads) == StepOutcome::skipped_non_finite)
      throw JudgeError("non-finite gradient at step " + std::to_string(step));
    if (validate && step % options.cadence == 0) report.validation.push_back({step, validate()});
  }
  return report;
}

std::string GenerativeJudge::weight_digest() const { return parameter_digest(net_); }

void GenerativeJudge::save(const std::filesystem::path& directory) const {
  std::filesystem::create_directories(directory);
  save_network(directory / "generative.bin", net_);
}

void GenerativeJudge::load(const std::filesystem::path& directory) {
  auto net = load_network<double>(directory / "generative.bin");
  if (net.input_size() != net_.input_size() || net.output_size() != net_.output_size())
    throw CheckpointError("generative judge checkpoint has the wrong shape");
  net_ = std::move(net);
  optimizer_ = Optimizer<double>(net_, optimizer_.options());
}

}  // namespace rls3
