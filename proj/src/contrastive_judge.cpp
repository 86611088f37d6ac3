#include "rls3/checkpoint.hpp"
#include "rls3/digest.hpp"
#include "rls3/judges.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

namespace rls3 {

namespace {

double wrapped_yaw(double yaw) {
  double y = std::fmod(yaw, 360.0);
  if (y > 180.0) y -= 360.0;
  if (y <= -180.0) y += 360.0;
  return y / 180.0;
}

bool word_boundary(std::string_view text, std::size_t pos) {
  return pos >= text.size() || !std::isalpha(static_cast<unsigned char>(text[pos]));
}

}  // namespace

Eigen::VectorXd image_features(const SampleRecord& s, std::span<const std::string> catalog) {
  const std::size_t n = catalog.size();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(4 * n + 4));
  for (const auto& o : s.objects) {
    const auto it = std::find(catalog.begin(), catalog.end(), o.name);
    if (it == catalog.end()) throw JudgeError("object '" + o.name + "' is not in the judge catalog");
    const auto k = static_cast<Eigen::Index>(4 * static_cast<std::size_t>(it - catalog.begin()));
    x(k) = 1.0;
    x.segment<3>(k + 1) = o.position;
  }
  const auto c = static_cast<Eigen::Index>(4 * n);
  x.segment<3>(c) = s.camera.position;
  x(c + 3) = wrapped_yaw(s.camera.yaw);
  return x;
}

Eigen::VectorXd text_features(std::string_view caption, std::span<const std::string> catalog) {
  const std::size_t n = catalog.size();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n + 6));
  std::optional<std::size_t> first_obj, last_obj;
  std::size_t first_pos = std::string_view::npos, last_pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::string& name = catalog[k];
    for (std::size_t pos = caption.find(name); pos != std::string_view::npos; pos = caption.find(name, pos + 1)) {
      const bool starts = pos == 0 || !std::isalpha(static_cast<unsigned char>(caption[pos - 1]));
      if (!starts || !word_boundary(caption, pos + name.size())) continue;
      if (pos < first_pos) {
        first_pos = pos;
        first_obj = k;
      }
      if (!last_obj || pos >= last_pos) {
        last_pos = pos;
        last_obj = k;
      }
    }
  }
  if (!first_obj || !last_obj || first_pos == last_pos) throw JudgeError("caption does not name two catalog objects");
  x(static_cast<Eigen::Index>(*first_obj)) = 1.0;
  x(static_cast<Eigen::Index>(n + *last_obj)) = 1.0;
  for (auto p : parse_caption(caption).terms.to_vector()) x(static_cast<Eigen::Index>(2 * n) + static_cast<Eigen::Index>(p)) = 1.0;
  return x;
}

ContrastiveJudge::ContrastiveJudge(std::vector<std::string> catalog, JudgeNetworkOptions options, double temperature)
    : catalog_(std::move(catalog)),
      image_net_(make_mlp<double>(4 * catalog_.size() + 4, options.hidden_layers, options.hidden_width, kEmbeddingDim,
                                  Activation::tanh, options.seed)),
      text_net_(make_mlp<double>(2 * catalog_.size() + 6, options.hidden_layers, options.hidden_width, kEmbeddingDim,
                                 Activation::tanh, options.seed ^ 0x7e57ull)),
      image_opt_(image_net_, {UpdateRule::adam, options.learning_rate}),
      text_opt_(text_net_, {UpdateRule::adam, options.learning_rate}),
      temperature_(temperature) {
  if (catalog_.size() != kCatalogSize) throw std::invalid_argument("judge catalog must hold 9 objects");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

Eigen::MatrixXd ContrastiveJudge::embed_images(std::span<const SampleRecord> batch) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(kImageFeatures), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = image_features(batch[i], catalog_);
  return x;
}

NegativePool negative_pool_from_string(std::string_view s) {
  if (s == "both") return NegativePool::both;
  if (s == "term") return NegativePool::term_only;
  if (s == "none") return NegativePool::none;
  throw std::invalid_argument("unknown negative pool '" + std::string(s) + "'");
}

// Columns: positives, then term-swapped, then object-swapped negatives.
Eigen::MatrixXd ContrastiveJudge::text_matrix(std::span<const SampleRecord> batch, NegativePool pool) const {
  const std::size_t n = batch.size();
  const std::size_t blocks = pool == NegativePool::both ? 3 : pool == NegativePool::term_only ? 2 : 1;
  Eigen::MatrixXd t(static_cast<Eigen::Index>(kTextFeatures), static_cast<Eigen::Index>(blocks * n));
  for (std::size_t i = 0; i < n; ++i) {
    t.col(static_cast<Eigen::Index>(i)) = text_features(batch[i].caption, catalog_);
    if (blocks > 1) t.col(static_cast<Eigen::Index>(n + i)) = text_features(batch[i].neg_term, catalog_);
    if (blocks > 2) t.col(static_cast<Eigen::Index>(2 * n + i)) = text_features(batch[i].neg_object, catalog_);
  }
  return t;
}

InferenceResult ContrastiveJudge::infer(std::span<const SampleRecord> samples) {
  InferenceResult result;
  std::vector<SampleRecord> usable;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    JudgeVerdict v;
    v.sample_id = samples[i].id;
    v.truth = truth_terms(samples[i]);
    try {
      (void)image_features(samples[i], catalog_);
      (void)text_features(samples[i].caption, catalog_);
      (void)text_features(samples[i].neg_term, catalog_);
      (void)text_features(samples[i].neg_object, catalog_);
      usable.push_back(samples[i]);
      where.push_back(i);
    } catch (const JudgeError& e) {
      v.flagged = true;
      v.flag_reason = e.what();
    }
    result.verdicts.push_back(std::move(v));
  }
  if (usable.empty()) return result;

  const std::size_t n = usable.size();
  const Eigen::MatrixXd z = image_net_.forward(embed_images(usable));
  const Eigen::MatrixXd w = text_net_.forward(text_matrix(usable, NegativePool::both));
  const std::size_t pool_cols = negatives == NegativePool::both ? 3 * n : negatives == NegativePool::term_only ? 2 * n : n;
  result.batch_loss =
      contrastive_loss(z, Eigen::MatrixXd(w.leftCols(static_cast<Eigen::Index>(pool_cols))), temperature_, {}, false)
          .value;
  for (std::size_t i = 0; i < n; ++i) {
    auto& v = result.verdicts[where[i]];
    const Eigen::VectorXd zi = z.col(static_cast<Eigen::Index>(i)).normalized();
    for (std::size_t k = 0; k < 3; ++k)
      v.similarities[k] = zi.dot(w.col(static_cast<Eigen::Index>(k * n + i)).normalized());
    v.correct = v.similarities[0] > v.similarities[1] && v.similarities[0] > v.similarities[2];
  }
  return result;
}

ContrastiveJudge::BatchGradients ContrastiveJudge::loss_and_gradients(std::span<const SampleRecord> batch,
                                                                      NegativePool pool) const {
  ForwardCache<double> image_cache, text_cache;
  const Eigen::MatrixXd z = image_net_.forward(embed_images(batch), image_cache);
  const Eigen::MatrixXd w = text_net_.forward(text_matrix(batch, pool), text_cache);
  const auto loss = contrastive_loss(z, w, temperature_);
  BatchGradients out;
  out.loss = loss.value;
  out.image = image_net_.backward(image_cache, loss.image_gradient);
  out.text = text_net_.backward(text_cache, loss.text_gradient);
  return out;
}

FineTuneReport ContrastiveJudge::finetune(std::span<const SampleRecord> batch, const FineTuneOptions& options,
                                          const ValidationFn& validate) {
  if (batch.empty()) throw std::invalid_argument("fine-tuning batch is empty");
  if (options.cadence == 0 || options.minibatch == 0) throw std::invalid_argument("cadence and minibatch must be positive");
  std::vector<SampleRecord> usable;
  for (const auto& s : batch) {
    try {
      (void)image_features(s, catalog_);
      (void)text_features(s.caption, catalog_);
      (void)text_features(s.neg_term, catalog_);
      (void)text_features(s.neg_object, catalog_);
      usable.push_back(s);
    } catch (const JudgeError&) {
    }
  }
  if (usable.empty()) throw JudgeError("no usable samples in fine-tuning batch");

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(usable.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  FineTuneReport report;
  for (std::size_t epoch = 1; epoch <= options.steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.minibatch) {
      const std::size_t end = std::min(order.size(), start + options.minibatch);
      std::vector<SampleRecord> mb;
      for (std::size_t k = start; k < end; ++k) mb.push_back(usable[order[k]]);
      auto g = loss_and_gradients(mb, negatives);
      if (!std::isfinite(g.loss)) throw JudgeError("non-finite fine-tuning loss in epoch " + std::to_string(epoch));
      total += g.loss;
      ++batches;
      if (image_opt_.step(image_net_, g.image) == StepOutcome::skipped_non_finite ||
          text_opt_.step(text_net_, g.text) == StepOutcome::skipped_non_finite)
        throw JudgeError("non-finite gradient in epoch " + std::to_string(epoch));
    }
    report.losses.push_back(total / static_cast<double>(batches));
    if (validate && epoch % options.cadence == 0) report.validation.push_back({epoch, validate()});
  }
  return report;
}

std::string ContrastiveJudge::weight_digest() const {
  return sha256_hex(parameter_digest(image_net_) + parameter_digest(text_net_));
}

void ContrastiveJudge::save(const std::filesystem::path& directory) const {
  std::filesystem::create_directories(directory);
  save_network(directory / "image_encoder.bin", image_net_);
  save_network(directory / "text_encoder.bin", text_net_);
}

void ContrastiveJudge::load(const std::filesystem::path& directory) {
  auto image = load_network<double>(directory / "image_encoder.bin");
  auto text = load_network<double>(directory / "text_encoder.bin");
  if (image.input_size() != image_net_.input_size() || text.input_size() != text_net_.input_size() ||
      image.output_size() != text.output_size())
    throw CheckpointError("contrastive judge checkpoint has the wrong shape");
  image_net_ = std::move(image);
  text_net_ = std::move(text);
  image_opt_ = Optimizer<double>(image_net_, image_opt_.options());
  text_opt_ = Optimizer<double>(text_net_, text_opt_.options());
}

}  // namespace rls3
