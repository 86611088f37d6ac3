#pragma once

#include "rls3/mlp.hpp"
#include "rls3/optimizer.hpp"
#include "rls3/prompt.hpp"
#include "rls3/sample.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rls3 {

// ---------------------------------------------------------------------------
// Rubric

/// Score in 1..5 comparing predicted spatial terms with the ground truth.
///
/// Base score: 5 when every truth term is predicted; otherwise 4 for 2 of 3,
/// 3 for 1 of 2, 2 for 1 of 3 and 1 for none. Two stacking penalties of one
/// point each apply when an opposite of a truth term is predicted and when
/// more terms are predicted than the truth has. The score never drops
/// below 1. Throws std::invalid_argument unless |truth| is 1..3.
int rubric_score(PrimitiveSet predicted, PrimitiveSet truth);

// ---------------------------------------------------------------------------
// Symmetric contrastive loss

struct ContrastiveLoss {
  double value = 0.0;
  double image_to_text = 0.0;
  double text_to_image = 0.0;
  Eigen::MatrixXd image_gradient;  // d x N, w.r.t. the raw (unnormalized) embeddings
  Eigen::MatrixXd text_gradient;   // d x M
};

/// Columns of `images` (d x N) and `texts` (d x M, M >= N) are embeddings.
/// Image i is paired with text `positive[i]` (identity when empty). Image to
/// text softmaxes run over all M texts; text to image ones run over the N
/// images for each positive text. Similarity is cosine divided by `tau`.
ContrastiveLoss contrastive_loss(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts, double tau,
                                 std::span<const std::size_t> positive = {}, bool with_gradients = true);

// ---------------------------------------------------------------------------
// Judge interface

enum class JudgeKind { generative, contrastive };

std::string_view to_string(JudgeKind k);
JudgeKind judge_kind_from_string(std::string_view s);

struct JudgeVerdict {
  std::uint64_t sample_id = 0;
  bool flagged = false;
  std::string flag_reason;
  PrimitiveSet truth;
  PrimitiveSet predicted;                // generative
  int score = 0;                         // generative rubric score
  std::array<double, 3> similarities{};  // contrastive: positive, term-swapped, object-swapped
  bool correct = false;                  // contrastive: positive strictly outranks both negatives
};

struct InferenceResult {
  std::vector<JudgeVerdict> verdicts;
  std::optional<double> batch_loss;  // contrastive only

  std::size_t usable() const;
  double mean_score() const;
  double accuracy() const;
};

/// Episode reward J2: (6 - mean rubric)^2 for generative judges, L^2 for
/// contrastive ones. Aggregation is mean-then-transform.
double batch_reward(const InferenceResult& result, JudgeKind kind);
double reward_from_mean_score(double mean_score);
double reward_from_loss(double loss);

struct FineTuneOptions {
  std::size_t steps = 64;      // K: optimizer steps (generative) or epochs (contrastive)
  std::size_t cadence = 32;    // F: validation every F steps/epochs
  std::size_t minibatch = 64;
  std::uint64_t seed = 0;
};

struct ValidationPoint {
  std::size_t step = 0;
  double metric = 0.0;
};

struct FineTuneReport {
  std::vector<double> losses;  // one per step/epoch
  std::vector<ValidationPoint> validation;
};

class JudgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ValidationFn = std::function<double()>;

class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeKind kind() const = 0;
  /// Read-only scoring; never changes weights.
  virtual InferenceResult infer(std::span<const SampleRecord> samples) = 0;
  /// Continues training from the current weights.
  virtual FineTuneReport finetune(std::span<const SampleRecord> batch, const FineTuneOptions& options,
                                  const ValidationFn& validate) = 0;
  /// Mean rubric score (generative) or retrieval accuracy (contrastive).
  virtual double validation_metric(std::span<const SampleRecord> samples);
  virtual std::string weight_digest() const = 0;
  virtual void save(const std::filesystem::path& directory) const = 0;
};

/// Ground-truth terms of a sample, taken from its positive caption.
PrimitiveSet truth_terms(const SampleRecord& s);

// ---------------------------------------------------------------------------
// Generative term-classifier judge

inline constexpr std::size_t kGenerativeFeatures = 28;

struct JudgeNetworkOptions {
  std::size_t hidden_layers = 2;
  std::size_t hidden_width = 64;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
};

/// Features: one-hot subject (9), one-hot reference (9), world positions of
/// subject and reference (6), camera position (3), camera yaw / 180 (1).
Eigen::VectorXd generative_features(const SampleRecord& s, std::span<const std::string> catalog);

class GenerativeJudge final : public Judge {
 public:
  GenerativeJudge(std::vector<std::string> catalog, JudgeNetworkOptions options = {});

  JudgeKind kind() const override { return JudgeKind::generative; }
  InferenceResult infer(std::span<const SampleRecord> samples) override;
  FineTuneReport finetune(std::span<const SampleRecord> batch, const FineTuneOptions& options,
                          const ValidationFn& validate) override;
  std::string weight_digest() const override;
  void save(const std::filesystem::path& directory) const override;
  void load(const std::filesystem::path& directory);

  PrimitiveSet predict(const SampleRecord& s) const;

  /// Mean multi-label binary cross-entropy over `features` (28 x B) against
  /// 0/1 `targets` (6 x B), plus parameter gradients.
  std::pair<double, MlpGradients<double>> loss_and_gradients(const Eigen::MatrixXd& features,
                                                             const Eigen::MatrixXd& targets) const;

  const Mlp<double>& network() const { return net_; }
  Mlp<double>& mutable_network() { return net_; }
  double threshold() const { return threshold_; }

 private:
  std::vector<std::string> catalog_;
  Mlp<double> net_;
  Optimizer<double> optimizer_;
  double threshold_ = 0.5;
};

// ---------------------------------------------------------------------------
// Contrastive bi-encoder judge

inline constexpr std::size_t kImageFeatures = 40;

/// Hard negatives added to the text pool: 3N, 2N (term-swapped only) or N.
enum class NegativePool { both, term_only, none };
NegativePool negative_pool_from_string(std::string_view s);
inline constexpr std::size_t kTextFeatures = 24;
inline constexpr std::size_t kEmbeddingDim = 32;

/// Per catalog object: present flag + world position (36), then camera
/// position (3) and yaw / 180 (1).
Eigen::VectorXd image_features(const SampleRecord& s, std::span<const std::string> catalog);

/// Role-tagged token bag: subject one-hot (9), reference one-hot (9) and
/// spatial-term bag (6). Subject is the first catalog name in the text,
/// reference the last.
Eigen::VectorXd text_features(std::string_view caption, std::span<const std::string> catalog);

class ContrastiveJudge final : public Judge {
 public:
  ContrastiveJudge(std::vector<std::string> catalog, JudgeNetworkOptions options = {}, double temperature = 0.07);

  JudgeKind kind() const override { return JudgeKind::contrastive; }
  InferenceResult infer(std::span<const SampleRecord> samples) override;
  FineTuneReport finetune(std::span<const SampleRecord> batch, const FineTuneOptions& options,
                          const ValidationFn& validate) override;
  std::string weight_digest() const override;
  void save(const std::filesystem::path& directory) const override;
  void load(const std::filesystem::path& directory);

  /// Symmetric loss of a batch whose text pool holds the
  /// positives followed by every term-swapped and object-swapped negative.
  struct BatchGradients {
    double loss = 0.0;
    MlpGradients<double> image;
    MlpGradients<double> text;
  };
  BatchGradients loss_and_gradients(std::span<const SampleRecord> batch, NegativePool pool = NegativePool::both) const;

  double temperature() const { return temperature_; }
  const Mlp<double>& image_encoder() const { return image_net_; }
  const Mlp<double>& text_encoder() const { return text_net_; }
  Mlp<double>& mutable_image_encoder() { return image_net_; }
  Mlp<double>& mutable_text_encoder() { return text_net_; }
  NegativePool negatives = NegativePool::both;

 private:
  Eigen::MatrixXd embed_images(std::span<const SampleRecord> batch) const;
  Eigen::MatrixXd text_matrix(std::span<const SampleRecord> batch, NegativePool pool) const;

  std::vector<std::string> catalog_;
  Mlp<double> image_net_;
  Mlp<double> text_net_;
  Optimizer<double> image_opt_;
  Optimizer<double> text_opt_;
  double temperature_;
};

}  // namespace rls3
