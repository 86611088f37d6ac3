#include "rls3/judges.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rls3 {

int rubric_score(PrimitiveSet predicted, PrimitiveSet truth) {
  const std::size_t n = truth.size();
  if (n < 1 || n > 3) throw std::invalid_argument("rubric truth must hold 1 to 3 terms");
  const std::size_t correct = (predicted & truth).size();
  int score = 1;
  if (correct == n) {
    score = 5;
  } else if (n == 3 && correct == 2) {
    score = 4;
  } else if (n == 2 && correct == 1) {
    score = 3;
  } else if (n == 3 && correct == 1) {
    score = 2;
  }
  bool opposite_used = false;
  for (auto t : truth.to_vector())
    if (predicted.contains(opposite(t))) opposite_used = true;
  if (opposite_used) --score;
  if (predicted.size() > n) --score;
  return std::max(score, 1);
}

ContrastiveLoss contrastive_loss(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts, double tau,
                                 std::span<const std::size_t> positive, bool with_gradients) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  const Eigen::Index n = images.cols();
  const Eigen::Index m = texts.cols();
  if (n == 0) throw std::invalid_argument("contrastive loss needs at least one image");
  if (images.rows() != texts.rows()) throw std::invalid_argument("embedding dimensions differ");
  if (m < n) throw std::invalid_argument("text pool must be at least as large as the image batch");

  std::vector<std::size_t> pos(static_cast<std::size_t>(n));
  if (positive.empty()) {
    std::iota(pos.begin(), pos.end(), std::size_t{0});
  } else {
    if (positive.size() != pos.size()) throw std::invalid_argument("one positive text per image is required");
    std::copy(positive.begin(), positive.end(), pos.begin());
    for (auto p : pos)
      if (p >= static_cast<std::size_t>(m)) throw std::invalid_argument("positive index out of range");
  }

  const Eigen::VectorXd zn = images.colwise().norm().transpose();
  const Eigen::VectorXd wn = texts.colwise().norm().transpose();
  if ((zn.array() == 0.0).any() || (wn.array() == 0.0).any())
    throw std::invalid_argument("zero-norm embedding cannot be normalized");
  const Eigen::MatrixXd z = images * zn.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd w = texts * wn.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd s = (z.transpose() * w) / tau;  // n x m

  ContrastiveLoss out;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, m);
  const double inv_n = 1.0 / static_cast<double>(n);

  // image -> text: softmax across each row (all m texts)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = s.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (s.row(i).array() - mx).exp().matrix();
    const double lse = mx + std::log(e.sum());
    const auto p = static_cast<Eigen::Index>(pos[static_cast<std::size_t>(i)]);
    out.image_to_text += (lse - s(i, p)) * inv_n;
    g.row(i) += 0.5 * inv_n * e / e.sum();
    g(i, p) -= 0.5 * inv_n;
  }
  // text -> image: for each positive text, softmax down its column (n images)
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = static_cast<Eigen::Index>(pos[static_cast<std::size_t>(i)]);
    const Eigen::VectorXd col = s.col(p);
    const double mx = col.maxCoeff();
    const Eigen::VectorXd e = (col.array() - mx).exp().matrix();
    const double lse = mx + std::log(e.sum());
    out.text_to_image += (lse - s(i, p)) * inv_n;
    g.col(p) += 0.5 * inv_n * e / e.sum();
    g(i, p) -= 0.5 * inv_n;
  }
  out.value = 0.5 * (out.image_to_text + out.text_to_image);
  if (!with_gradients) return out;

  const Eigen::MatrixXd dz = w * g.transpose() / tau;  // d x n
  const Eigen::MatrixXd dw = z * g / tau;              // d x m
  out.image_gradient.resize(images.rows(), n);
  out.text_gradient.resize(texts.rows(), m);
  for (Eigen::Index i = 0; i < n; ++i)
    out.image_gradient.col(i) = (dz.col(i) - z.col(i) * z.col(i).dot(dz.col(i))) / zn(i);
  for (Eigen::Index j = 0; j < m; ++j)
    out.text_gradient.col(j) = (dw.col(j) - w.col(j) * w.col(j).dot(dw.col(j))) / wn(j);
  return out;
}

std::string_view to_string(JudgeKind k) { return k == JudgeKind::generative ? "generative" : "contrastive"; }

JudgeKind judge_kind_from_string(std::string_view s) {
  if (s == "generative") return JudgeKind::generative;
  if (s == "contrastive") return JudgeKind::contrastive;
  throw std::invalid_argument("unknown judge kind '" + std::string(s) + "'");
}

std::size_t InferenceResult::usable() const {
  return static_cast<std::size_t>(std::count_if(verdicts.begin(), verdicts.end(), [](const auto& v) { return !v.flagged; }));
}

double InferenceResult::mean_score() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : verdicts)
    if (!v.flagged) {
      sum += v.score;
      ++n;
    }
  if (n == 0) throw JudgeError("no usable verdicts");
  return sum / static_cast<double>(n);
}

double InferenceResult::accuracy() const {
  std::size_t hits = 0, n = 0;
  for (const auto& v : verdicts)
    if (!v.flagged) {
      hits += v.correct ? 1 : 0;
      ++n;
    }
  if (n == 0) throw JudgeError("no usable verdicts");
  return static_cast<double>(hits) / static_cast<double>(n);
}

double reward_from_mean_score(double mean_score) { return (6.0 - mean_score) * (6.0 - mean_score); }
double reward_from_loss(double loss) { return loss * loss; }

double batch_reward(const InferenceResult& result, JudgeKind kind) {
  if (result.verdicts.empty()) throw std::invalid_argument("cannot compute a reward from no verdicts");
  if (kind == JudgeKind::generative) return reward_from_mean_score(result.mean_score());
  if (!result.batch_loss) throw JudgeError("contrastive inference produced no batch loss");
  return reward_from_loss(*result.batch_loss);
}

double Judge::validation_metric(std::span<const SampleRecord> samples) {
  const auto r = infer(samples);
  return kind() == JudgeKind::generative ? r.mean_score() : r.accuracy();
}

PrimitiveSet truth_terms(const SampleRecord& s) { return parse_caption(s.caption).terms; }

}  // namespace rls3
