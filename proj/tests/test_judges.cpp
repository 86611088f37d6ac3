#include "rls3/datasets.hpp"
#include "rls3/digest.hpp"
#include "rls3/judges.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <array>
#include <random>

using namespace rls3;

namespace {

std::vector<std::string> catalog() {
  std::vector<std::string> names;
  for (const auto& o : training_suite().catalog) names.push_back(o.name);
  return names;
}

const FixedSet& small_set() {
  static const FixedSet set = generate_fixed_set(training_suite(), 96, 1234);
  return set;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

std::vector<std::vector<double>> columns(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.emplace_back(m.col(c).data(), m.col(c).data() + m.rows());
  return out;
}

}  // namespace

TEST_CASE("rubric matches the brute-force oracle on every pair") {
  std::size_t pairs = 0;
  for (unsigned t = 1; t < 64; ++t) {
    if (PrimitiveSet::from_mask(static_cast<std::uint8_t>(t)).size() > 3) continue;
    for (unsigned p = 0; p < 64; ++p) {
      const int got = rubric_score(PrimitiveSet::from_mask(static_cast<std::uint8_t>(p)),
                                   PrimitiveSet::from_mask(static_cast<std::uint8_t>(t)));
      CHECK(got == oracle::rubric(p, t));
      ++pairs;
    }
  }
  CHECK(pairs == 41 * 64);
}

TEST_CASE("rubric worked examples") {
  using P = Primitive;
  CHECK(rubric_score({P::above, P::behind, P::left}, {P::above, P::behind, P::left}) == 5);
  CHECK(rubric_score({P::right, P::behind}, {P::behind}) == 4);
  CHECK(rubric_score({P::right}, {P::left}) == 1);
  CHECK(rubric_score({P::left, P::behind, P::below}, {P::left, P::behind, P::above}) == 3);
  CHECK_THROWS_AS(rubric_score({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(rubric_score({}, {P::left, P::front, P::above, P::right}), std::invalid_argument);
}

TEST_CASE("reward formulas") {
  CHECK(reward_from_mean_score(5.0) == 1.0);
  CHECK(reward_from_mean_score(1.0) == 25.0);
  CHECK(reward_from_loss(0.0) == 0.0);
  for (double s = 1.0; s < 5.0; s += 0.25) CHECK(reward_from_mean_score(s) > reward_from_mean_score(s + 0.25));
  for (double l = 0.0; l < 3.0; l += 0.25) CHECK(reward_from_loss(l) < reward_from_loss(l + 0.25));
  InferenceResult empty;
  CHECK_THROWS(batch_reward(empty, JudgeKind::generative));
}

TEST_CASE("contrastive loss anchors") {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(4, 1);
  CHECK(contrastive_loss(one, one, 0.07).value == 0.0);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  CHECK(contrastive_loss(eye, eye, 1.0).value == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(std::abs(contrastive_loss(eye, eye, 1.0).value - 0.31326168751822286) < 1e-9);
  CHECK_THROWS(contrastive_loss(eye, eye, 0.0));
  CHECK_THROWS(contrastive_loss(Eigen::MatrixXd::Zero(2, 2), eye, 1.0));
}

TEST_CASE("contrastive loss agrees with the loop oracle, negatives touch only image to text") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto images = random_matrix(8, 5, seed);
    const auto texts = random_matrix(8, 15, seed + 100);
    const Eigen::MatrixXd positives = texts.leftCols(5);
    const auto full = contrastive_loss(images, texts, 0.3);
    const auto base = contrastive_loss(images, positives, 0.3);
    const auto want = oracle::contrastive(columns(images), columns(texts), 0.3);
    CHECK(full.value == doctest::Approx(want.total).epsilon(1e-10));
    CHECK(full.image_to_text == doctest::Approx(want.image_to_text).epsilon(1e-10));
    CHECK(full.text_to_image == doctest::Approx(base.text_to_image).epsilon(1e-12));
    CHECK(full.image_to_text > base.image_to_text);
    CHECK(full.value >= 0.0);
  }
}

TEST_CASE("contrastive loss is permutation invariant and tends to uniform as tau grows") {
  const auto images = random_matrix(6, 4, 7);
  const auto texts = random_matrix(6, 4, 8);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(4);
  perm.indices() << 2, 0, 3, 1;
  const double a = contrastive_loss(images, texts, 0.5).value;
  const double b = contrastive_loss(images * perm, texts * perm, 0.5).value;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
  const double far = contrastive_loss(images, texts, 1e6).value;
  CHECK(far == doctest::Approx(std::log(4.0)).epsilon(1e-5));
}

TEST_CASE("contrastive loss gradient matches finite differences") {
  auto images = random_matrix(5, 3, 21);
  auto texts = random_matrix(5, 9, 22);
  const auto l = contrastive_loss(images, texts, 0.2);
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < images.size(); ++i) {
    auto p = images, m = images;
    p.data()[i] += h;
    m.data()[i] -= h;
    const double fd = (contrastive_loss(p, texts, 0.2, {}, false).value -
                       contrastive_loss(m, texts, 0.2, {}, false).value) / (2 * h);
    worst = std::max(worst, std::abs(fd - l.image_gradient.data()[i]) / std::max(std::abs(fd) + 1e-8, 1e-7));
  }
  for (Eigen::Index i = 0; i < texts.size(); ++i) {
    auto p = texts, m = texts;
    p.data()[i] += h;
    m.data()[i] -= h;
    const double fd = (contrastive_loss(images, p, 0.2, {}, false).value -
                       contrastive_loss(images, m, 0.2, {}, false).value) / (2 * h);
    worst = std::max(worst, std::abs(fd - l.text_gradient.data()[i]) / std::max(std::abs(fd) + 1e-8, 1e-7));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("generative judge features and gradients") {
  GenerativeJudge judge(catalog(), {2, 16, 3e-3, 5});
  const auto& s = small_set().samples;
  const auto f = generative_features(s[0], catalog());
  CHECK(f.size() == static_cast<Eigen::Index>(kGenerativeFeatures));
  CHECK(f.head(9).sum() == 1.0);
  CHECK(f.segment(9, 9).sum() == 1.0);

  Eigen::MatrixXd x(kGenerativeFeatures, 12), y = Eigen::MatrixXd::Zero(6, 12);
  for (int i = 0; i < 12; ++i) {
    x.col(i) = generative_features(s[static_cast<std::size_t>(i)], catalog());
    for (auto p : truth_terms(s[static_cast<std::size_t>(i)]).to_vector()) y(static_cast<int>(p), i) = 1.0;
  }
  const auto [loss, grads] = judge.loss_and_gradients(x, y);
  CHECK(loss > 0.0);
  auto loss_fn = [&] { return judge.loss_and_gradients(x, y).first; };
  CHECK(testing::worst_fd_error(judge.mutable_network(), testing::flatten(grads), loss_fn, 10, 3) < 1e-4);
}

TEST_CASE("contrastive judge encoder gradients") {
  ContrastiveJudge judge(catalog(), {2, 16, 3e-3, 6}, 0.5);
  const std::span<const SampleRecord> batch(small_set().samples.data(), 8);
  for (auto pool : {NegativePool::both, NegativePool::term_only, NegativePool::none}) {
    const auto g = judge.loss_and_gradients(batch, pool);
    auto loss_fn = [&] { return judge.loss_and_gradients(batch, pool).loss; };
    CHECK(testing::worst_fd_error(judge.mutable_image_encoder(), testing::flatten(g.image), loss_fn, 10, 1) < 1e-4);
    CHECK(testing::worst_fd_error(judge.mutable_text_encoder(), testing::flatten(g.text), loss_fn, 10, 2) < 1e-4);
  }
  CHECK(negative_pool_from_string("term") == NegativePool::term_only);
  CHECK_THROWS(negative_pool_from_string("some"));
}

TEST_CASE("text features carry roles and terms") {
  const auto a = text_features("The mug is to the left of the plate.", catalog());
  const auto b = text_features("The plate is to the left of the mug.", catalog());
  const auto c = text_features("The mug is to the right of the plate.", catalog());
  CHECK(a.size() == static_cast<Eigen::Index>(kTextFeatures));
  CHECK(a != b);
  CHECK(a != c);
  CHECK(a.tail(6).sum() == 1.0);
}

TEST_CASE("inference never changes weights and yields one verdict per sample") {
  GenerativeJudge g(catalog(), {2, 32, 3e-3, 1});
  ContrastiveJudge c(catalog(), {2, 32, 3e-3, 2});
  const auto& s = small_set().samples;
  for (Judge* j : {static_cast<Judge*>(&g), static_cast<Judge*>(&c)}) {
    const auto before = j->weight_digest();
    const auto r = j->infer(s);
    CHECK(r.verdicts.size() == s.size());
    CHECK(j->weight_digest() == before);
  }
  CHECK(c.infer(s).batch_loss.has_value());
}

TEST_CASE("malformed samples are flagged and excluded") {
  GenerativeJudge g(catalog(), {2, 16, 3e-3, 1});
  auto s = small_set().samples[0];
  s.caption = "gibberish";
  auto t = small_set().samples[1];
  const std::vector<SampleRecord> batch{s, t};
  const auto r = g.infer(batch);
  CHECK(r.verdicts[0].flagged);
  CHECK_FALSE(r.verdicts[1].flagged);
  CHECK(r.usable() == 1);
  CHECK(r.mean_score() == r.verdicts[1].score);
}

TEST_CASE("untrained generative judge scores near the random-threshold chance baseline") {
  const auto set = generate_fixed_set(training_suite(), 500, 777);
  for (std::uint64_t seed : {1, 2, 3}) {
    GenerativeJudge g(catalog(), {2, 64, 3e-3, seed});
    const auto res = g.infer(set.samples);
    // chance: each primitive predicted independently of the scene, at the
    // rate this untrained judge thresholds it on
    std::array<double, 6> rate{};
    for (const auto& v : res.verdicts)
      for (auto p : kAllPrimitives) rate[static_cast<int>(p)] += v.predicted.contains(p) ? 1.0 : 0.0;
    for (auto& r : rate) r /= static_cast<double>(res.verdicts.size());
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double chance = 0.0;
    const int draws = 200;
    for (const auto& s : set.samples) {
      const unsigned truth = truth_terms(s).mask();
      for (int d = 0; d < draws; ++d) {
        unsigned m = 0;
        for (unsigned b = 0; b < 6; ++b)
          if (u(rng) < rate[b]) m |= 1u << b;
        chance += oracle::rubric(m, truth);
      }
    }
    chance /= static_cast<double>(set.samples.size() * draws);
    CHECK(std::abs(g.validation_metric(set.samples) - chance) <= 0.3);
  }
}

TEST_CASE("fine-tuning lowers the training loss and resumes from current weights") {
  const auto& batch = small_set().samples;
  for (std::uint64_t seed : {1, 2, 3}) {
    GenerativeJudge g(catalog(), {2, 64, 3e-3, seed});
    FineTuneOptions o;
    o.steps = 40;
    o.cadence = 20;
    o.seed = seed;
    int calls = 0;
    const auto rep = g.finetune(batch, o, [&] {
      ++calls;
      return 0.0;
    });
    CHECK(rep.losses.size() == 40);
    CHECK(rep.validation.size() == 2);
    CHECK(calls == 2);
    CHECK(rep.losses.back() < rep.losses.front());
    const auto d1 = g.weight_digest();
    const auto rep2 = g.finetune(batch, o, {});
    CHECK(rep2.losses.front() < rep.losses.front());
    CHECK(g.weight_digest() != d1);

    ContrastiveJudge c(catalog(), {2, 64, 3e-3, seed});
    FineTuneOptions oc;
    oc.steps = 4;
    oc.cadence = 1;
    oc.minibatch = 32;
    oc.seed = seed;
    const auto rc = c.finetune(batch, oc, [] { return 0.0; });
    CHECK(rc.losses.size() == 4);
    CHECK(rc.validation.size() == 4);
    CHECK(rc.losses.back() < rc.losses.front());
  }
  GenerativeJudge g(catalog());
  CHECK_THROWS(g.finetune({}, FineTuneOptions{}, {}));
}

TEST_CASE("judge checkpoints round trip") {
  const auto dir = testing::scratch_dir("judge_ckpt");
  GenerativeJudge g(catalog(), {2, 16, 3e-3, 9});
  g.save(dir / "g");
  GenerativeJudge g2(catalog(), {2, 16, 3e-3, 10});
  CHECK(g2.weight_digest() != g.weight_digest());
  g2.load(dir / "g");
  CHECK(g2.weight_digest() == g.weight_digest());

  ContrastiveJudge c(catalog(), {2, 16, 3e-3, 9});
  c.save(dir / "c");
  ContrastiveJudge c2(catalog(), {2, 16, 3e-3, 10});
  c2.load(dir / "c");
  CHECK(c2.weight_digest() == c.weight_digest());
}
