#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_support.hpp"

using namespace collab;
using collab::testing::random_frames;

namespace {

MultiTaskModel small_model(const char* sinks, const char* sources, double cross, std::uint64_t seed) {
  MultiTaskDims dims{{3, 4, 2, 2, 2}, {3, 5, 3, 2, 3}};
  return init_multitask(dims, FeedbackRouting::parse(sinks, sources), 0.5, cross, seed);
}

bool all_zero(const LstmpParams& p) {
  bool zero = true;
  p.for_each_block([&](std::string_view, const auto& b) { zero = zero && b.isZero(0.0); });
  return zero;
}

}  // namespace

TEST(Loss, UniformLogitsGiveLogTwo) {
  LossSpec spec{1.0, 0.0};
  EXPECT_NEAR(frame_loss(Vector::Zero(2), Vector::Zero(5), {1, -1}, spec), std::numbers::ln2, 1e-15);
}

TEST(Loss, ConfidentCorrectLogitApproachesZero) {
  Vector y = Vector::Zero(3);
  double prev = cross_entropy(y, 2);
  for (double big : {1.0, 5.0, 20.0, 50.0}) {
    y[2] = big;
    double l = cross_entropy(y, 2);
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(Loss, SumOfIndependentTaskTerms) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Vector yl = collab::testing::random_vector(3, rng, 2.0), ys = collab::testing::random_vector(5, rng, 2.0);
    int a = trial % 3, b = trial % 5;
    auto ce = [](const Vector& y, int label) {
      double z = 0;
      for (Index k = 0; k < y.size(); ++k) z += std::exp(y[k]);
      return -std::log(std::exp(y[label]) / z);
    };
    EXPECT_NEAR(frame_loss(yl, ys, {a, b}, LossSpec{}), ce(yl, a) + ce(ys, b), 1e-12);
  }
}

TEST(Loss, OutOfRangeLabelRejected) {
  EXPECT_THROW(cross_entropy(Vector::Zero(2), 2), ValidationError);
  EXPECT_THROW(cross_entropy(Vector::Zero(2), -1), ValidationError);
  auto m = small_model("g", "r", 0.1, 1);
  auto g = zeros_like(m);
  EXPECT_THROW(backward_sequence(m, random_frames(4, 3, 1), {2, 0}, LossSpec{}, 1.0, g), ValidationError);
}

TEST(Loss, SoftmaxIsDistribution) {
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    Vector p = softmax(collab::testing::random_vector(6, rng, 30.0));
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
}

TEST(Backward, TinyModelMatchesFiniteDifferences) {
  GradcheckSpec spec;  // cell 5, rproj 3, pproj 3, T 7, all sinks, r and p
  auto report = gradcheck(spec);
  EXPECT_LT(report.max_relative_error, 1e-4);
  int cross_blocks = 0;
  for (const auto& b : report.blocks) {
    EXPECT_LT(b.max_relative_error, 1e-4) << b.name;
    if (b.name.rfind("W_ls_", 0) == 0 || b.name.rfind("W_sl_", 0) == 0) ++cross_blocks;
  }
  EXPECT_EQ(cross_blocks, 16);
}

TEST(Backward, SingleTaskMatchesFiniteDifferences) {
  SingleTaskModel m{Task::speaker, {"a", "b", "c"}, init_params({3, 4, 2, 3, 3}, 0.6, 3)};
  auto report = gradcheck_model(m, random_frames(6, 3, 5), {-1, 1}, LossSpec{}, 1e-4);
  EXPECT_LT(report.max_relative_error, 1e-4);
}

TEST(Backward, EmptyRoutingReducesToTwoSingleTaskGradients) {
  auto m = small_model("none", "r,p", 0.0, 2);
  auto X = random_frames(6, 3, 7);
  auto g = zeros_like(m);
  const double loss = backward_sequence(m, X, {1, 2}, LossSpec{}, 1.0, g);
  auto gl = zeros_like(m.lre), gs = zeros_like(m.sre);
  const double ll = backward_sequence(m.lre, X, 1, 1.0, 1.0, gl);
  const double ls = backward_sequence(m.sre, X, 2, 1.0, 1.0, gs);
  EXPECT_EQ(loss, ll + ls);
  EXPECT_TRUE(g.lre == gl);
  EXPECT_TRUE(g.sre == gs);
}

TEST(Backward, DisconnectedBranchGetsZeroGradient) {
  auto m = small_model("i,f,o,g", "r,p", 0.0, 3);
  auto g = zeros_like(m);
  backward_sequence(m, random_frames(6, 3, 7), {1, -1}, LossSpec{1.0, 0.0}, 1.0, g);
  EXPECT_TRUE(all_zero(g.sre));
  EXPECT_FALSE(all_zero(g.lre));
}

TEST(Backward, FeedbackPathReachesOtherBranch) {
  auto m = small_model("i,f,o,g", "r,p", 0.4, 3);
  auto X = random_frames(6, 3, 7);
  LossSpec lre_only{1.0, 0.0};
  auto g = zeros_like(m);
  backward_sequence(m, X, {1, -1}, lre_only, 1.0, g);
  EXPECT_FALSE(all_zero(g.sre));
  auto report = gradcheck_model(m, X, {1, -1}, lre_only, 1e-4);
  EXPECT_LT(report.max_relative_error, 1e-4);
  double sre_numeric_mass = 0;
  for (const auto& b : report.blocks)
    if (b.name.rfind("sre.", 0) == 0) sre_numeric_mass += b.max_abs_gradient;
  EXPECT_GT(sre_numeric_mass, 0.0);
}

TEST(Backward, ScaleIsLinear) {
  auto m = small_model("g", "r", 0.3, 4);
  auto X = random_frames(5, 3, 2);
  auto g1 = zeros_like(m), g2 = zeros_like(m);
  backward_sequence(m, X, {0, 1}, LossSpec{}, 1.0, g1);
  backward_sequence(m, X, {0, 1}, LossSpec{}, 0.25, g2);
  auto a = block_refs(std::as_const(g1));
  auto b = block_refs(std::as_const(g2));
  for (std::size_t k = 0; k < a.size(); ++k)
    for (Index j = 0; j < a[k].size(); ++j) EXPECT_NEAR(b[k].data[j], 0.25 * a[k].data[j], 1e-15);
}

TEST(Optimizer, PlainStepSubtractsGradient) {
  auto p = init_params({2, 3, 2, 2, 2}, 0.5, 1);
  auto g = init_params({2, 3, 2, 2, 2}, 0.5, 2);
  auto v = zeros_like(p);
  auto before = p;
  sgd_step(p, g, v, 1.0, 0.0);
  auto pb = block_refs(std::as_const(before));
  auto pa = block_refs(std::as_const(p));
  auto gg = block_refs(std::as_const(g));
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (Index j = 0; j < pa[k].size(); ++j) EXPECT_EQ(pa[k].data[j], pb[k].data[j] - gg[k].data[j]);
}

TEST(Optimizer, ZeroGradientLeavesParamsUnchanged) {
  auto p = init_params({2, 3, 2, 2, 2}, 0.5, 1);
  auto before = p;
  auto g = zeros_like(p), v = zeros_like(p);
  sgd_step(p, g, v, 0.3, 0.9);
  EXPECT_TRUE(p == before);
}

TEST(Optimizer, TwoMomentumStepsMatchHandRecursion) {
  LstmpDims d{1, 1, 1, 1, 1};
  auto p = LstmpParams::zeros(d), v = LstmpParams::zeros(d), g = LstmpParams::zeros(d);
  p.b_y[0] = 1.0;
  const double lr = 0.1, mu = 0.9, g1 = 2.0, g2 = -0.5;
  g.b_y[0] = g1;
  sgd_step(p, g, v, lr, mu);
  g.b_y[0] = g2;
  sgd_step(p, g, v, lr, mu);
  const double v1 = -lr * g1;
  const double v2 = mu * v1 - lr * g2;
  EXPECT_DOUBLE_EQ(v.b_y[0], v2);
  EXPECT_DOUBLE_EQ(p.b_y[0], 1.0 + v1 + v2);
}

TEST(Optimizer, ClipRescalesOnlyAboveThreshold) {
  auto g = init_params({2, 3, 2, 2, 2}, 1.0, 1);
  const double n = global_norm(g);
  auto copy = g;
  EXPECT_EQ(clip_global_norm(copy, n * 2), n);
  EXPECT_TRUE(copy == g);
  clip_global_norm(copy, n / 4);
  EXPECT_NEAR(global_norm(copy), n / 4, 1e-12);
}

TEST(Optimizer, CoupledClippingTreatsBranchesSeparately) {
  auto m = small_model("g", "r", 0.5, 1);
  auto g = m;
  scale(g.sre, 100.0);
  const double lre_norm = global_norm(g.lre);
  ASSERT_LT(lre_norm, 5.0);
  clip_gradients(g, 5.0);
  EXPECT_NEAR(global_norm(g.lre), lre_norm, 1e-12);
  double sq = 0;
  g.sre.for_each_block([&](std::string_view, const auto& b) { sq += b.squaredNorm(); });
  sq += g.cross.at(Direction::into_sre, Sink::cell_candidate, Source::rproj).squaredNorm();
  EXPECT_NEAR(std::sqrt(sq), 5.0, 1e-9);
}

TEST(Optimizer, SpecValidation) {
  OptimizerSpec s;
  s.momentum = 1.0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = {};
  s.batch_size = 0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = {};
  s.learning_rate = 0;
  EXPECT_NO_THROW(s.validate());
  EXPECT_THROW((LossSpec{0.0, 0.0}.validate()), ValidationError);
}

class TrainingRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { corpus_ = new Corpus(generate_corpus(collab::testing::tiny_synth())); }
  static void TearDownTestSuite() { delete corpus_; }
  static Corpus* corpus_;

  static SingleTaskModel language_model(std::uint64_t seed) {
    auto labels = corpus_->manifest.languages();
    return {Task::language, labels, init_params({6, 6, 3, 3, static_cast<Index>(labels.size())}, 0.1, seed)};
  }
};
Corpus* TrainingRun::corpus_ = nullptr;

TEST_F(TrainingRun, ZeroLearningRateLeavesModelUnchanged) {
  auto m = language_model(1);
  auto before = m;
  OptimizerSpec opt;
  opt.learning_rate = 0;
  opt.epochs = 2;
  auto trace = train(m, make_training_set(*corpus_, m.labels, {}), LossSpec{}, opt);
  EXPECT_TRUE(m == before);
  ASSERT_EQ(trace.epoch_loss.size(), 2u);
  EXPECT_EQ(trace.epoch_loss[0], trace.epoch_loss[1]);
}

TEST_F(TrainingRun, LossDecreasesAndBeatsChance) {
  auto m = language_model(1);
  OptimizerSpec opt;
  opt.epochs = 6;
  opt.batch_size = 4;
  auto trace = train(m, make_training_set(*corpus_, m.labels, {}), LossSpec{}, opt);
  EXPECT_LT(trace.epoch_loss.back(), trace.epoch_loss.front());
  EXPECT_LT(trace.epoch_loss.back(), std::numbers::ln2);
}

TEST_F(TrainingRun, SameSeedsGiveIdenticalSerialization) {
  auto examples_for = [&](const SingleTaskModel& m) { return make_training_set(*corpus_, m.labels, {}); };
  OptimizerSpec opt;
  opt.epochs = 2;
  CurriculumSpec crop{Curriculum::cropped, 15};
  auto a = language_model(2), b = language_model(2);
  train(a, examples_for(a), LossSpec{}, opt, crop);
  train(b, examples_for(b), LossSpec{}, opt, crop);
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  auto c = language_model(2);
  opt.seed = 9;
  train(c, examples_for(c), LossSpec{}, opt, crop);
  EXPECT_NE(serialize_model(a), serialize_model(c));
}

TEST_F(TrainingRun, UnroutedMultitaskTrainsLikeTwoBaselines) {
  auto languages = corpus_->manifest.languages();
  auto speakers = corpus_->manifest.speakers(Split::train);
  LstmpDims dl{6, 5, 3, 2, static_cast<Index>(languages.size())}, ds{6, 5, 3, 2, static_cast<Index>(speakers.size())};
  auto mt = init_multitask({dl, ds}, FeedbackRouting::none(), 0.2, 0.0, 4);
  mt.languages = languages;
  mt.speakers = speakers;
  SingleTaskModel l{Task::language, languages, init_params(dl, 0.2, derive_seed(4, 1))};
  SingleTaskModel s{Task::speaker, speakers, init_params(ds, 0.2, derive_seed(4, 2))};
  OptimizerSpec opt;
  opt.epochs = 2;
  opt.clip_norm = 0.5;
  CurriculumSpec crop{Curriculum::cropped, 15};
  train(mt, make_training_set(*corpus_, languages, speakers), LossSpec{}, opt, crop);
  train(l, make_training_set(*corpus_, languages, {}), LossSpec{}, opt, crop);
  train(s, make_training_set(*corpus_, {}, speakers), LossSpec{}, opt, crop);
  EXPECT_TRUE(mt.lre == l.params);
  EXPECT_TRUE(mt.sre == s.params);
}

TEST_F(TrainingRun, EmptyCorpusAndUnknownLabelsRejected) {
  auto m = language_model(1);
  EXPECT_THROW(train(m, {}, LossSpec{}, OptimizerSpec{}), ValidationError);
  EXPECT_THROW(make_training_set(*corpus_, {"lang0"}, {}), ValidationError);
}

TEST(Gradcheck, RejectsLargeCells) {
  GradcheckSpec spec;
  spec.cell = 17;
  EXPECT_THROW(gradcheck(spec), ValidationError);
}
