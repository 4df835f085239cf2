#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace collab;

namespace {

std::string tsv(const AblationResult& r) {
  std::ostringstream out;
  render_ablation_tsv(out, r);
  return out.str();
}

std::vector<Vector> round_trip_rvectors(const std::vector<RVector>& vs) {
  std::ostringstream out;
  save_rvectors(out, vs);
  std::istringstream in(out.str());
  std::vector<Vector> values;
  for (auto& v : load_rvectors(in)) values.push_back(v.values);
  return values;
}

template <typename Model>
Model round_trip_model(const Model& m) {
  std::istringstream in(serialize_model(m));
  return std::get<Model>(load_model(in));
}

}  // namespace

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new ExperimentConfig(collab::testing::tiny_config());
    corpus_ = new Corpus(generate_corpus(cfg_->synth));
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete corpus_;
  }
  static ExperimentConfig* cfg_;
  static Corpus* corpus_;
};
ExperimentConfig* Pipeline::cfg_ = nullptr;
Corpus* Pipeline::corpus_ = nullptr;

TEST_F(Pipeline, ZeroEpochAblationRowsEqualUntrainedBaseline) {
  auto cfg = *cfg_;
  cfg.optimizer.epochs = 0;
  auto res = run_ablation(cfg, *corpus_, ablation_routings(cfg.routing));
  ASSERT_EQ(res.rows.size(), 6u);
  const auto& base = res.rows[0].result;
  for (std::size_t k = 1; k < res.rows.size(); ++k) {
    const auto& r = res.rows[k].result;
    EXPECT_EQ(r.full.sre_cosine, base.full.sre_cosine) << res.rows[k].name;
    EXPECT_EQ(r.short_test.sre_lda, base.short_test.sre_lda) << res.rows[k].name;
    EXPECT_EQ(r.full.lre_svm, base.full.lre_svm) << res.rows[k].name;
    EXPECT_EQ(r.short_test.lre_softmax, base.short_test.lre_softmax) << res.rows[k].name;
  }
}

TEST_F(Pipeline, AblationIsReproducible) {
  auto a = run_ablation(*cfg_, *corpus_, {FeedbackRouting::parse("g", "r,p")});
  auto b = run_ablation(*cfg_, *corpus_, {FeedbackRouting::parse("g", "r,p")});
  EXPECT_EQ(tsv(a), tsv(b));
}

TEST_F(Pipeline, StepwiseCommandsReproduceAblationCell) {
  const auto routing = FeedbackRouting::parse("g", "r,p");
  auto res = run_ablation(*cfg_, *corpus_, {routing});
  ASSERT_EQ(res.rows.size(), 2u);

  // Baseline speaker system: train, serialize, extract, archive, score.
  auto spk = make_single_task(*cfg_, *corpus_, Task::speaker);
  train_model(spk, *cfg_, *corpus_);
  spk = round_trip_model(spk);
  for (Condition cond : {Condition::full, Condition::short_test}) {
    std::vector<RVector> vs;
    for (std::size_t i = 0; i < corpus_->sequences.size(); ++i)
      vs.push_back(extract_rvector(
          spk, condition_view(corpus_->sequences[i], corpus_->manifest.entries[i].split, cond, cfg_->eval, i)));
    auto scores = score_sre(corpus_->manifest, round_trip_rvectors(vs), Backend::cosine, cfg_->backend);
    const auto& expected = cond == Condition::full ? res.rows[0].result.full : res.rows[0].result.short_test;
    EXPECT_EQ(scores, expected.sre_cosine);
  }

  // Multitask system, language branch through the SVM back-end.
  auto mt = make_multitask(*cfg_, *corpus_, routing);
  train_model(mt, *cfg_, *corpus_);
  mt = round_trip_model(mt);
  std::vector<RVector> vs;
  for (const auto& seq : corpus_->sequences) vs.push_back(extract_rvector(mt, Task::language, seq));
  auto decisions = score_lre(corpus_->manifest, round_trip_rvectors(vs), Backend::svm, cfg_->backend);
  EXPECT_EQ(decisions, res.rows[1].result.full.lre_svm);
  auto lda = score_sre(corpus_->manifest, round_trip_rvectors([&] {
                         std::vector<RVector> s;
                         for (const auto& seq : corpus_->sequences) s.push_back(extract_rvector(mt, Task::speaker, seq));
                         return s;
                       }()),
                       Backend::lda, cfg_->backend);
  EXPECT_EQ(lda, res.rows[1].result.full.sre_lda);
}

TEST_F(Pipeline, TrialsStayWithinLanguage) {
  auto sys = BaselineSystem{make_single_task(*cfg_, *corpus_, Task::language),
                            make_single_task(*cfg_, *corpus_, Task::speaker)};
  auto views = analyze_corpus(sys, *corpus_, Condition::full, cfg_->eval);
  std::vector<Vector> sre;
  for (const auto& v : views) sre.push_back(v.sre);
  auto scores = score_sre(corpus_->manifest, sre, Backend::cosine, cfg_->backend);
  const auto& s = cfg_->synth;
  const std::size_t per_lang = static_cast<std::size_t>(s.n_eval_speakers_per_language) *
                               s.n_eval_speakers_per_language * s.n_test_utts;
  EXPECT_EQ(scores.size(), per_lang * s.n_languages);
  std::size_t targets = 0;
  for (const auto& sc : scores) {
    EXPECT_EQ(sc.enroll_id.substr(0, 2), sc.test_utt.substr(0, 2));
    targets += sc.target;
  }
  EXPECT_EQ(targets, static_cast<std::size_t>(s.n_languages * s.n_eval_speakers_per_language * s.n_test_utts));
}

TEST_F(Pipeline, ShortConditionCropsOnlyTestUtterances) {
  auto sys = BaselineSystem{make_single_task(*cfg_, *corpus_, Task::language),
                            make_single_task(*cfg_, *corpus_, Task::speaker)};
  auto full = analyze_corpus(sys, *corpus_, Condition::full, cfg_->eval);
  auto cut = analyze_corpus(sys, *corpus_, Condition::short_test, cfg_->eval);
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (corpus_->manifest.entries[i].split == Split::test)
      EXPECT_NE(full[i].sre, cut[i].sre);
    else
      EXPECT_EQ(full[i].sre, cut[i].sre);
  }
}

TEST_F(Pipeline, TablesHaveOneRowPerSystemAndWriteFiles) {
  auto res = run_ablation(*cfg_, *corpus_, ablation_routings(cfg_->routing));
  std::ostringstream sre, lre;
  render_sre_table(sre, res);
  render_lre_table(lre, res);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  EXPECT_EQ(lines(sre.str()), 3 + 6);
  EXPECT_EQ(lines(lre.str()), 3 + 6);
  EXPECT_NE(sre.str().find("Short"), std::string::npos);
  EXPECT_NE(lre.str().find("Softmax"), std::string::npos);
  auto dir = collab::testing::scratch_dir("pipeline_tables");
  write_ablation_outputs(dir, res);
  for (auto f : {"ablation_sre.txt", "ablation_lre.txt", "ablation.tsv"}) EXPECT_TRUE(std::filesystem::exists(dir / f));
}

TEST_F(Pipeline, BackendNamesParse) {
  EXPECT_EQ(parse_backend("svm"), Backend::svm);
  EXPECT_THROW(parse_backend("plda"), ValidationError);
  std::vector<Vector> none;
  EXPECT_THROW(score_sre(corpus_->manifest, none, Backend::cosine, cfg_->backend), ValidationError);
}
