// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "collab/collab.hpp"

using namespace collab;

namespace {

// Tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 60;
constexpr int kEquivalenceSequences = 100;
constexpr int kEerSets = 1000;
constexpr double kEerTolerance = 1e-12;
constexpr double kLreIdrLimit = 0.05;
constexpr double kSreEerLimit = 0.15;
constexpr double kCompetenceBudgetSeconds = 600;
constexpr int kCollaborationSeeds = 5;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o << std::setprecision(digits) << v;
  return o.str();
}

// ---------------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_case;
  int cases = 0;
  for (auto sinks : {"none", "i", "f", "o", "g", "i,f,o,g"})
    for (auto sources : {"r", "p", "r,p"})
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        GradcheckSpec spec;
        spec.routing = FeedbackRouting::parse(sinks, sources);
        spec.cell = 6;
        spec.frames = 8;
        spec.seed = seed;
        auto rep = gradcheck(spec);
        ++cases;
        if (!(rep.max_relative_error <= worst)) {
          worst = rep.max_relative_error;
          worst_case = std::string(sinks) + "/" + sources + "/seed" + std::to_string(seed);
        }
      }
  const double elapsed = seconds_since(t0);
  return {worst < kGradTolerance && elapsed < kGradBudgetSeconds,
          std::to_string(cases) + " cases, max relative error " + fmt(worst) + " (" + worst_case + "), " +
              fmt(elapsed, 3) + " s"};
}

bool same_steps(const std::vector<StepOutput>& a, const std::vector<StepOutput>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t t = 0; t < a.size(); ++t)
    if (a[t].c != b[t].c || a[t].r != b[t].r || a[t].p != b[t].p || a[t].y != b[t].y) return false;
  return true;
}

Verdict zero_feedback_equivalence() {
  Rng rng(2024);
  std::normal_distribution<double> n(0, 1);
  int equal = 0;
  for (int k = 0; k < kEquivalenceSequences; ++k) {
    const Index D = 3 + static_cast<Index>(rng() % 5);
    MultiTaskDims dims{{D, 4 + static_cast<Index>(rng() % 4), 2, 3, 3}, {D, 5, 3, 2, 6}};
    const auto routing = FeedbackRouting::parse("i,f,o,g", "r,p");
    auto m = init_multitask(dims, routing, 0.5, 0.0, derive_seed(7, k));
    FrameMatrix X(1 + static_cast<Index>(rng() % 30), D);
    for (Index t = 0; t < X.rows(); ++t)
      for (Index d = 0; d < D; ++d) X(t, d) = n(rng);
    auto joint = mt_forward(m, X);
    equal += same_steps(joint.lre, forward_sequence(m.lre, X)) && same_steps(joint.sre, forward_sequence(m.sre, X));
  }
  return {equal == kEquivalenceSequences,
          std::to_string(equal) + "/" + std::to_string(kEquivalenceSequences) + " sequences bitwise equal"};
}

// Exhaustive threshold sweep, counted from scratch at every candidate.
double sweep_eer(const std::vector<double>& targets, const std::vector<double>& imposters) {
  std::vector<double> all = targets;
  all.insert(all.end(), imposters.begin(), imposters.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> cands{all.front()};
  for (std::size_t k = 1; k < all.size(); ++k) cands.push_back((all[k - 1] + all[k]) / 2);
  cands.push_back(std::nextafter(all.back(), 1e300));
  double prev_frr = 0, prev_far = 1;
  for (double th : cands) {
    double frr = 0, far = 0;
    for (double s : targets) frr += s < th;
    for (double s : imposters) far += s >= th;
    frr /= static_cast<double>(targets.size());
    far /= static_cast<double>(imposters.size());
    if (frr == far) return frr;
    if (frr > far) {
      const double da = prev_frr - prev_far;
      const double alpha = -da / ((frr - far) - da);
      return prev_frr + alpha * (frr - prev_frr);
    }
    prev_frr = frr;
    prev_far = far;
  }
  return 1.0;
}

Verdict metric_oracles() {
  Rng rng(99);
  std::normal_distribution<double> n(0, 1);
  double worst = 0;
  for (int k = 0; k < kEerSets; ++k) {
    const int nt = 1 + static_cast<int>(rng() % 50), ni = 1 + static_cast<int>(rng() % 300);
    const bool ties = k % 4 == 0;
    std::vector<double> t, i;
    for (int j = 0; j < nt; ++j) t.push_back(ties ? std::round(2 * n(rng) + 1) : n(rng) + 1);
    for (int j = 0; j < ni; ++j) i.push_back(ties ? std::round(2 * n(rng)) : n(rng));
    worst = std::max(worst, std::abs(compute_eer_split(t, i).eer - sweep_eer(t, i)));
  }

  // 110 enrolled speakers, 13,236 test utterances each spoken by one of them.
  std::vector<std::string> enrolled, tests;
  for (int s = 0; s < 110; ++s) enrolled.push_back("spk" + std::to_string(s));
  for (int u = 0; u < 13236; ++u) tests.push_back(enrolled[u % 110]);
  auto trials = build_sre_trials(enrolled, tests);

  std::vector<std::string> truth(22236, "a"), predicted = truth;
  predicted[5] = predicted[17] = "b";
  auto idr = compute_idr(predicted, truth);
  std::ostringstream pct;
  pct << std::fixed << std::setprecision(2) << 100 * idr.idr;

  const bool pass = worst <= kEerTolerance && trials.n_target == 13236 && trials.n_imposter == 1442724 &&
                    idr.ide == 2 && pct.str() == "0.01";
  return {pass, "max |eer - sweep| " + fmt(worst) + " over " + std::to_string(kEerSets) + " sets; trials " +
                    std::to_string(trials.n_target) + " target / " + std::to_string(trials.n_imposter) +
                    " imposter; IDR " + pct.str() + "%"};
}

// ---------------------------------------------------------------------------

struct CompetenceRun {
  EvalResult result;
  double seconds = 0;
};

CompetenceRun default_baseline() {
  const ExperimentConfig cfg;
  const auto corpus = generate_corpus(cfg.synth);
  const auto t0 = std::chrono::steady_clock::now();
  BaselineSystem sys{make_single_task(cfg, corpus, Task::language), make_single_task(cfg, corpus, Task::speaker)};
  train_model(sys.lre, cfg, corpus);
  train_model(sys.sre, cfg, corpus);
  CompetenceRun run;
  run.result = evaluate(sys, corpus, cfg);
  run.seconds = seconds_since(t0);
  return run;
}

Verdict single_task_competence(const CompetenceRun& run) {
  const auto& full = run.result.full;
  bool pass = full.idr_softmax.idr < kLreIdrLimit && run.seconds < kCompetenceBudgetSeconds;
  std::string eers;
  for (double e : full.eer_cosine) {
    pass = pass && e < kSreEerLimit;
    eers += (eers.empty() ? "" : " / ") + fmt(100 * e, 3) + "%";
  }
  return {pass, "softmax IDR " + fmt(100 * full.idr_softmax.idr, 3) + "%, cosine EER per language " + eers + ", " +
                    fmt(run.seconds, 3) + " s"};
}

Verdict short_condition(const CompetenceRun& run) {
  bool pass = true;
  std::string detail;
  for (std::size_t l = 0; l < run.result.full.eer_cosine.size(); ++l) {
    const double full = run.result.full.eer_cosine[l], cut = run.result.short_test.eer_cosine[l];
    pass = pass && cut >= full;
    detail += (detail.empty() ? "" : ", ") + std::string("lang") + std::to_string(l) + " full " + fmt(100 * full, 3) +
              "% short " + fmt(100 * cut, 3) + "%";
  }
  return {pass, "cosine EER " + detail};
}

// ---------------------------------------------------------------------------

ExperimentConfig collaboration_config() {
  ExperimentConfig cfg;
  cfg.synth.speaker_shift_scale = 3.0;
  return cfg;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

Verdict collaboration_effect() {
  const auto base_cfg = collaboration_config();
  const auto corpus = generate_corpus(base_cfg.synth);
  const auto routings = ablation_routings(base_cfg.routing);
  std::vector<std::vector<double>> ide(routings.size() + 1), eer(routings.size() + 1);
  std::vector<std::string> names;
  for (int s = 1; s <= kCollaborationSeeds; ++s) {
    auto cfg = base_cfg;
    cfg.model.seed = cfg.optimizer.seed = static_cast<std::uint64_t>(s);
    auto res = run_ablation(cfg, corpus, routings);
    names.clear();
    for (std::size_t r = 0; r < res.rows.size(); ++r) {
      const auto& rr = res.rows[r].result;
      names.push_back(res.rows[r].name);
      ide[r].push_back(static_cast<double>(rr.full.total_ide() + rr.short_test.total_ide()));
      eer[r].push_back((rr.full.mean_eer_cosine() + rr.short_test.mean_eer_cosine()) / 2);
    }
  }
  const double base_ide = median(ide[0]), base_eer = median(eer[0]);
  std::size_t g_row = 0;
  for (std::size_t r = 0; r < names.size(); ++r)
    if (names[r] == "g") g_row = r;
  const double g_ide = median(ide[g_row]);
  std::string best;
  double best_eer = 1;
  for (std::size_t r = 1; r < names.size(); ++r)
    if (median(eer[r]) < best_eer) best_eer = median(eer[r]), best = names[r];
  std::ostringstream all;
  for (std::size_t r = 0; r < names.size(); ++r)
    all << (r ? "; " : "") << names[r] << " IDE " << median(ide[r]) << " EER " << fmt(100 * median(eer[r]), 3) << "%";
  return {g_ide <= base_ide && best_eer <= base_eer,
          "medians over " + std::to_string(kCollaborationSeeds) + " seeds: " + all.str() + " (best SRE routing " +
              best + ")"};
}

// ---------------------------------------------------------------------------

template <typename Model>
bool model_round_trips(const Model& m) {
  const auto text = serialize_model(m);
  std::istringstream in(text);
  auto back = std::get<Model>(load_model(in));
  return back == m && serialize_model(back) == text;
}

Verdict determinism_and_round_trips() {
  ExperimentConfig cfg;
  cfg.synth.n_speakers_per_language = 4;
  cfg.synth.n_utts_per_speaker = 3;
  cfg.synth.n_eval_speakers_per_language = 3;
  cfg.synth.min_frames = 40;
  cfg.synth.max_frames = 60;
  cfg.model.cell = 6;
  cfg.model.rproj = cfg.model.pproj = 3;
  cfg.optimizer.epochs = 2;
  cfg.curriculum.crop_frames = 20;
  cfg.eval.short_frames = 20;
  const auto corpus = generate_corpus(cfg.synth);

  auto single = make_single_task(cfg, corpus, Task::speaker);
  train_model(single, cfg, corpus);
  auto mt = make_multitask(cfg, corpus, FeedbackRouting::parse("i,f,o,g", "r,p"));
  mt.cross.at(Direction::into_lre, Sink::forget_gate, Source::pproj).setConstant(0.125);
  train_model(mt, cfg, corpus);
  const bool models = model_round_trips(single) && model_round_trips(mt);

  std::ostringstream feats, manifest;
  save_features(feats, corpus.sequences);
  save_manifest(manifest, corpus.manifest);
  std::istringstream fin(feats.str()), min(manifest.str());
  const bool archives_corpus = load_features(fin) == corpus.sequences && load_manifest(min) == corpus.manifest;

  std::vector<RVector> vs;
  for (const auto& seq : corpus.sequences) vs.push_back(extract_rvector(single, seq));
  std::ostringstream rv;
  save_rvectors(rv, vs);
  std::istringstream rin(rv.str());
  auto vs_back = load_rvectors(rin);
  bool archives_rvec = vs_back.size() == vs.size();
  for (std::size_t k = 0; archives_rvec && k < vs.size(); ++k)
    archives_rvec = vs_back[k].utt_id == vs[k].utt_id && vs_back[k].values == vs[k].values;

  auto report = [&] {
    auto res = run_ablation(cfg, corpus, {FeedbackRouting::parse("g", "r,p")});
    std::ostringstream o;
    render_ablation_tsv(o, res);
    const auto& sc = res.rows[1].result.full.sre_cosine;
    save_sre_scores(o, sc);
    return o.str();
  };
  const auto r1 = report(), r2 = report();
  const bool reports = r1 == r2;

  return {models && archives_corpus && archives_rvec && reports,
          std::string("models ") + (models ? "bitwise" : "DIFFER") + ", corpus archives " +
              (archives_corpus ? "exact" : "DIFFER") + ", r-vector archive " + (archives_rvec ? "exact" : "DIFFER") +
              ", repeated reports " + (reports ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  int failures = 0;
  auto emit = [&](int id, const std::string& name, const Verdict& v) {
    failures += !v.pass;
    std::cout << "criterion " << id << " [" << name << "]: " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail
              << std::endl;
  };
  emit(1, "gradient correctness", gradient_correctness());
  emit(2, "zero-feedback equivalence", zero_feedback_equivalence());
  emit(3, "metric oracles", metric_oracles());
  const auto competence = default_baseline();
  emit(4, "single-task competence", single_task_competence(competence));
  emit(5, "collaboration effect", collaboration_effect());
  emit(6, "determinism and round-trips", determinism_and_round_trips());
  emit(7, "short-condition ordering", short_condition(competence));
  return failures;
}
