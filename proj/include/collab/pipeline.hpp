#pragma once

// End-to-end experiment plumbing: model construction from a config, training,
// r-vector extraction over a corpus, back-end scoring, per-condition metrics,
// and the feedback-routing ablation grid with its table rendering.
//
// Evaluation protocol: back-ends (mean normalization, LDA, SVM) are trained on
// train-split r-vectors; enrollment uses whole enroll-split utterances; the
// Short condition crops only the test utterances. SRE trials are built within
// each language (language known in advance) and EERs are reported per language.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "collab/config.hpp"
#include "collab/embedding.hpp"
#include "collab/features.hpp"
#include "collab/metrics.hpp"
#include "collab/models.hpp"
#include "collab/multitask.hpp"
#include "collab/scoring.hpp"
#include "collab/training.hpp"

namespace collab {

// ---------------------------------------------------------------------------
// Models

inline LstmpDims branch_dims(const ExperimentConfig& cfg, Index input, Index out) {
  return {input, cfg.model.cell, cfg.model.rproj, cfg.model.pproj, out};
}

inline Index corpus_dim(const Corpus& c) {
  if (c.sequences.empty()) throw ValidationError("corpus is empty");
  return c.sequences.front().dim();
}

/// Branch seeds match init_multitask, so baselines and multitask branches start identical.
inline SingleTaskModel make_single_task(const ExperimentConfig& cfg, const Corpus& corpus, Task task) {
  SingleTaskModel m;
  m.task = task;
  m.labels = task == Task::language ? corpus.manifest.languages() : corpus.manifest.speakers(Split::train);
  if (m.labels.empty()) throw ValidationError("corpus has no training labels");
  m.params = init_params(branch_dims(cfg, corpus_dim(corpus), static_cast<Index>(m.labels.size())),
                         cfg.model.init_scale, derive_seed(cfg.model.seed, task == Task::language ? 1 : 2));
  return m;
}

inline MultiTaskModel make_multitask(const ExperimentConfig& cfg, const Corpus& corpus, const FeedbackRouting& routing) {
  auto languages = corpus.manifest.languages();
  auto speakers = corpus.manifest.speakers(Split::train);
  if (languages.empty() || speakers.empty()) throw ValidationError("corpus has no training labels");
  const Index in = corpus_dim(corpus);
  MultiTaskDims dims{branch_dims(cfg, in, static_cast<Index>(languages.size())),
                     branch_dims(cfg, in, static_cast<Index>(speakers.size()))};
  MultiTaskModel m = init_multitask(dims, routing, cfg.model.init_scale, cfg.model.cross_init_scale, cfg.model.seed);
  m.languages = std::move(languages);
  m.speakers = std::move(speakers);
  return m;
}

inline TrainTrace train_model(SingleTaskModel& m, const ExperimentConfig& cfg, const Corpus& corpus) {
  auto examples = m.task == Task::language ? make_training_set(corpus, m.labels, {})
                                           : make_training_set(corpus, {}, m.labels);
  return train(m, examples, cfg.loss, cfg.optimizer, cfg.curriculum);
}

inline TrainTrace train_model(MultiTaskModel& m, const ExperimentConfig& cfg, const Corpus& corpus) {
  auto examples = make_training_set(corpus, m.languages, m.speakers);
  return train(m, examples, cfg.loss, cfg.optimizer, cfg.curriculum);
}

// ---------------------------------------------------------------------------
// Extraction

struct BaselineSystem {
  SingleTaskModel lre;
  SingleTaskModel sre;
};

using SystemModel = std::variant<BaselineSystem, MultiTaskModel>;

/// Both r-vectors and the softmax language decision for one utterance.
struct UtteranceView {
  Vector lre;
  Vector sre;
  LanguageDecision softmax;
};

inline UtteranceView analyze(const SystemModel& sys, const FrameMatrix& frames) {
  if (frames.rows() == 0) throw ValidationError("analyze: empty sequence");
  if (const auto* b = std::get_if<BaselineSystem>(&sys)) {
    auto lo = forward_sequence(b->lre.params, frames);
    auto so = forward_sequence(b->sre.params, frames);
    return {rvector_from_steps(lo), rvector_from_steps(so), softmax_language_id(lo, b->lre.labels)};
  }
  const auto& m = std::get<MultiTaskModel>(sys);
  auto outs = mt_forward(m, frames);
  return {rvector_from_steps(outs.lre), rvector_from_steps(outs.sre), softmax_language_id(outs.lre, m.languages)};
}

enum class Condition { full, short_test };

inline FeatureSequence condition_view(const FeatureSequence& seq, Split split, Condition cond, const EvalSpec& eval,
                                      std::size_t index) {
  if (cond == Condition::short_test && split == Split::test)
    return crop_short(seq, eval.short_frames, eval.short_rule, derive_seed(index, 77));
  return seq;
}

/// One view per manifest entry; test entries are cropped in the Short condition.
inline std::vector<UtteranceView> analyze_corpus(const SystemModel& sys, const Corpus& corpus, Condition cond,
                                                 const EvalSpec& eval) {
  std::vector<UtteranceView> out;
  out.reserve(corpus.sequences.size());
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i)
    out.push_back(analyze(sys, condition_view(corpus.sequences[i], corpus.manifest.entries[i].split, cond, eval, i).frames));
  return out;
}

// ---------------------------------------------------------------------------
// Back-ends

enum class Backend { cosine, lda, svm, softmax };

inline std::string_view to_string(Backend b) noexcept {
  switch (b) {
    case Backend::cosine: return "cosine";
    case Backend::lda: return "lda";
    case Backend::svm: return "svm";
    case Backend::softmax: return "softmax";
  }
  return "cosine";
}

inline Backend parse_backend(std::string_view s) {
  if (s == "cosine") return Backend::cosine;
  if (s == "lda") return Backend::lda;
  if (s == "svm") return Backend::svm;
  if (s == "softmax") return Backend::softmax;
  throw ValidationError("unknown backend '" + std::string(s) + "' (use cosine, lda, svm or softmax)");
}

namespace detail {

inline void check_aligned(const CorpusManifest& m, std::span<const Vector> rvecs) {
  if (rvecs.size() != m.entries.size()) throw ValidationError("r-vectors are not aligned with the manifest");
}

/// Train-split vectors and the chosen label per vector.
inline std::pair<std::vector<Vector>, std::vector<std::string>> train_split(const CorpusManifest& m,
                                                                            std::span<const Vector> rvecs, Task task) {
  std::vector<Vector> xs;
  std::vector<std::string> ys;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (m.entries[i].split == Split::train) {
      xs.push_back(rvecs[i]);
      ys.push_back(task == Task::language ? m.entries[i].language : m.entries[i].speaker);
    }
  if (xs.empty()) throw ValidationError("back-end training needs train-split r-vectors");
  return {std::move(xs), std::move(ys)};
}

/// The map applied to every r-vector before enrollment and scoring.
inline std::function<Vector(const Vector&)> sre_transform(const CorpusManifest& m, std::span<const Vector> rvecs,
                                                          Backend backend, const BackendSpec& spec) {
  auto [xs, ys] = train_split(m, rvecs, Task::speaker);
  if (backend == Backend::cosine) {
    Vector mu = mean_of(xs);
    return [mu](const Vector& x) -> Vector { return x - mu; };
  }
  if (backend == Backend::lda) {
    auto lda = std::make_shared<LdaModel>(lda_train(xs, ys, spec.lda_dim));
    return [lda](const Vector& x) -> Vector { return lda->project(x); };
  }
  throw ValidationError("SRE back-end must be cosine or lda");
}

}  // namespace detail

/// Cosine or LDA+cosine verification scores for every within-language trial.
inline std::vector<SreScore> score_sre(const CorpusManifest& m, std::span<const Vector> rvecs, Backend backend,
                                       const BackendSpec& spec) {
  detail::check_aligned(m, rvecs);
  auto transform = detail::sre_transform(m, rvecs, backend, spec);
  std::vector<SreScore> out;
  for (const auto& lang : m.languages()) {
    std::map<std::string, std::vector<Vector>> groups;
    std::vector<std::size_t> tests;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      const auto& e = m.entries[i];
      if (e.language != lang) continue;
      if (e.split == Split::enroll) groups[e.speaker].push_back(transform(rvecs[i]));
      if (e.split == Split::test) tests.push_back(i);
    }
    if (groups.empty() || tests.empty()) continue;
    auto models = enroll(groups);
    std::vector<std::string> enroll_spk, test_spk;
    for (const auto& em : models) enroll_spk.push_back(em.label);
    std::vector<Vector> test_vecs;
    for (auto i : tests) {
      test_spk.push_back(m.entries[i].speaker);
      test_vecs.push_back(transform(rvecs[i]));
    }
    auto trials = build_sre_trials(enroll_spk, test_spk);
    for (const auto& t : trials.trials)
      out.push_back({enroll_spk[t.enroll], m.entries[tests[t.test]].utt_id,
                     cosine_score(models[t.enroll].centroid, test_vecs[t.test]), t.target});
  }
  return out;
}

/// Cosine (against enrolled language centroids) or one-vs-rest SVM identification.
inline std::vector<LreDecision> score_lre(const CorpusManifest& m, std::span<const Vector> rvecs, Backend backend,
                                          const BackendSpec& spec) {
  detail::check_aligned(m, rvecs);
  auto [xs, ys] = detail::train_split(m, rvecs, Task::language);
  const Vector mu = mean_of(xs);
  for (auto& x : xs) x -= mu;
  const auto languages = m.languages();
  std::vector<LreDecision> out;
  if (backend == Backend::cosine) {
    std::map<std::string, std::vector<Vector>> groups;
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].split == Split::enroll) groups[m.entries[i].language].push_back(rvecs[i] - mu);
    auto models = enroll(groups);
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      if (m.entries[i].split != Split::test) continue;
      const Vector x = rvecs[i] - mu;
      std::size_t best = 0;
      double best_s = -2;
      for (std::size_t k = 0; k < models.size(); ++k) {
        double s = cosine_score(models[k].centroid, x);
        if (s > best_s) best = k, best_s = s;
      }
      out.push_back({m.entries[i].utt_id, models[best].label, m.entries[i].language});
    }
    return out;
  }
  if (backend == Backend::svm) {
    auto id = svm_train_one_vs_rest(xs, ys, languages, spec.svm_lambda, spec.svm_epochs, spec.svm_seed);
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].split == Split::test)
        out.push_back({m.entries[i].utt_id, languages[id.predict(rvecs[i] - mu)], m.entries[i].language});
    return out;
  }
  throw ValidationError("LRE r-vector back-end must be cosine or svm");
}

inline std::vector<LreDecision> softmax_decisions(const CorpusManifest& m, std::span<const UtteranceView> views) {
  std::vector<LreDecision> out;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (m.entries[i].split == Split::test) out.push_back({m.entries[i].utt_id, views[i].softmax.label, m.entries[i].language});
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

inline MetricReport sre_report(std::span<const SreScore> scores) {
  std::vector<double> s;
  auto flags = std::make_unique<bool[]>(scores.size());
  MetricReport r;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    s.push_back(scores[k].score);
    flags[k] = scores[k].target;
    ++(scores[k].target ? r.n_target : r.n_imposter);
  }
  auto e = compute_eer(s, std::span<const bool>(flags.get(), scores.size()));
  r.eer = e.eer;
  r.threshold_at_eer = e.threshold;
  return r;
}

inline MetricReport lre_report(std::span<const LreDecision> ds) {
  std::vector<std::string> pred, truth;
  for (const auto& d : ds) {
    pred.push_back(d.predicted);
    truth.push_back(d.truth);
  }
  auto idr = compute_idr(pred, truth);
  MetricReport r;
  r.idr = idr.idr;
  r.ide = idr.ide;
  r.n_identification = idr.n;
  return r;
}

/// EER per language, in manifest.languages() order, from the test utterance's language.
inline std::vector<double> eer_by_language(const CorpusManifest& m, std::span<const SreScore> scores) {
  std::map<std::string, std::string> lang_of;
  for (const auto& e : m.entries) lang_of[e.utt_id] = e.language;
  std::vector<double> out;
  for (const auto& lang : m.languages()) {
    std::vector<SreScore> subset;
    for (const auto& s : scores)
      if (lang_of.at(s.test_utt) == lang) subset.push_back(s);
    out.push_back(subset.empty() ? std::nan("") : sre_report(subset).eer);
  }
  return out;
}

struct ConditionResult {
  std::vector<SreScore> sre_cosine, sre_lda;
  std::vector<LreDecision> lre_cosine, lre_svm, lre_softmax;
  std::vector<double> eer_cosine, eer_lda;  // per language
  IdrResult idr_cosine, idr_svm, idr_softmax;

  double mean_eer_cosine() const {
    double s = 0;
    for (double v : eer_cosine) s += v;
    return eer_cosine.empty() ? 0 : s / static_cast<double>(eer_cosine.size());
  }
  std::size_t total_ide() const { return idr_cosine.ide + idr_svm.ide + idr_softmax.ide; }
};

struct EvalResult {
  ConditionResult full;
  ConditionResult short_test;
};

inline ConditionResult evaluate_views(const CorpusManifest& m, std::span<const UtteranceView> views,
                                      const BackendSpec& spec) {
  std::vector<Vector> lre, sre;
  for (const auto& v : views) {
    lre.push_back(v.lre);
    sre.push_back(v.sre);
  }
  ConditionResult r;
  r.sre_cosine = score_sre(m, sre, Backend::cosine, spec);
  r.sre_lda = score_sre(m, sre, Backend::lda, spec);
  r.lre_cosine = score_lre(m, lre, Backend::cosine, spec);
  r.lre_svm = score_lre(m, lre, Backend::svm, spec);
  r.lre_softmax = softmax_decisions(m, views);
  r.eer_cosine = eer_by_language(m, r.sre_cosine);
  r.eer_lda = eer_by_language(m, r.sre_lda);
  auto idr = [](const std::vector<LreDecision>& ds) {
    auto rep = lre_report(ds);
    return IdrResult{rep.idr, rep.ide, rep.n_identification};
  };
  r.idr_cosine = idr(r.lre_cosine);
  r.idr_svm = idr(r.lre_svm);
  r.idr_softmax = idr(r.lre_softmax);
  return r;
}

inline EvalResult evaluate(const SystemModel& sys, const Corpus& corpus, const ExperimentConfig& cfg) {
  auto full = analyze_corpus(sys, corpus, Condition::full, cfg.eval);
  auto shortv = full;
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i)
    if (corpus.manifest.entries[i].split == Split::test)
      shortv[i] = analyze(sys, condition_view(corpus.sequences[i], Split::test, Condition::short_test, cfg.eval, i).frames);
  return {evaluate_views(corpus.manifest, full, cfg.backend), evaluate_views(corpus.manifest, shortv, cfg.backend)};
}

// ---------------------------------------------------------------------------
// Ablation grid

/// The five feedback configurations of the routing study: {i}, {f}, {o}, {g}, {i,f,o,g}.
inline std::vector<FeedbackRouting> ablation_routings(const FeedbackRouting& sources_from) {
  std::vector<FeedbackRouting> out;
  for (auto sinks : {"i", "f", "o", "g", "i,f,o,g"})
    out.push_back(FeedbackRouting::parse(sinks, sources_from.sources_string() == "none" ? "r,p"
                                                                                         : sources_from.sources_string()));
  return out;
}

struct AblationRow {
  std::string name;  // "baseline" or the sink list
  FeedbackRouting routing;
  EvalResult result;
  std::vector<TrainTrace> traces;
};

struct AblationResult {
  std::vector<std::string> languages;
  std::vector<AblationRow> rows;
};

inline std::string routing_dir_name(const FeedbackRouting& r) {
  std::string s = r.sinks_string();
  for (auto& c : s)
    if (c == ',') c = '-';
  return "mt_" + s;
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  body(out);
  if (!out) throw IoError("write failed for " + p.string());
}

inline void write_condition(const std::filesystem::path& dir, const ConditionResult& c) {
  std::filesystem::create_directories(dir);
  write_file(dir / "sre_cosine.tsv", [&](std::ostream& o) { save_sre_scores(o, c.sre_cosine); });
  write_file(dir / "sre_lda.tsv", [&](std::ostream& o) { save_sre_scores(o, c.sre_lda); });
  write_file(dir / "lre_cosine.tsv", [&](std::ostream& o) { save_lre_decisions(o, c.lre_cosine); });
  write_file(dir / "lre_svm.tsv", [&](std::ostream& o) { save_lre_decisions(o, c.lre_svm); });
  write_file(dir / "lre_softmax.tsv", [&](std::ostream& o) { save_lre_decisions(o, c.lre_softmax); });
}

inline void write_trace(std::ostream& out, const TrainTrace& t) {
  out << "epoch\tloss\n";
  for (std::size_t e = 0; e < t.epoch_loss.size(); ++e) out << e + 1 << '\t' << format_double(t.epoch_loss[e]) << '\n';
}

}  // namespace detail

inline void write_trace_tsv(std::ostream& out, const TrainTrace& t) { detail::write_trace(out, t); }

/// Trains the baseline pair and one multitask model per routing, evaluates all
/// of them in both conditions, and (when out_dir is non-empty) writes models,
/// traces and score files under out_dir/<row>/.
inline AblationResult run_ablation(const ExperimentConfig& cfg, const Corpus& corpus,
                                   const std::vector<FeedbackRouting>& routings, const std::filesystem::path& out_dir = {},
                                   const std::function<void(const std::string&)>& progress = {}) {
  cfg.validate();
  AblationResult res;
  res.languages = corpus.manifest.languages();
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };

  {
    note("training baseline lre");
    BaselineSystem base{make_single_task(cfg, corpus, Task::language), make_single_task(cfg, corpus, Task::speaker)};
    AblationRow row{"baseline", FeedbackRouting::none(), {}, {}};
    row.traces.push_back(train_model(base.lre, cfg, corpus));
    note("training baseline sre");
    row.traces.push_back(train_model(base.sre, cfg, corpus));
    note("evaluating baseline");
    row.result = evaluate(base, corpus, cfg);
    if (!out_dir.empty()) {
      auto dir = out_dir / "baseline";
      std::filesystem::create_directories(dir);
      save_model_file(dir / "lre.model", base.lre);
      save_model_file(dir / "sre.model", base.sre);
      detail::write_file(dir / "lre_trace.tsv", [&](std::ostream& o) { detail::write_trace(o, row.traces[0]); });
      detail::write_file(dir / "sre_trace.tsv", [&](std::ostream& o) { detail::write_trace(o, row.traces[1]); });
      detail::write_condition(dir / "full", row.result.full);
      detail::write_condition(dir / "short", row.result.short_test);
    }
    res.rows.push_back(std::move(row));
  }

  for (const auto& routing : routings) {
    note("training multitask " + routing.sinks_string());
    MultiTaskModel m = make_multitask(cfg, corpus, routing);
    AblationRow row{routing.sinks_string(), routing, {}, {}};
    row.traces.push_back(train_model(m, cfg, corpus));
    note("evaluating multitask " + routing.sinks_string());
    row.result = evaluate(m, corpus, cfg);
    if (!out_dir.empty()) {
      auto dir = out_dir / routing_dir_name(routing);
      std::filesystem::create_directories(dir);
      save_model_file(dir / "multitask.model", m);
      detail::write_file(dir / "trace.tsv", [&](std::ostream& o) { detail::write_trace(o, row.traces[0]); });
      detail::write_condition(dir / "full", row.result.full);
      detail::write_condition(dir / "short", row.result.short_test);
    }
    res.rows.push_back(std::move(row));
  }
  return res;
}

namespace detail {

inline std::string sink_marks(const AblationRow& row) {
  if (row.name == "baseline") return "r-vector baseline ";
  std::string s;
  for (Sink k : {Sink::input_gate, Sink::forget_gate, Sink::output_gate, Sink::cell_candidate})
    s += row.routing.has(k) ? "x   " : ".   ";
  return s.substr(0, 16) + "  ";
}

inline std::string pct(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << 100.0 * v;
  return o.str();
}

}  // namespace detail

/// SRE table: one row per system, EER(%) per language for Full and Short.
inline void render_sre_table(std::ostream& out, const AblationResult& res) {
  const std::size_t L = res.languages.size();
  out << "SRE EER(%), cosine scoring\n";
  out << "Feedback            | Full" << std::string(8 * L > 4 ? 8 * L - 4 : 0, ' ') << "| Short\n";
  out << "i   f   o   g       |";
  for (int c = 0; c < 2; ++c) {
    for (const auto& l : res.languages) out << ' ' << std::setw(7) << l;
    out << (c == 0 ? " |" : "\n");
  }
  for (const auto& row : res.rows) {
    out << detail::sink_marks(row) << "  |";
    for (const ConditionResult* c : {&row.result.full, &row.result.short_test}) {
      for (double e : c->eer_cosine) out << ' ' << std::setw(7) << detail::pct(e);
      out << (c == &row.result.full ? " |" : "\n");
    }
  }
}

/// LRE table: one row per system, IDE for Cosine / SVM / Softmax in Full and Short.
inline void render_lre_table(std::ostream& out, const AblationResult& res) {
  out << "LRE IDE\n";
  out << "Feedback            | Full                    | Short\n";
  out << "i   f   o   g       |  Cosine     SVM Softmax |  Cosine     SVM Softmax\n";
  for (const auto& row : res.rows) {
    out << detail::sink_marks(row) << "  |";
    for (const ConditionResult* c : {&row.result.full, &row.result.short_test}) {
      out << ' ' << std::setw(7) << c->idr_cosine.ide << ' ' << std::setw(7) << c->idr_svm.ide << ' ' << std::setw(7)
          << c->idr_softmax.ide;
      out << (c == &row.result.full ? " |" : "\n");
    }
  }
}

/// Long-format TSV of every metric in the grid.
inline void render_ablation_tsv(std::ostream& out, const AblationResult& res) {
  out << "system\tcondition\tmetric\tkey\tvalue\n";
  for (const auto& row : res.rows)
    for (int c = 0; c < 2; ++c) {
      const ConditionResult& cr = c == 0 ? row.result.full : row.result.short_test;
      const char* cond = c == 0 ? "full" : "short";
      for (std::size_t l = 0; l < res.languages.size(); ++l) {
        out << row.name << '\t' << cond << "\tsre_eer_cosine\t" << res.languages[l] << '\t'
            << format_double(cr.eer_cosine[l]) << '\n';
        out << row.name << '\t' << cond << "\tsre_eer_lda\t" << res.languages[l] << '\t' << format_double(cr.eer_lda[l])
            << '\n';
      }
      for (auto [name, idr] : {std::pair{"cosine", cr.idr_cosine}, std::pair{"svm", cr.idr_svm},
                               std::pair{"softmax", cr.idr_softmax}}) {
        out << row.name << '\t' << cond << "\tlre_ide\t" << name << '\t' << idr.ide << '\n';
        out << row.name << '\t' << cond << "\tlre_idr\t" << name << '\t' << format_double(idr.idr) << '\n';
      }
    }
}

inline void write_ablation_outputs(const std::filesystem::path& dir, const AblationResult& res) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "ablation_sre.txt", [&](std::ostream& o) { render_sre_table(o, res); });
  detail::write_file(dir / "ablation_lre.txt", [&](std::ostream& o) { render_lre_table(o, res); });
  detail::write_file(dir / "ablation.tsv", [&](std::ostream& o) { render_ablation_tsv(o, res); });
}

}  // namespace collab
