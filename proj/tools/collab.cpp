// collab: command-line front end for the collaborative LSTMP toolkit.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "collab/collab.hpp"

namespace fs = std::filesystem;
using namespace collab;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", path, "experiment config file (key = value)");
    app->add_option("-s,--set", overrides, "override a config key, e.g. --set optim.epochs=3");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg;
    if (!path.empty()) cfg = load_config_file(path);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

template <typename F>
void write_to(const fs::path& path, F&& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  body(out);
  if (!out) throw IoError("write failed for " + path.string());
}

CorpusManifest read_manifest(const fs::path& corpus_dir) {
  const fs::path p = corpus_dir / kManifestFile;
  std::ifstream in(p);
  if (!in) throw IoError("cannot read manifest " + p.string());
  return load_manifest(in, p.string());
}

Condition parse_condition(const std::string& s) {
  if (s == "full") return Condition::full;
  if (s == "short") return Condition::short_test;
  throw ValidationError("condition must be full or short");
}

/// r-vectors for the requested task, reordered to follow the manifest.
std::vector<Vector> align_rvectors(const CorpusManifest& m, const std::vector<RVector>& vs, Task task) {
  std::map<std::string, const Vector*> by_id;
  for (const auto& v : vs)
    if (v.task == task && !by_id.emplace(v.utt_id, &v.values).second)
      throw ValidationError("duplicate r-vector for '" + v.utt_id + "'");
  std::vector<Vector> out;
  for (const auto& e : m.entries) {
    auto it = by_id.find(e.utt_id);
    if (it == by_id.end())
      throw ValidationError("no " + std::string(to_string(task)) + " r-vector for utterance '" + e.utt_id + "'");
    out.push_back(*it->second);
  }
  return out;
}

int run_synth(const ConfigArgs& ca, const std::string& out_dir) {
  auto cfg = ca.load();
  const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) / "corpus" : fs::path(out_dir);
  auto corpus = generate_corpus(cfg.synth);
  save_corpus(dir, corpus);
  std::cout << "wrote " << corpus.sequences.size() << " utterances to " << dir.string() << '\n';
  return 0;
}

int run_train(const ConfigArgs& ca, const std::string& corpus_dir, const std::string& mode, const std::string& out,
              const std::string& trace_path) {
  auto cfg = ca.load();
  auto corpus = load_corpus(corpus_dir);
  TrainTrace trace;
  if (mode == "multitask") {
    auto m = make_multitask(cfg, corpus, cfg.routing);
    trace = train_model(m, cfg, corpus);
    save_model_file(out, m);
  } else {
    auto m = make_single_task(cfg, corpus, parse_task(mode));
    trace = train_model(m, cfg, corpus);
    save_model_file(out, m);
  }
  if (!trace_path.empty()) write_to(trace_path, [&](std::ostream& o) { write_trace_tsv(o, trace); });
  if (!trace.epoch_loss.empty()) std::cout << "final epoch loss " << format_double(trace.epoch_loss.back()) << '\n';
  std::cout << "wrote model to " << out << '\n';
  return 0;
}

int run_gradcheck(GradcheckSpec spec, const std::string& sinks, const std::string& sources) {
  spec.routing = FeedbackRouting::parse(sinks, sources);
  auto report = gradcheck(spec);
  std::cout << "block\tmax_relative_error\tmax_abs_gradient\n";
  for (const auto& b : report.blocks)
    std::cout << b.name << '\t' << format_double(b.max_relative_error) << '\t' << format_double(b.max_abs_gradient)
              << '\n';
  std::cout << "max_relative_error\t" << format_double(report.max_relative_error) << '\n';
  if (!(report.max_relative_error < 1e-4)) {
    std::cerr << "gradcheck failed: max relative error " << report.max_relative_error << " >= 1e-4\n";
    return 2;
  }
  return 0;
}

int run_extract(const ConfigArgs& ca, const std::string& model_path, const std::string& corpus_dir,
                const std::string& branch, const std::string& condition, const std::string& out) {
  auto cfg = ca.load();
  auto model = load_model_file(model_path);
  auto corpus = load_corpus(corpus_dir);
  const Condition cond = parse_condition(condition);
  std::vector<RVector> vs;
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    auto seq = condition_view(corpus.sequences[i], corpus.manifest.entries[i].split, cond, cfg.eval, i);
    if (const auto* st = std::get_if<SingleTaskModel>(&model)) {
      if (!branch.empty() && parse_task(branch) != st->task)
        throw ValidationError("model is a " + std::string(to_string(st->task)) + " model; --branch does not match");
      vs.push_back(extract_rvector(*st, seq));
    } else {
      if (branch.empty()) throw ValidationError("--branch is required for a multitask model");
      vs.push_back(extract_rvector(std::get<MultiTaskModel>(model), parse_task(branch), seq));
    }
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_rvectors_file(out, vs);
  std::cout << "wrote " << vs.size() << " r-vectors to " << out << '\n';
  return 0;
}

int run_score(const ConfigArgs& ca, const std::string& backend_name, const std::string& task_name,
              const std::string& rvec_path, const std::string& model_path, const std::string& corpus_dir,
              const std::string& condition, const std::string& out) {
  auto cfg = ca.load();
  const Backend backend = parse_backend(backend_name);
  if (backend == Backend::softmax) {
    if (model_path.empty()) throw ValidationError("softmax scoring needs --model");
    auto model = load_model_file(model_path);
    auto corpus = load_corpus(corpus_dir);
    const Condition cond = parse_condition(condition);
    std::vector<LreDecision> ds;
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
      const auto& e = corpus.manifest.entries[i];
      if (e.split != Split::test) continue;
      auto seq = condition_view(corpus.sequences[i], e.split, cond, cfg.eval, i);
      auto d = std::visit([&](const auto& m) { return softmax_language_id(m, seq.frames); }, model);
      ds.push_back({e.utt_id, d.label, e.language});
    }
    write_to(out, [&](std::ostream& o) { save_lre_decisions(o, ds); });
    std::cout << "wrote " << ds.size() << " decisions to " << out << '\n';
    return 0;
  }
  if (rvec_path.empty()) throw ValidationError(std::string(to_string(backend)) + " scoring needs --rvectors");
  const Task task = parse_task(task_name);
  auto manifest = read_manifest(corpus_dir);
  auto rvecs = align_rvectors(manifest, load_rvectors_file(rvec_path), task);
  if (task == Task::speaker) {
    auto scores = score_sre(manifest, rvecs, backend, cfg.backend);
    write_to(out, [&](std::ostream& o) { save_sre_scores(o, scores); });
    std::cout << "wrote " << scores.size() << " trial scores to " << out << '\n';
  } else {
    auto ds = score_lre(manifest, rvecs, backend, cfg.backend);
    write_to(out, [&](std::ostream& o) { save_lre_decisions(o, ds); });
    std::cout << "wrote " << ds.size() << " decisions to " << out << '\n';
  }
  return 0;
}

int run_eval(const std::string& sre_path, const std::string& lre_path, const std::string& corpus_dir,
             const std::string& out, const std::string& points_path) {
  if (sre_path.empty() == lre_path.empty()) throw ValidationError("eval needs exactly one of --sre or --lre");
  std::ostringstream report;
  if (!sre_path.empty()) {
    std::ifstream in(sre_path);
    if (!in) throw IoError("cannot read " + sre_path);
    auto scores = load_sre_scores(in, sre_path);
    auto rep = sre_report(scores);
    write_report_tsv(report, rep, true, false);
    if (!corpus_dir.empty()) {
      auto manifest = read_manifest(corpus_dir);
      auto langs = manifest.languages();
      auto per = eer_by_language(manifest, scores);
      for (std::size_t l = 0; l < langs.size(); ++l) report << "eer." << langs[l] << '\t' << format_double(per[l]) << '\n';
    }
    if (!points_path.empty()) {
      std::vector<double> s;
      auto flags = std::make_unique<bool[]>(scores.size());
      for (std::size_t k = 0; k < scores.size(); ++k) {
        s.push_back(scores[k].score);
        flags[k] = scores[k].target;
      }
      auto pts = operating_points(s, std::span<const bool>(flags.get(), scores.size()));
      write_to(points_path, [&](std::ostream& o) { write_operating_points_tsv(o, pts); });
    }
  } else {
    std::ifstream in(lre_path);
    if (!in) throw IoError("cannot read " + lre_path);
    write_report_tsv(report, lre_report(load_lre_decisions(in, lre_path)), false, true);
  }
  if (!out.empty()) write_to(out, [&](std::ostream& o) { o << report.str(); });
  std::cout << report.str();
  return 0;
}

int run_ablation_cmd(const ConfigArgs& ca, const std::string& corpus_dir, const std::string& out_dir, bool quiet) {
  auto cfg = ca.load();
  const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir);
  Corpus corpus = corpus_dir.empty() ? generate_corpus(cfg.synth) : load_corpus(corpus_dir);
  fs::create_directories(dir);
  write_to(dir / "config.txt", [&](std::ostream& o) { write_config(o, cfg); });
  auto res = run_ablation(cfg, corpus, ablation_routings(cfg.routing), dir, [&](const std::string& s) {
    if (!quiet) std::cerr << s << '\n';
  });
  write_ablation_outputs(dir, res);
  render_sre_table(std::cout, res);
  std::cout << '\n';
  render_lre_table(std::cout, res);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative multi-task LSTMP for joint speaker and language recognition"};
  app.require_subcommand(1);

  ConfigArgs synth_cfg, train_cfg, extract_cfg, score_cfg, ablation_cfg;
  std::string out, corpus_dir, mode, trace, model, branch, condition = "full", backend, task = "speaker", rvecs,
                                                                 sre, lre, points;
  bool quiet = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_cfg.attach(synth);
  synth->add_option("-o,--out", out, "output directory (default <output_dir>/corpus)");

  auto* trn = app.add_subcommand("train", "train a single-task or multitask model");
  train_cfg.attach(trn);
  trn->add_option("--corpus", corpus_dir, "corpus directory")->required();
  trn->add_option("--mode", mode, "lre | sre | multitask")->required()->check(CLI::IsMember({"lre", "sre", "multitask"}));
  trn->add_option("-o,--out", out, "model file")->required();
  trn->add_option("--trace", trace, "loss trace TSV");

  GradcheckSpec gspec;
  std::string gsinks = "i,f,o,g", gsources = "r,p";
  auto* gc = app.add_subcommand("gradcheck", "compare BPTT gradients with finite differences");
  gc->add_option("--input", gspec.input);
  gc->add_option("--cell", gspec.cell);
  gc->add_option("--rproj", gspec.rproj);
  gc->add_option("--pproj", gspec.pproj);
  gc->add_option("--languages", gspec.n_languages);
  gc->add_option("--speakers", gspec.n_speakers);
  gc->add_option("--frames", gspec.frames);
  gc->add_option("--sinks", gsinks, "i,f,o,g subset or none");
  gc->add_option("--sources", gsources, "r,p subset");
  gc->add_option("--seed", gspec.seed);

  auto* ext = app.add_subcommand("extract", "extract r-vectors for every utterance of a corpus");
  extract_cfg.attach(ext);
  ext->add_option("--model", model)->required();
  ext->add_option("--corpus", corpus_dir)->required();
  ext->add_option("--branch", branch, "lre | sre (required for multitask models)");
  ext->add_option("--condition", condition, "full | short (short crops test utterances)");
  ext->add_option("-o,--out", out)->required();

  auto* sc = app.add_subcommand("score", "score r-vectors or run softmax identification");
  score_cfg.attach(sc);
  sc->add_option("--backend", backend, "cosine | lda | svm | softmax")->required();
  sc->add_option("--task", task, "speaker | language (r-vector back-ends)");
  sc->add_option("--rvectors", rvecs);
  sc->add_option("--model", model, "model file (softmax)");
  sc->add_option("--corpus", corpus_dir)->required();
  sc->add_option("--condition", condition, "full | short (softmax)");
  sc->add_option("-o,--out", out)->required();

  auto* ev = app.add_subcommand("eval", "compute EER or IDR from a score file");
  ev->add_option("--sre", sre, "SRE score TSV");
  ev->add_option("--lre", lre, "LRE decision TSV");
  ev->add_option("--corpus", corpus_dir, "corpus directory, adds per-language EER");
  ev->add_option("--points", points, "write FAR/FRR operating points TSV");
  ev->add_option("-o,--out", out, "report TSV");

  auto* abl = app.add_subcommand("ablation", "run the feedback-routing grid");
  ablation_cfg.attach(abl);
  abl->add_option("--corpus", corpus_dir, "corpus directory (default: generate from config)");
  abl->add_option("-o,--out", out, "output directory (default <output_dir>)");
  abl->add_flag("-q,--quiet", quiet);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(synth_cfg, out);
    if (*trn) return run_train(train_cfg, corpus_dir, mode, out, trace);
    if (*gc) return run_gradcheck(gspec, gsinks, gsources);
    if (*ext) return run_extract(extract_cfg, model, corpus_dir, branch, condition, out);
    if (*sc) return run_score(score_cfg, backend, task, rvecs, model, corpus_dir, condition, out);
    if (*ev) return run_eval(sre, lre, corpus_dir, out, points);
    if (*abl) return run_ablation_cmd(ablation_cfg, corpus_dir, out, quiet);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
