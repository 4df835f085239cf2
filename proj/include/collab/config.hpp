#pragma once

// Flat `key = value` experiment configuration. '#' starts a comment; unknown
// keys are rejected. See write_config for the full key list with defaults.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "collab/features.hpp"
#include "collab/multitask.hpp"
#include "collab/training.hpp"

namespace collab {

struct ModelSpec {
  Index cell = 32;
  Index rproj = 16;
  Index pproj = 16;
  double init_scale = 0.1;
  double cross_init_scale = 0.0;
  std::uint64_t seed = 1;
};

struct BackendSpec {
  int lda_dim = 0;  // 0 selects min(d, classes - 1)
  double svm_lambda = 1e-3;
  int svm_epochs = 20;
  std::uint64_t svm_seed = 1;
};

struct EvalSpec {
  Index short_frames = 100;  // 100 frames = 1 second
  CropRule short_rule = CropRule::centered;
};

struct ExperimentConfig {
  SynthSpec synth;
  ModelSpec model;
  FeedbackRouting routing = FeedbackRouting::make({Sink::cell_candidate}, {Source::rproj, Source::pproj});
  LossSpec loss;
  OptimizerSpec optimizer;
  CurriculumSpec curriculum{Curriculum::cropped, 50};
  EvalSpec eval;
  BackendSpec backend;
  std::string output_dir = "out";

  void validate() const {
    synth.validate();
    if (model.cell < 1 || model.rproj < 1 || model.pproj < 1) throw ValidationError("config: model dims must be >= 1");
    if (!(model.init_scale >= 0) || !(model.cross_init_scale >= 0))
      throw ValidationError("config: init scales must be >= 0");
    routing.validate();
    loss.validate();
    optimizer.validate();
    if (curriculum.crop_frames < 1) throw ValidationError("config: train.crop_frames must be >= 1");
    if (eval.short_frames < 1) throw ValidationError("config: eval.short_frames must be >= 1");
    if (backend.lda_dim < 0) throw ValidationError("config: backend.lda_dim must be >= 0");
    if (!(backend.svm_lambda > 0) || backend.svm_epochs < 1) throw ValidationError("config: invalid svm settings");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string crop_rule_name(CropRule r) {
  switch (r) {
    case CropRule::head: return "head";
    case CropRule::centered: return "centered";
    case CropRule::seeded_random: return "seeded-random";
  }
  return "centered";
}

/// Binds every config key to a parser and a printer.
struct ConfigField {
  std::function<bool(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
ConfigField field(std::function<T&(ExperimentConfig&)> ref) {
  return {[ref](ExperimentConfig& c, std::string_view v) {
            T& dst = ref(c);
            if constexpr (std::is_floating_point_v<T>) {
              return parse_double(v, dst);
            } else {
              return parse_int(v, dst);
            }
          },
          [ref](const ExperimentConfig& c) {
            T& v = ref(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return format_double(v);
            else return std::to_string(v);
          }};
}

inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, ConfigField>> fields = {
      {"synth.n_languages", field<int>([](C& c) -> int& { return c.synth.n_languages; })},
      {"synth.n_speakers_per_language", field<int>([](C& c) -> int& { return c.synth.n_speakers_per_language; })},
      {"synth.n_utts_per_speaker", field<int>([](C& c) -> int& { return c.synth.n_utts_per_speaker; })},
      {"synth.n_eval_speakers_per_language",
       field<int>([](C& c) -> int& { return c.synth.n_eval_speakers_per_language; })},
      {"synth.n_enroll_utts", field<int>([](C& c) -> int& { return c.synth.n_enroll_utts; })},
      {"synth.n_test_utts", field<int>([](C& c) -> int& { return c.synth.n_test_utts; })},
      {"synth.min_frames", field<int>([](C& c) -> int& { return c.synth.min_frames; })},
      {"synth.max_frames", field<int>([](C& c) -> int& { return c.synth.max_frames; })},
      {"synth.dim", field<int>([](C& c) -> int& { return c.synth.dim; })},
      {"synth.language_shift_scale", field<double>([](C& c) -> double& { return c.synth.language_shift_scale; })},
      {"synth.speaker_shift_scale", field<double>([](C& c) -> double& { return c.synth.speaker_shift_scale; })},
      {"synth.channel_noise_scale", field<double>([](C& c) -> double& { return c.synth.channel_noise_scale; })},
      {"synth.temporal_mixing", field<double>([](C& c) -> double& { return c.synth.temporal_mixing; })},
      {"synth.seed", field<std::uint64_t>([](C& c) -> std::uint64_t& { return c.synth.seed; })},
      {"model.cell", field<Index>([](C& c) -> Index& { return c.model.cell; })},
      {"model.rproj", field<Index>([](C& c) -> Index& { return c.model.rproj; })},
      {"model.pproj", field<Index>([](C& c) -> Index& { return c.model.pproj; })},
      {"model.init_scale", field<double>([](C& c) -> double& { return c.model.init_scale; })},
      {"model.cross_init_scale", field<double>([](C& c) -> double& { return c.model.cross_init_scale; })},
      {"model.seed", field<std::uint64_t>([](C& c) -> std::uint64_t& { return c.model.seed; })},
      {"routing.sinks",
       {[](C& c, std::string_view v) {
          c.routing = FeedbackRouting::parse(v, c.routing.sources_string());
          return true;
        },
        [](const C& c) { return c.routing.sinks_string(); }}},
      {"routing.sources",
       {[](C& c, std::string_view v) {
          auto sinks = c.routing.sinks;
          c.routing = FeedbackRouting::parse("none", v);
          c.routing.sinks = sinks;
          c.routing.validate();
          return true;
        },
        [](const C& c) { return c.routing.sources_string(); }}},
      {"loss.lre_weight", field<double>([](C& c) -> double& { return c.loss.lre_weight; })},
      {"loss.sre_weight", field<double>([](C& c) -> double& { return c.loss.sre_weight; })},
      {"optim.learning_rate", field<double>([](C& c) -> double& { return c.optimizer.learning_rate; })},
      {"optim.momentum", field<double>([](C& c) -> double& { return c.optimizer.momentum; })},
      {"optim.batch_size", field<int>([](C& c) -> int& { return c.optimizer.batch_size; })},
      {"optim.epochs", field<int>([](C& c) -> int& { return c.optimizer.epochs; })},
      {"optim.lr_decay", field<double>([](C& c) -> double& { return c.optimizer.lr_decay; })},
      {"optim.clip_norm", field<double>([](C& c) -> double& { return c.optimizer.clip_norm; })},
      {"optim.seed", field<std::uint64_t>([](C& c) -> std::uint64_t& { return c.optimizer.seed; })},
      {"train.curriculum",
       {[](C& c, std::string_view v) {
          if (v == "full") c.curriculum.mode = Curriculum::full_length;
          else if (v == "cropped") c.curriculum.mode = Curriculum::cropped;
          else return false;
          return true;
        },
        [](const C& c) { return std::string(c.curriculum.mode == Curriculum::full_length ? "full" : "cropped"); }}},
      {"train.crop_frames", field<Index>([](C& c) -> Index& { return c.curriculum.crop_frames; })},
      {"eval.short_frames", field<Index>([](C& c) -> Index& { return c.eval.short_frames; })},
      {"eval.short_rule",
       {[](C& c, std::string_view v) {
          if (v == "head") c.eval.short_rule = CropRule::head;
          else if (v == "centered") c.eval.short_rule = CropRule::centered;
          else if (v == "seeded-random") c.eval.short_rule = CropRule::seeded_random;
          else return false;
          return true;
        },
        [](const C& c) { return crop_rule_name(c.eval.short_rule); }}},
      {"backend.lda_dim", field<int>([](C& c) -> int& { return c.backend.lda_dim; })},
      {"backend.svm_lambda", field<double>([](C& c) -> double& { return c.backend.svm_lambda; })},
      {"backend.svm_epochs", field<int>([](C& c) -> int& { return c.backend.svm_epochs; })},
      {"backend.svm_seed", field<std::uint64_t>([](C& c) -> std::uint64_t& { return c.backend.svm_seed; })},
      {"output_dir",
       {[](C& c, std::string_view v) {
          c.output_dir = std::string(v);
          return !v.empty();
        },
        [](const C& c) { return c.output_dir; }}},
  };
  return fields;
}

}  // namespace detail

/// Applies one `key=value` assignment.
inline void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& [name, f] : detail::config_fields())
    if (name == key) {
      if (!f.set(cfg, value))
        throw ValidationError("config: bad value '" + std::string(value) + "' for " + std::string(key));
      return;
    }
  throw ValidationError("config: unknown key '" + std::string(key) + "'");
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>",
                                     ExperimentConfig base = {}) {
  LineReader r(in, source);
  std::string line;
  while (r.next(line)) {
    auto body = detail::trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string_view::npos) r.fail("expected 'key = value'");
    try {
      set_config_value(base, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(source + ":" + std::to_string(r.line()) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  return parse_config(in, path.string());
}

/// Every key with its current value; parse_config(write_config(c)) == c.
inline void write_config(std::ostream& out, const ExperimentConfig& cfg) {
  for (const auto& [name, f] : detail::config_fields()) out << name << " = " << f.get(cfg) << '\n';
}

}  // namespace collab
