#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "collab/collab.hpp"

namespace collab::testing {

inline FrameMatrix random_frames(Index T, Index D, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  FrameMatrix X(T, D);
  for (Index t = 0; t < T; ++t)
    for (Index d = 0; d < D; ++d) X(t, d) = n(rng);
  return X;
}

inline Vector random_vector(Index n, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vector v(n);
  for (Index k = 0; k < n; ++k) v[k] = u(rng);
  return v;
}

/// A fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("collab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// A small, fast corpus for pipeline tests.
inline SynthSpec tiny_synth(std::uint64_t seed = 3) {
  SynthSpec s;
  s.n_languages = 2;
  s.n_speakers_per_language = 4;
  s.n_utts_per_speaker = 3;
  s.n_eval_speakers_per_language = 3;
  s.n_enroll_utts = 2;
  s.n_test_utts = 2;
  s.min_frames = 30;
  s.max_frames = 40;
  s.dim = 6;
  s.speaker_shift_scale = 2.0;
  s.seed = seed;
  return s;
}

inline ExperimentConfig tiny_config(std::uint64_t seed = 3) {
  ExperimentConfig c;
  c.synth = tiny_synth(seed);
  c.model.cell = 6;
  c.model.rproj = 3;
  c.model.pproj = 3;
  c.optimizer.epochs = 2;
  c.optimizer.batch_size = 4;
  c.curriculum.crop_frames = 20;
  c.eval.short_frames = 10;
  c.backend.svm_epochs = 5;
  return c;
}

}  // namespace collab::testing
