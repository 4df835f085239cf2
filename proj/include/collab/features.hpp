#pragma once

// Feature sequences, corpus manifests, the synthetic speaker x language corpus
// and the text archive formats.
//
// Feature archive (one block per utterance):
//
//   <utt_id> <speaker> <language> <T> <D>
//   <D values of frame 0>
//   ...
//   <D values of frame T-1>
//
// Lines starting with '#' and blank lines between blocks are ignored. Values use
// the shortest decimal rendering that reads back to the identical double.
//
// Manifest: one TSV line `utt_id<TAB>speaker<TAB>language<TAB>split` per entry,
// split in {train, enroll, test}.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "collab/common.hpp"

namespace collab {

struct FeatureSequence {
  std::string utt_id;
  std::string speaker;
  std::string language;
  FrameMatrix frames;  // T x D

  Index num_frames() const noexcept { return frames.rows(); }
  Index dim() const noexcept { return frames.cols(); }

  friend bool operator==(const FeatureSequence& a, const FeatureSequence& b) {
    return a.utt_id == b.utt_id && a.speaker == b.speaker && a.language == b.language &&
           a.frames.rows() == b.frames.rows() && a.frames.cols() == b.frames.cols() &&
           a.frames == b.frames;
  }
};

enum class Split { train, enroll, test };

inline std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::enroll: return "enroll";
    case Split::test: return "test";
  }
  return "train";
}

inline bool parse_split(std::string_view s, Split& out) noexcept {
  if (s == "train") out = Split::train;
  else if (s == "enroll") out = Split::enroll;
  else if (s == "test") out = Split::test;
  else return false;
  return true;
}

struct ManifestEntry {
  std::string utt_id;
  std::string speaker;
  std::string language;
  Split split = Split::train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;

  void validate() const {
    std::unordered_set<std::string> ids;
    std::map<std::string, bool> speaker_usable;
    for (const auto& e : entries) {
      if (!is_token(e.utt_id) || !is_token(e.speaker) || !is_token(e.language))
        throw ValidationError("manifest: labels must be non-empty and free of whitespace");
      if (!ids.insert(e.utt_id).second) throw ValidationError("manifest: duplicate utt_id '" + e.utt_id + "'");
      bool usable = e.split == Split::train || e.split == Split::enroll;
      speaker_usable[e.speaker] = speaker_usable[e.speaker] || usable;
    }
    for (const auto& [spk, ok] : speaker_usable)
      if (!ok) throw ValidationError("manifest: speaker '" + spk + "' has no train or enroll utterance");
  }

  /// Sorted distinct labels among entries of the given splits.
  std::vector<std::string> languages() const {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.language);
    return {s.begin(), s.end()};
  }

  std::vector<std::string> speakers(Split split) const {
    std::set<std::string> s;
    for (const auto& e : entries)
      if (e.split == split) s.insert(e.speaker);
    return {s.begin(), s.end()};
  }
};

/// A manifest plus the sequences it describes, aligned by index.
struct Corpus {
  CorpusManifest manifest;
  std::vector<FeatureSequence> sequences;

  friend bool operator==(const Corpus&, const Corpus&) = default;

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
      if (manifest.entries[i].split == split) out.push_back(i);
    return out;
  }
};

struct SynthSpec {
  int n_languages = 2;
  int n_speakers_per_language = 20;       // training speakers
  int n_utts_per_speaker = 10;            // training utterances per training speaker
  int n_eval_speakers_per_language = 10;  // held-out speakers for enrollment and test
  int n_enroll_utts = 3;
  int n_test_utts = 5;
  int min_frames = 200;
  int max_frames = 300;
  int dim = 40;
  double language_shift_scale = 1.0;
  double speaker_shift_scale = 1.5;
  double channel_noise_scale = 1.0;
  double temporal_mixing = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    auto need = [](bool ok, const char* what) {
      if (!ok) throw ValidationError(std::string("synth spec: ") + what);
    };
    need(n_languages >= 1, "n_languages must be >= 1");
    need(n_speakers_per_language >= 0, "n_speakers_per_language must be >= 0");
    need(n_utts_per_speaker >= 1 || n_speakers_per_language == 0, "n_utts_per_speaker must be >= 1");
    need(n_eval_speakers_per_language >= 0, "n_eval_speakers_per_language must be >= 0");
    need(n_enroll_utts >= 1 || n_eval_speakers_per_language == 0, "n_enroll_utts must be >= 1");
    need(n_test_utts >= 0, "n_test_utts must be >= 0");
    need(min_frames >= 1 && max_frames >= min_frames, "frame range must satisfy 1 <= min_frames <= max_frames");
    need(dim >= 2, "dim must be >= 2");
    need(language_shift_scale >= 0 && std::isfinite(language_shift_scale), "language_shift_scale must be >= 0");
    need(speaker_shift_scale >= 0 && std::isfinite(speaker_shift_scale), "speaker_shift_scale must be >= 0");
    need(channel_noise_scale >= 0 && std::isfinite(channel_noise_scale), "channel_noise_scale must be >= 0");
    need(temporal_mixing >= 0 && temporal_mixing < 1, "temporal_mixing must lie in [0, 1)");
  }
};

namespace detail {

inline Vector random_direction(Rng& rng, int dim, double norm) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (int k = 0; k < dim; ++k) v[k] = normal(rng);
  double n = v.norm();
  if (n > 0) v *= norm / n;
  return v;
}

inline std::string padded(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(width > static_cast<int>(s.size()) ? width - s.size() : 0, '0') + s;
}

}  // namespace detail

/// Additive synthetic corpus: x_t = mu_language + mu_speaker + eps_t, with
/// eps_t = a * eps_{t-1} + noise_scale * z_t and eps_0 = 0.
inline Corpus generate_corpus(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> length(spec.min_frames, spec.max_frames);
  Corpus corpus;

  auto make_utt = [&](const std::string& utt, const std::string& spk, const std::string& lang, const Vector& mean,
                      Split split) {
    FeatureSequence seq{utt, spk, lang, FrameMatrix(length(rng), spec.dim)};
    Vector eps = Vector::Zero(spec.dim);
    for (Index t = 0; t < seq.num_frames(); ++t) {
      for (int k = 0; k < spec.dim; ++k) eps[k] = spec.temporal_mixing * eps[k] + spec.channel_noise_scale * normal(rng);
      seq.frames.row(t) = (mean + eps).transpose();
    }
    corpus.manifest.entries.push_back({utt, spk, lang, split});
    corpus.sequences.push_back(std::move(seq));
  };

  for (int l = 0; l < spec.n_languages; ++l) {
    const std::string lang = "lang" + std::to_string(l);
    const Vector mu_lang = detail::random_direction(rng, spec.dim, spec.language_shift_scale);
    for (int s = 0; s < spec.n_speakers_per_language; ++s) {
      const std::string spk = "L" + std::to_string(l) + "-S" + detail::padded(s, 3);
      const Vector mean = mu_lang + detail::random_direction(rng, spec.dim, spec.speaker_shift_scale);
      for (int u = 0; u < spec.n_utts_per_speaker; ++u)
        make_utt(spk + "-U" + detail::padded(u, 3), spk, lang, mean, Split::train);
    }
    for (int s = 0; s < spec.n_eval_speakers_per_language; ++s) {
      const std::string spk = "L" + std::to_string(l) + "-E" + detail::padded(s, 3);
      const Vector mean = mu_lang + detail::random_direction(rng, spec.dim, spec.speaker_shift_scale);
      for (int u = 0; u < spec.n_enroll_utts; ++u)
        make_utt(spk + "-N" + detail::padded(u, 3), spk, lang, mean, Split::enroll);
      for (int u = 0; u < spec.n_test_utts; ++u)
        make_utt(spk + "-T" + detail::padded(u, 3), spk, lang, mean, Split::test);
    }
  }
  return corpus;
}

enum class CropRule { head, centered, seeded_random };

/// Contiguous window of min(T, n_frames) frames; labels are preserved.
inline FeatureSequence crop_short(const FeatureSequence& seq, Index n_frames, CropRule rule,
                                  std::uint64_t seed = 0) {
  if (n_frames < 1) throw ValidationError("crop_short: n_frames must be >= 1");
  const Index T = seq.num_frames();
  if (T <= n_frames) return seq;
  Index offset = 0;
  switch (rule) {
    case CropRule::head: offset = 0; break;
    case CropRule::centered: offset = (T - n_frames) / 2; break;
    case CropRule::seeded_random: {
      Rng rng(seed);
      offset = std::uniform_int_distribution<Index>(0, T - n_frames)(rng);
      break;
    }
  }
  return {seq.utt_id, seq.speaker, seq.language, seq.frames.middleRows(offset, n_frames)};
}

// ---------------------------------------------------------------------------
// Archives

inline void save_features(std::ostream& out, std::span<const FeatureSequence> seqs) {
  for (const auto& s : seqs) {
    out << s.utt_id << ' ' << s.speaker << ' ' << s.language << ' ' << s.num_frames() << ' ' << s.dim() << '\n';
    for (Index t = 0; t < s.num_frames(); ++t) write_row(out, s.frames.row(t).data(), s.dim());
  }
}

inline std::vector<FeatureSequence> load_features(std::istream& in, const std::string& source = "<features>") {
  LineReader reader(in, source);
  std::vector<FeatureSequence> out;
  std::unordered_set<std::string> seen;
  Index dim = -1;
  std::string line;
  while (reader.next_content(line)) {
    auto toks = split_ws(line);
    if (toks.size() != 5) reader.fail("malformed header, expected 'utt_id speaker language T D'");
    FeatureSequence seq{std::string(toks[0]), std::string(toks[1]), std::string(toks[2]), {}};
    Index T = 0, D = 0;
    if (!parse_int(toks[3], T) || T < 1) reader.fail("utterance '" + seq.utt_id + "': bad frame count");
    if (!parse_int(toks[4], D) || D < 1) reader.fail("utterance '" + seq.utt_id + "': bad dimension");
    if (dim >= 0 && D != dim)
      reader.fail("utterance '" + seq.utt_id + "': dimension " + std::to_string(D) + " differs from " +
                  std::to_string(dim));
    dim = D;
    if (!seen.insert(seq.utt_id).second) reader.fail("duplicate utt_id '" + seq.utt_id + "'");
    seq.frames.resize(T, D);
    for (Index t = 0; t < T; ++t) {
      if (!reader.next(line))
        reader.fail("utterance '" + seq.utt_id + "': expected " + std::to_string(T) + " frames, file ended after " +
                    std::to_string(t));
      auto vals = split_ws(line);
      if (static_cast<Index>(vals.size()) != D)
        reader.fail("utterance '" + seq.utt_id + "': frame " + std::to_string(t) + " has " +
                    std::to_string(vals.size()) + " values, expected " + std::to_string(D));
      read_row(reader, line, seq.frames.row(t).data(), D);
    }
    for (Index t = 0; t < T; ++t)
      if (!seq.frames.row(t).allFinite()) reader.fail("utterance '" + seq.utt_id + "': non-finite value");
    out.push_back(std::move(seq));
  }
  return out;
}

inline void save_manifest(std::ostream& out, const CorpusManifest& m) {
  for (const auto& e : m.entries)
    out << e.utt_id << '\t' << e.speaker << '\t' << e.language << '\t' << to_string(e.split) << '\n';
}

inline CorpusManifest load_manifest(std::istream& in, const std::string& source = "<manifest>") {
  LineReader reader(in, source);
  CorpusManifest m;
  std::unordered_set<std::string> seen;
  std::string line;
  while (reader.next_content(line)) {
    auto cols = split_on(line, '\t');
    if (cols.size() != 4) reader.fail("expected 4 tab-separated columns");
    ManifestEntry e{std::string(cols[0]), std::string(cols[1]), std::string(cols[2]), Split::train};
    if (!parse_split(cols[3], e.split)) reader.fail("unknown split '" + std::string(cols[3]) + "'");
    if (!seen.insert(e.utt_id).second) reader.fail("duplicate utt_id '" + e.utt_id + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline constexpr const char* kFeaturesFile = "features.txt";
inline constexpr const char* kManifestFile = "manifest.tsv";

inline void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream feats(dir / kFeaturesFile), man(dir / kManifestFile);
  if (!feats || !man) throw IoError("cannot write corpus to " + dir.string());
  save_features(feats, corpus.sequences);
  save_manifest(man, corpus.manifest);
  if (!feats || !man) throw IoError("write failed for corpus in " + dir.string());
}

/// Loads a corpus and aligns sequences to manifest order.
inline Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream feats(dir / kFeaturesFile), man(dir / kManifestFile);
  if (!feats || !man) throw IoError("cannot read corpus from " + dir.string());
  Corpus c;
  c.manifest = load_manifest(man, (dir / kManifestFile).string());
  auto seqs = load_features(feats, (dir / kFeaturesFile).string());
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < seqs.size(); ++i) by_id[seqs[i].utt_id] = i;
  if (seqs.size() != c.manifest.entries.size())
    throw IoError("corpus in " + dir.string() + ": manifest has " + std::to_string(c.manifest.entries.size()) +
                  " entries but archive has " + std::to_string(seqs.size()));
  for (const auto& e : c.manifest.entries) {
    auto it = by_id.find(e.utt_id);
    if (it == by_id.end()) throw IoError("corpus in " + dir.string() + ": no features for '" + e.utt_id + "'");
    auto& s = seqs[it->second];
    if (s.speaker != e.speaker || s.language != e.language)
      throw IoError("corpus in " + dir.string() + ": labels of '" + e.utt_id + "' disagree with manifest");
    c.sequences.push_back(std::move(s));
  }
  return c;
}

}  // namespace collab
