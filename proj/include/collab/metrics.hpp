#pragma once

// Verification and identification metrics.
//
// EER: candidate thresholds are the lowest score, every midpoint between
// consecutive distinct scores, and a value just above the highest score.
// FRR(th) = fraction of targets < th, FAR(th) = fraction of imposters >= th.
// The EER is read where FRR - FAR changes sign, interpolating linearly between
// the two bracketing operating points when no candidate hits FAR = FRR exactly.
// Higher scores are more target-like.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "collab/common.hpp"

namespace collab {

struct Trial {
  std::size_t enroll = 0;  // index into the enrollment list
  std::size_t test = 0;    // index into the test list
  bool target = false;
};

struct TrialSet {
  std::vector<Trial> trials;
  std::size_t n_target = 0;
  std::size_t n_imposter = 0;
};

/// Full cross product of enrollment models and test utterances; a trial is a
/// target trial iff the speaker labels match.
inline TrialSet build_sre_trials(std::span<const std::string> enroll_speakers,
                                 std::span<const std::string> test_speakers) {
  TrialSet ts;
  ts.trials.reserve(enroll_speakers.size() * test_speakers.size());
  for (std::size_t e = 0; e < enroll_speakers.size(); ++e)
    for (std::size_t t = 0; t < test_speakers.size(); ++t) {
      const bool target = enroll_speakers[e] == test_speakers[t];
      ts.trials.push_back({e, t, target});
      ++(target ? ts.n_target : ts.n_imposter);
    }
  return ts;
}

struct OperatingPoint {
  double threshold = 0;
  double frr = 0;
  double far = 0;
};

/// Every distinct operating point in increasing threshold order.
inline std::vector<OperatingPoint> operating_points(std::span<const double> scores, std::span<const bool> is_target) {
  if (scores.size() != is_target.size()) throw ValidationError("operating_points: scores and labels differ in length");
  std::size_t n_t = 0;
  for (bool b : is_target) n_t += b;
  const std::size_t n_i = scores.size() - n_t;
  if (n_t == 0 || n_i == 0) throw ValidationError("EER needs at least one target and one imposter trial");
  for (double s : scores)
    if (!std::isfinite(s)) throw ValidationError("EER: non-finite score");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Group equal scores; targets_upto[g] counts targets with score <= values[g].
  std::vector<double> values;
  std::vector<std::size_t> targets_upto, imposters_upto;
  std::size_t tc = 0, ic = 0;
  for (std::size_t k = 0; k < idx.size();) {
    const double v = scores[idx[k]];
    while (k < idx.size() && scores[idx[k]] == v) {
      ++(is_target[idx[k]] ? tc : ic);
      ++k;
    }
    values.push_back(v);
    targets_upto.push_back(tc);
    imposters_upto.push_back(ic);
  }

  const double nt = static_cast<double>(n_t), ni = static_cast<double>(n_i);
  std::vector<OperatingPoint> pts;
  pts.reserve(values.size() + 1);
  pts.push_back({values.front(), 0.0, 1.0});
  for (std::size_t j = 1; j < values.size(); ++j) {
    const double th = values[j - 1] + (values[j] - values[j - 1]) / 2;
    pts.push_back({th, targets_upto[j - 1] / nt, (ni - imposters_upto[j - 1]) / ni});
  }
  pts.push_back({std::nextafter(values.back(), std::numeric_limits<double>::infinity()), 1.0, 0.0});
  return pts;
}

struct EerResult {
  double eer = 0;
  double threshold = 0;
};

inline EerResult eer_from_points(std::span<const OperatingPoint> pts) {
  for (std::size_t j = 0; j < pts.size(); ++j) {
    const double d = pts[j].frr - pts[j].far;
    if (d == 0) return {pts[j].frr, pts[j].threshold};
    if (d > 0) {
      // j >= 1 because the first point has FRR - FAR = -1.
      const auto& a = pts[j - 1];
      const auto& b = pts[j];
      const double da = a.frr - a.far;
      const double alpha = -da / (d - da);
      return {a.frr + alpha * (b.frr - a.frr), a.threshold + alpha * (b.threshold - a.threshold)};
    }
  }
  return {pts.back().frr, pts.back().threshold};
}

inline EerResult compute_eer(std::span<const double> scores, std::span<const bool> is_target) {
  auto pts = operating_points(scores, is_target);
  return eer_from_points(pts);
}

/// EER from separate target and imposter score lists.
inline EerResult compute_eer_split(std::span<const double> target_scores, std::span<const double> imposter_scores) {
  std::vector<double> s(target_scores.begin(), target_scores.end());
  s.insert(s.end(), imposter_scores.begin(), imposter_scores.end());
  auto flags = std::make_unique<bool[]>(s.size());
  std::fill_n(flags.get(), target_scores.size(), true);
  return compute_eer(s, std::span<const bool>(flags.get(), s.size()));
}

struct IdrResult {
  double idr = 0;
  std::size_t ide = 0;
  std::size_t n = 0;
};

/// ide = number of mismatches, idr = ide / N (0 for N = 0).
template <typename T>
IdrResult compute_idr(std::span<const T> predictions, std::span<const T> truths) {
  if (predictions.size() != truths.size()) throw ValidationError("compute_idr: length mismatch");
  IdrResult r;
  r.n = truths.size();
  for (std::size_t k = 0; k < truths.size(); ++k) r.ide += predictions[k] != truths[k];
  r.idr = r.n ? static_cast<double>(r.ide) / static_cast<double>(r.n) : 0.0;
  return r;
}

inline IdrResult compute_idr(const std::vector<std::string>& predictions, const std::vector<std::string>& truths) {
  return compute_idr(std::span<const std::string>(predictions), std::span<const std::string>(truths));
}

struct MetricReport {
  double eer = 0;
  double threshold_at_eer = 0;
  std::size_t n_target = 0;
  std::size_t n_imposter = 0;
  double idr = 0;
  std::size_t ide = 0;
  std::size_t n_identification = 0;
};

inline void write_report_tsv(std::ostream& out, const MetricReport& r, bool sre, bool lre) {
  out << "metric\tvalue\n";
  if (sre) {
    out << "eer\t" << format_double(r.eer) << '\n';
    out << "threshold_at_eer\t" << format_double(r.threshold_at_eer) << '\n';
    out << "target_trials\t" << r.n_target << '\n';
    out << "imposter_trials\t" << r.n_imposter << '\n';
  }
  if (lre) {
    out << "idr\t" << format_double(r.idr) << '\n';
    out << "ide\t" << r.ide << '\n';
    out << "identification_trials\t" << r.n_identification << '\n';
  }
}

inline void write_operating_points_tsv(std::ostream& out, std::span<const OperatingPoint> pts) {
  out << "threshold\tfar\tfrr\n";
  for (const auto& p : pts) out << format_double(p.threshold) << '\t' << format_double(p.far) << '\t' << format_double(p.frr) << '\n';
}

}  // namespace collab
