#pragma once

// Back-ends over r-vectors: cosine, Fisher LDA (scored by cosine after
// projection), a linear SVM trained with a Pegasos primal solver, and direct
// softmax language identification from the language branch.
//
// Score files:
//   SRE: `enroll_id<TAB>test_utt_id<TAB>score<TAB>target{0,1}`
//   LRE: `test_utt_id<TAB>predicted<TAB>true`

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "collab/lstmp.hpp"
#include "collab/models.hpp"
#include "collab/multitask.hpp"
#include "collab/training.hpp"

namespace collab {

inline double cosine_score(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ValidationError("cosine_score: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) throw ValidationError("cosine_score: zero-norm vector");
  return a.dot(b) / (na * nb);
}

inline Vector mean_of(std::span<const Vector> xs) {
  if (xs.empty()) throw ValidationError("mean_of: no vectors");
  Vector m = Vector::Zero(xs.front().size());
  for (const auto& x : xs) m += x;
  return m / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// LDA

struct LdaModel {
  Matrix projection;  // k x d, rows are discriminant directions
  Vector mean;        // global training mean, subtracted before projection
  std::vector<std::string> classes;
  std::vector<Vector> class_means_projected;

  Vector project(const Vector& x) const {
    if (x.size() != mean.size()) throw ValidationError("lda: dimension mismatch");
    return projection * (x - mean);
  }
};

/// Fisher LDA: top target_dim generalized eigenvectors of S_b v = lambda (S_w + eps I) v
/// with eps = 1e-6 * trace(S_w) / d. target_dim <= 0 selects min(d, C - 1).
inline LdaModel lda_train(std::span<const Vector> xs, std::span<const std::string> labels, int target_dim = 0) {
  if (xs.size() != labels.size()) throw ValidationError("lda_train: vectors and labels differ in length");
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2) throw ValidationError("lda_train: need at least 2 classes");
  for (const auto& [c, idx] : by_class)
    if (idx.size() < 2) throw ValidationError("lda_train: class '" + c + "' has fewer than 2 samples");
  const Index d = xs.front().size();
  for (const auto& x : xs)
    if (x.size() != d) throw ValidationError("lda_train: dimension mismatch");
  const Index C = static_cast<Index>(by_class.size());
  const Index k = target_dim > 0 ? target_dim : std::min(d, C - 1);
  if (k > d) throw ValidationError("lda_train: target_dim exceeds input dimension");

  LdaModel m;
  m.mean = mean_of(xs);
  Matrix Sw = Matrix::Zero(d, d), Sb = Matrix::Zero(d, d);
  std::vector<Vector> means;
  for (const auto& [c, idx] : by_class) {
    Vector mu = Vector::Zero(d);
    for (auto i : idx) mu += xs[i];
    mu /= static_cast<double>(idx.size());
    for (auto i : idx) {
      Vector z = xs[i] - mu;
      Sw.noalias() += z * z.transpose();
    }
    Vector dm = mu - m.mean;
    Sb.noalias() += static_cast<double>(idx.size()) * dm * dm.transpose();
    m.classes.push_back(c);
    means.push_back(mu);
  }
  double ridge = 1e-6 * Sw.trace() / static_cast<double>(d);
  if (!(ridge > 0)) ridge = 1e-12;
  Sw.diagonal().array() += ridge;

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(Sb, Sw);
  if (solver.info() != Eigen::Success) throw NumericError("lda_train: eigen decomposition failed");
  // Eigenvalues ascend; keep the last k, largest first.
  m.projection.resize(k, d);
  for (Index j = 0; j < k; ++j) m.projection.row(j) = solver.eigenvectors().col(d - 1 - j).transpose();
  for (const auto& mu : means) m.class_means_projected.push_back(m.project(mu));
  return m;
}

/// Rows of P replaced by an orthonormal basis of the same row space.
inline Matrix orthonormalize_rows(const Matrix& P) {
  Eigen::HouseholderQR<Matrix> qr(P.transpose());
  Matrix Q = qr.householderQ() * Matrix::Identity(P.cols(), P.rows());
  return Q.transpose();
}

/// d x d orthogonal projector Q^T Q onto the row space of P.
inline Matrix subspace_projector(const Matrix& P) {
  Matrix Q = orthonormalize_rows(P);
  return Q.transpose() * Q;
}

// ---------------------------------------------------------------------------
// Linear SVM

struct SvmModel {
  Vector weights;
  double bias = 0;
  std::pair<std::string, std::string> classes;  // (positive, negative)

  double decision(const Vector& x) const {
    if (x.size() != weights.size()) throw ValidationError("svm: dimension mismatch");
    return weights.dot(x) + bias;
  }
};

/// Pegasos on the hinge loss lambda/2 |w|^2 + mean(max(0, 1 - y (w.x + b))).
/// The bias is learned as the weight of a constant 1 feature. Targets are +1/-1.
inline SvmModel svm_train(std::span<const Vector> xs, std::span<const int> targets, double lambda, int epochs,
                          std::uint64_t seed, std::pair<std::string, std::string> classes = {"+1", "-1"}) {
  if (xs.size() != targets.size() || xs.empty()) throw ValidationError("svm_train: need equal, non-empty inputs");
  if (!(lambda > 0)) throw ValidationError("svm_train: lambda must be > 0");
  if (epochs < 1) throw ValidationError("svm_train: epochs must be >= 1");
  bool pos = false, neg = false;
  for (int y : targets) {
    if (y != 1 && y != -1) throw ValidationError("svm_train: targets must be +1 or -1");
    (y > 0 ? pos : neg) = true;
  }
  if (!pos || !neg) throw ValidationError("svm_train: both classes must be present");
  const Index d = xs.front().size();
  Vector w = Vector::Zero(d + 1);
  Vector xa(d + 1);
  std::vector<std::size_t> order(xs.size());
  const double radius = 1.0 / std::sqrt(lambda);
  long step = 0;
  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, e));
    std::shuffle(order.begin(), order.end(), rng);
    for (auto i : order) {
      ++step;
      const double eta = 1.0 / (lambda * static_cast<double>(step));
      xa.head(d) = xs[i];
      xa[d] = 1.0;
      const double margin = targets[i] * w.dot(xa);
      w *= 1.0 - eta * lambda;
      if (margin < 1) w += (eta * targets[i]) * xa;
      const double n = w.norm();
      if (n > radius) w *= radius / n;
    }
  }
  return {w.head(d), w[d], std::move(classes)};
}

/// One-vs-rest SVMs; identify by the largest decision value.
struct SvmIdentifier {
  std::vector<SvmModel> models;  // models[k].classes.first is label k

  std::size_t predict(const Vector& x) const {
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < models.size(); ++k) {
      double v = models[k].decision(x);
      if (v > best_v) best = k, best_v = v;
    }
    return best;
  }
};

inline SvmIdentifier svm_train_one_vs_rest(std::span<const Vector> xs, std::span<const std::string> labels,
                                           const std::vector<std::string>& classes, double lambda, int epochs,
                                           std::uint64_t seed) {
  SvmIdentifier id;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == classes[k] ? 1 : -1;
    id.models.push_back(svm_train(xs, y, lambda, epochs, seed, {classes[k], "rest"}));
  }
  return id;
}

// ---------------------------------------------------------------------------
// Softmax language identification

struct LanguageDecision {
  std::string label;
  Vector posterior;
};

/// Averages the per-frame softmax of the branch logits; ties go to the lowest index.
inline LanguageDecision softmax_language_id(std::span<const StepOutput> steps, const std::vector<std::string>& labels) {
  if (steps.empty()) throw ValidationError("softmax_language_id: empty sequence");
  Vector post = Vector::Zero(steps.front().y.size());
  if (static_cast<Index>(labels.size()) != post.size())
    throw ValidationError("softmax_language_id: label table does not match output dimension");
  for (const auto& s : steps) post += softmax(s.y);
  post /= static_cast<double>(steps.size());
  Index best = 0;
  for (Index k = 1; k < post.size(); ++k)
    if (post[k] > post[best]) best = k;
  return {labels[best], post};
}

inline LanguageDecision softmax_language_id(const SingleTaskModel& m, const FrameMatrix& frames) {
  if (m.task != Task::language) throw ValidationError("softmax_language_id: model is not a language model");
  return softmax_language_id(forward_sequence(m.params, frames), m.labels);
}

inline LanguageDecision softmax_language_id(const MultiTaskModel& m, const FrameMatrix& frames) {
  return softmax_language_id(mt_forward(m, frames).lre, m.languages);
}

// ---------------------------------------------------------------------------
// Score files

struct SreScore {
  std::string enroll_id;
  std::string test_utt;
  double score = 0;
  bool target = false;

  friend bool operator==(const SreScore&, const SreScore&) = default;
};

struct LreDecision {
  std::string test_utt;
  std::string predicted;
  std::string truth;

  friend bool operator==(const LreDecision&, const LreDecision&) = default;
};

inline void save_sre_scores(std::ostream& out, std::span<const SreScore> scores) {
  for (const auto& s : scores)
    out << s.enroll_id << '\t' << s.test_utt << '\t' << format_double(s.score) << '\t' << (s.target ? 1 : 0) << '\n';
}

inline std::vector<SreScore> load_sre_scores(std::istream& in, const std::string& source = "<sre scores>") {
  LineReader r(in, source);
  std::vector<SreScore> out;
  std::string line;
  while (r.next_content(line)) {
    auto cols = split_on(line, '\t');
    SreScore s;
    if (cols.size() != 4 || !parse_double(cols[2], s.score) || (cols[3] != "0" && cols[3] != "1"))
      r.fail("expected 'enroll_id<TAB>test_utt<TAB>score<TAB>target'");
    s.enroll_id = std::string(cols[0]);
    s.test_utt = std::string(cols[1]);
    s.target = cols[3] == "1";
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_lre_decisions(std::ostream& out, std::span<const LreDecision> ds) {
  for (const auto& d : ds) out << d.test_utt << '\t' << d.predicted << '\t' << d.truth << '\n';
}

inline std::vector<LreDecision> load_lre_decisions(std::istream& in, const std::string& source = "<lre decisions>") {
  LineReader r(in, source);
  std::vector<LreDecision> out;
  std::string line;
  while (r.next_content(line)) {
    auto cols = split_on(line, '\t');
    if (cols.size() != 3) r.fail("expected 'test_utt<TAB>predicted<TAB>true'");
    out.push_back({std::string(cols[0]), std::string(cols[1]), std::string(cols[2])});
  }
  return out;
}

}  // namespace collab
