#pragma once

// Frame-level cross-entropy, exact backpropagation through time for the
// single-task and coupled recursions, SGD with momentum, and a central
// finite-difference gradient check.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "collab/blocks.hpp"
#include "collab/features.hpp"
#include "collab/lstmp.hpp"
#include "collab/models.hpp"
#include "collab/multitask.hpp"

namespace collab {

struct LossSpec {
  double lre_weight = 1.0;
  double sre_weight = 1.0;

  void validate() const {
    if (!(lre_weight >= 0) || !(sre_weight >= 0) || !std::isfinite(lre_weight) || !std::isfinite(sre_weight))
      throw ValidationError("loss spec: task weights must be finite and >= 0");
    if (!(lre_weight + sre_weight > 0)) throw ValidationError("loss spec: task weights must not both be zero");
  }
  double weight(Task t) const noexcept { return t == Task::language ? lre_weight : sre_weight; }
};

/// Frame labels; every frame of an utterance carries the utterance's labels.
struct SequenceLabels {
  int language = -1;
  int speaker = -1;
};

inline Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// -log softmax(logits)[label], computed stably.
inline double cross_entropy(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw ValidationError("label index " + std::to_string(label) + " out of range [0, " +
                          std::to_string(logits.size()) + ")");
  const double mx = logits.maxCoeff();
  return mx + std::log((logits.array() - mx).exp().sum()) - logits[label];
}

/// lre_weight * CE(lang) + sre_weight * CE(spk) for one frame.
inline double frame_loss(const Vector& logits_l, const Vector& logits_s, SequenceLabels labels, const LossSpec& spec) {
  double loss = 0;
  if (spec.lre_weight != 0) loss += spec.lre_weight * cross_entropy(logits_l, labels.language);
  if (spec.sre_weight != 0) loss += spec.sre_weight * cross_entropy(logits_s, labels.speaker);
  return loss;
}

namespace detail {

inline void check_label(int label, Index classes, const char* task) {
  if (label < 0 || label >= classes)
    throw ValidationError(std::string(task) + " label index " + std::to_string(label) + " out of range [0, " +
                          std::to_string(classes) + ")");
}

/// Reverse-time accumulator for one branch. step_back(t) must be called for
/// t = T-1 down to 0; the cross-task coordinator may add to the carries
/// between calls.
class BranchTape {
 public:
  BranchTape(const LstmpParams& P, const std::vector<StepOutput>& outs, const char* name)
      : P_(P), outs_(outs), name_(name) {
    const auto d = P.dims();
    const Index T = static_cast<Index>(outs.size());
    for (Matrix* m : {&DA_i, &DA_f, &DA_g, &DA_o}) m->setZero(d.cell, T);
    DR.setZero(d.rproj, T);
    DP.setZero(d.pproj, T);
    DY.setZero(d.out, T);
    dr_carry = Vector::Zero(d.rproj);
    dp_carry = Vector::Zero(d.pproj);
    dc_carry = Vector::Zero(d.cell);
  }

  /// Sets dLoss/dy_t for the cross-entropy of every frame; returns the summed loss.
  double set_output_grads(int label, double weight, double scale) {
    double loss = 0;
    for (Index t = 0; t < DY.cols(); ++t) {
      const Vector& y = outs_[t].y;
      loss += weight * cross_entropy(y, label);
      Vector g = softmax(y);
      g[label] -= 1.0;
      DY.col(t) = (weight * scale) * g;
    }
    return loss;
  }

  void step_back(Index t) {
    const StepOutput& o = outs_[t];
    const Index cell = P_.W_ix.rows();
    const Vector c_prev = t > 0 ? outs_[t - 1].c : Vector::Zero(cell);

    const Vector dr = P_.W_yr.transpose() * DY.col(t) + dr_carry;
    const Vector dp = P_.W_yp.transpose() * DY.col(t) + dp_carry;
    DR.col(t) = dr;
    DP.col(t) = dp;
    const Vector dm = P_.W_rm.transpose() * dr + P_.W_pm.transpose() * dp;

    const Vector ones = Vector::Ones(cell);
    const Vector da_o = dm.cwiseProduct(o.hc).cwiseProduct(o.o).cwiseProduct(ones - o.o);
    const Vector dc = dm.cwiseProduct(o.o).cwiseProduct(ones - o.hc.cwiseAbs2()) + dc_carry + P_.w_oc.cwiseProduct(da_o);
    const Vector da_i = dc.cwiseProduct(o.g).cwiseProduct(o.i).cwiseProduct(ones - o.i);
    const Vector da_f = dc.cwiseProduct(c_prev).cwiseProduct(o.f).cwiseProduct(ones - o.f);
    const Vector da_g = dc.cwiseProduct(o.i).cwiseProduct(ones - o.g.cwiseAbs2());

    DA_i.col(t) = da_i;
    DA_f.col(t) = da_f;
    DA_g.col(t) = da_g;
    DA_o.col(t) = da_o;

    dc_carry = dc.cwiseProduct(o.f) + P_.w_ic.cwiseProduct(da_i) + P_.w_fc.cwiseProduct(da_f);
    dr_carry = P_.W_ir.transpose() * da_i + P_.W_fr.transpose() * da_f + P_.W_cr.transpose() * da_g +
               P_.W_or.transpose() * da_o;
    dp_carry.setZero();

    if (!dc_carry.allFinite() || !dr_carry.allFinite())
      throw NumericError(std::string("non-finite gradient in ") + name_ + " branch at step " + std::to_string(t));
  }

  const Matrix& da(Sink k) const {
    switch (k) {
      case Sink::input_gate: return DA_i;
      case Sink::forget_gate: return DA_f;
      case Sink::output_gate: return DA_o;
      case Sink::cell_candidate: return DA_g;
    }
    return DA_i;
  }

  /// Column t holds the projection emitted at step t-1 (zero for t = 0).
  Matrix previous(Source s) const {
    const Index n = s == Source::rproj ? P_.W_rm.rows() : P_.W_pm.rows();
    Matrix out = Matrix::Zero(n, static_cast<Index>(outs_.size()));
    for (std::size_t t = 1; t < outs_.size(); ++t) out.col(t) = s == Source::rproj ? outs_[t - 1].r : outs_[t - 1].p;
    return out;
  }

  /// Adds the parameter gradients implied by the recorded deltas.
  void accumulate(const FrameMatrix& X, LstmpParams& G) const {
    const Index T = static_cast<Index>(outs_.size());
    const auto d = P_.dims();
    Matrix C(d.cell, T), Cprev = Matrix::Zero(d.cell, T), M(d.cell, T), R(d.rproj, T), Pm(d.pproj, T);
    for (Index t = 0; t < T; ++t) {
      C.col(t) = outs_[t].c;
      if (t > 0) Cprev.col(t) = outs_[t - 1].c;
      M.col(t) = outs_[t].m;
      R.col(t) = outs_[t].r;
      Pm.col(t) = outs_[t].p;
    }
    const Matrix Rprev = previous(Source::rproj);

    G.W_ix.noalias() += DA_i * X;
    G.W_fx.noalias() += DA_f * X;
    G.W_cx.noalias() += DA_g * X;
    G.W_ox.noalias() += DA_o * X;
    G.W_ir.noalias() += DA_i * Rprev.transpose();
    G.W_fr.noalias() += DA_f * Rprev.transpose();
    G.W_cr.noalias() += DA_g * Rprev.transpose();
    G.W_or.noalias() += DA_o * Rprev.transpose();
    G.w_ic += DA_i.cwiseProduct(Cprev).rowwise().sum();
    G.w_fc += DA_f.cwiseProduct(Cprev).rowwise().sum();
    G.w_oc += DA_o.cwiseProduct(C).rowwise().sum();
    G.b_i += DA_i.rowwise().sum();
    G.b_f += DA_f.rowwise().sum();
    G.b_c += DA_g.rowwise().sum();
    G.b_o += DA_o.rowwise().sum();
    G.W_rm.noalias() += DR * M.transpose();
    G.W_pm.noalias() += DP * M.transpose();
    G.W_yr.noalias() += DY * R.transpose();
    G.W_yp.noalias() += DY * Pm.transpose();
    G.b_y += DY.rowwise().sum();
  }

  Matrix DA_i, DA_f, DA_g, DA_o;
  Matrix DR, DP, DY;
  Vector dr_carry, dp_carry, dc_carry;

 private:
  const LstmpParams& P_;
  const std::vector<StepOutput>& outs_;
  const char* name_;
};

template <typename Model>
void check_gradient_finite(const Model& grad) {
  auto bad = first_non_finite_block(grad);
  if (!bad.empty()) throw NumericError("non-finite gradient in block " + bad);
}

}  // namespace detail

/// Adds scale * dLoss/dparams to `grad` and returns the unscaled summed frame
/// loss, where Loss = sum_t weight * CE(softmax(y_t), label).
inline double backward_sequence(const LstmpParams& params, const FrameMatrix& X, int label, double weight,
                                double scale, LstmpParams& grad) {
  const auto outs = forward_sequence(params, X);
  if (outs.empty()) throw ValidationError("backward_sequence: empty sequence");
  detail::check_label(label, params.dims().out, "output");
  detail::BranchTape tape(params, outs, "single-task");
  const double loss = tape.set_output_grads(label, weight, scale);
  for (Index t = static_cast<Index>(outs.size()) - 1; t >= 0; --t) tape.step_back(t);
  tape.accumulate(X, grad);
  detail::check_gradient_finite(grad);
  return loss;
}

inline double backward_sequence(const SingleTaskModel& m, const FrameMatrix& X, SequenceLabels labels,
                                const LossSpec& spec, double scale, SingleTaskModel& grad) {
  const int label = m.task == Task::language ? labels.language : labels.speaker;
  return backward_sequence(m.params, X, label, spec.weight(m.task), scale, grad.params);
}

/// Gradient of lre_weight * sum_t CE_l + sre_weight * sum_t CE_s through both
/// branches and every routed cross-task path.
inline double backward_sequence(const MultiTaskModel& m, const FrameMatrix& X, SequenceLabels labels,
                                const LossSpec& spec, double scale, MultiTaskModel& grad) {
  const auto outs = mt_forward(m, X);
  const Index T = static_cast<Index>(outs.lre.size());
  if (T == 0) throw ValidationError("backward_sequence: empty sequence");
  const auto d = m.dims();
  detail::BranchTape tl(m.lre, outs.lre, "lre"), ts(m.sre, outs.sre, "sre");
  double loss = 0;
  if (spec.lre_weight != 0) {
    detail::check_label(labels.language, d.lre.out, "language");
    loss += tl.set_output_grads(labels.language, spec.lre_weight, scale);
  }
  if (spec.sre_weight != 0) {
    detail::check_label(labels.speaker, d.sre.out, "speaker");
    loss += ts.set_output_grads(labels.speaker, spec.sre_weight, scale);
  }

  for (Index t = T - 1; t >= 0; --t) {
    tl.step_back(t);
    ts.step_back(t);
    if (t == 0) break;
    for (Sink k : kAllSinks)
      for (Source s : kAllSources) {
        if (!m.routing.uses(k, s)) continue;
        // lre's pre-activation at t read sre's projection from t-1, and vice versa.
        const Vector into_l = m.cross.at(Direction::into_lre, k, s).transpose() * tl.da(k).col(t);
        const Vector into_s = m.cross.at(Direction::into_sre, k, s).transpose() * ts.da(k).col(t);
        (s == Source::rproj ? ts.dr_carry : ts.dp_carry) += into_l;
        (s == Source::rproj ? tl.dr_carry : tl.dp_carry) += into_s;
      }
  }

  tl.accumulate(X, grad.lre);
  ts.accumulate(X, grad.sre);
  for (Sink k : kAllSinks)
    for (Source s : kAllSources) {
      if (!m.routing.uses(k, s)) continue;
      grad.cross.at(Direction::into_lre, k, s).noalias() += tl.da(k) * ts.previous(s).transpose();
      grad.cross.at(Direction::into_sre, k, s).noalias() += ts.da(k) * tl.previous(s).transpose();
    }
  detail::check_gradient_finite(grad);
  return loss;
}

/// Summed frame loss from a forward pass only.
inline double sequence_loss(const SingleTaskModel& m, const FrameMatrix& X, SequenceLabels labels,
                            const LossSpec& spec) {
  const int label = m.task == Task::language ? labels.language : labels.speaker;
  double loss = 0;
  for (const auto& o : forward_sequence(m.params, X)) loss += spec.weight(m.task) * cross_entropy(o.y, label);
  return loss;
}

inline double sequence_loss(const MultiTaskModel& m, const FrameMatrix& X, SequenceLabels labels,
                            const LossSpec& spec) {
  const auto outs = mt_forward(m, X);
  double loss = 0;
  for (std::size_t t = 0; t < outs.lre.size(); ++t) loss += frame_loss(outs.lre[t].y, outs.sre[t].y, labels, spec);
  return loss;
}

/// Mean frame loss over a batch of sequences.
template <typename Model>
double batch_loss(const Model& m, std::span<const FrameMatrix* const> seqs, std::span<const SequenceLabels> labels,
                  const LossSpec& spec) {
  double sum = 0;
  Index frames = 0;
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    sum += sequence_loss(m, *seqs[k], labels[k], spec);
    frames += seqs[k]->rows();
  }
  if (frames == 0) throw ValidationError("batch_loss: empty batch");
  return sum / static_cast<double>(frames);
}

// ---------------------------------------------------------------------------
// Optimization

struct OptimizerSpec {
  double learning_rate = 0.1;
  double momentum = 0.9;
  int batch_size = 8;
  int epochs = 20;
  double lr_decay = 1.0;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;

  void validate() const {
    // lr = 0 is accepted so that a run can be a pure evaluation pass.
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
      throw ValidationError("optimizer: learning_rate must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw ValidationError("optimizer: momentum must lie in [0, 1)");
    if (batch_size < 1) throw ValidationError("optimizer: batch_size must be >= 1");
    if (epochs < 0) throw ValidationError("optimizer: epochs must be >= 0");
    if (!(lr_decay > 0) || !std::isfinite(lr_decay)) throw ValidationError("optimizer: lr_decay must be > 0");
  }
};

/// Classical momentum: v <- momentum * v - lr * g; params <- params + v.
template <typename Model>
void sgd_step(Model& params, const Model& grads, Model& velocity, double learning_rate, double momentum) {
  auto p = block_refs(params);
  auto g = block_refs(grads);
  auto v = block_refs(velocity);
  for (std::size_t k = 0; k < p.size(); ++k)
    for (Index j = 0; j < p[k].size(); ++j) {
      v[k].data[j] = momentum * v[k].data[j] - learning_rate * g[k].data[j];
      p[k].data[j] += v[k].data[j];
    }
}

/// Rescales to the given global norm when exceeded; returns the norm before clipping.
template <typename Model>
double clip_global_norm(Model& grads, double max_norm) {
  const double n = global_norm(grads);
  if (max_norm > 0 && n > max_norm) scale(grads, max_norm / n);
  return n;
}

/// Single-branch models clip by their global norm.
template <typename Model>
void clip_gradients(Model& grads, double max_norm) {
  clip_global_norm(grads, max_norm);
}

/// The coupled model clips each branch together with the cross matrices that
/// feed its gates, so a model with no routed feedback takes exactly the updates
/// of two independently trained single-task models.
inline void clip_gradients(MultiTaskModel& grads, double max_norm) {
  if (!(max_norm > 0)) return;
  for (Direction d : kAllDirections) {
    LstmpParams& branch = d == Direction::into_lre ? grads.lre : grads.sre;
    double sq = 0;
    branch.for_each_block([&](std::string_view, const auto& b) { sq += b.squaredNorm(); });
    for (Sink k : kAllSinks)
      for (Source s : kAllSources)
        if (grads.routing.uses(k, s)) sq += grads.cross.at(d, k, s).squaredNorm();
    const double n = std::sqrt(sq);
    if (n <= max_norm) continue;
    const double f = max_norm / n;
    branch.for_each_block([&](std::string_view, auto& b) { b *= f; });
    for (Sink k : kAllSinks)
      for (Source s : kAllSources)
        if (grads.routing.uses(k, s)) grads.cross.at(d, k, s) *= f;
  }
}

enum class Curriculum { full_length, cropped };

struct CurriculumSpec {
  Curriculum mode = Curriculum::full_length;
  Index crop_frames = 100;
};

struct TrainingExample {
  const FrameMatrix* frames = nullptr;
  SequenceLabels labels;
};

struct TrainTrace {
  std::vector<double> epoch_loss;  // mean frame loss seen during each epoch
};

/// Training examples for every train-split utterance, labels indexed into the given tables.
inline std::vector<TrainingExample> make_training_set(const Corpus& corpus, const std::vector<std::string>& languages,
                                                      const std::vector<std::string>& speakers) {
  std::vector<TrainingExample> out;
  auto index_of = [](const std::vector<std::string>& table, const std::string& v, const char* what) {
    auto it = std::find(table.begin(), table.end(), v);
    if (it == table.end()) throw ValidationError(std::string("training: ") + what + " '" + v + "' not in model label table");
    return static_cast<int>(it - table.begin());
  };
  for (std::size_t i : corpus.indices(Split::train)) {
    const auto& e = corpus.manifest.entries[i];
    TrainingExample ex{&corpus.sequences[i].frames, {}};
    ex.labels.language = languages.empty() ? -1 : index_of(languages, e.language, "language");
    ex.labels.speaker = speakers.empty() ? -1 : index_of(speakers, e.speaker, "speaker");
    out.push_back(ex);
  }
  return out;
}

/// Mini-batch SGD with momentum over shuffled examples. Every random choice
/// (order, crop windows) derives from optimizer.seed, so the result is a pure
/// function of its inputs.
template <typename Model>
TrainTrace train(Model& model, const std::vector<TrainingExample>& examples, const LossSpec& loss,
                 const OptimizerSpec& opt, const CurriculumSpec& curriculum = {}) {
  loss.validate();
  opt.validate();
  if (examples.empty()) throw ValidationError("train: empty corpus");
  if (curriculum.mode == Curriculum::cropped && curriculum.crop_frames < 1)
    throw ValidationError("train: crop_frames must be >= 1");

  TrainTrace trace;
  Model velocity = zeros_like(model);
  Model grad = zeros_like(model);
  std::vector<std::size_t> order(examples.size());
  double lr = opt.learning_rate;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(opt.seed, 100, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    Index epoch_frames = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      std::vector<FrameMatrix> cropped;
      std::vector<const FrameMatrix*> batch;
      cropped.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const FrameMatrix& X = *examples[order[k]].frames;
        if (curriculum.mode == Curriculum::cropped && X.rows() > curriculum.crop_frames) {
          Rng crop_rng(derive_seed(opt.seed, 200 + epoch, order[k]));
          Index off = std::uniform_int_distribution<Index>(0, X.rows() - curriculum.crop_frames)(crop_rng);
          cropped.push_back(X.middleRows(off, curriculum.crop_frames));
          batch.push_back(&cropped.back());
        } else {
          batch.push_back(&X);
        }
      }
      Index frames = 0;
      for (auto* X : batch) frames += X->rows();
      set_zero(grad);
      for (std::size_t k = 0; k < batch.size(); ++k)
        epoch_loss += backward_sequence(model, *batch[k], examples[order[start + k]].labels, loss,
                                        1.0 / static_cast<double>(frames), grad);
      epoch_frames += frames;
      clip_gradients(grad, opt.clip_norm);
      sgd_step(model, grad, velocity, lr, opt.momentum);
    }
    trace.epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_frames));
    lr *= opt.lr_decay;
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckSpec {
  Index input = 4;
  Index cell = 5;
  Index rproj = 3;
  Index pproj = 3;
  Index n_languages = 2;
  Index n_speakers = 3;
  FeedbackRouting routing = FeedbackRouting::make({Sink::input_gate, Sink::forget_gate, Sink::output_gate,
                                                   Sink::cell_candidate},
                                                  {Source::rproj, Source::pproj});
  Index frames = 7;
  double init_scale = 0.5;
  double cross_init_scale = 0.5;
  double epsilon = 1e-4;
  LossSpec loss;
  std::uint64_t seed = 1;
};

struct BlockError {
  std::string name;
  double max_relative_error = 0;
  double max_abs_gradient = 0;
};

struct GradReport {
  std::vector<BlockError> blocks;
  double max_relative_error = 0;
};

/// Entrywise |a - n| / max(|a|, |n|, floor); the floor keeps entries whose true
/// value is ~0 from dividing round-off by round-off.
inline constexpr double kGradcheckFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
}

/// Compares the analytic gradient of any model with central differences.
template <typename Model>
GradReport gradcheck_model(Model model, const FrameMatrix& X, SequenceLabels labels, const LossSpec& loss,
                           double epsilon) {
  Model grad = zeros_like(model);
  backward_sequence(model, X, labels, loss, 1.0, grad);
  GradReport report;
  auto p = block_refs(model);
  auto g = block_refs(std::as_const(grad));
  for (std::size_t k = 0; k < p.size(); ++k) {
    BlockError be{p[k].name, 0, 0};
    for (Index j = 0; j < p[k].size(); ++j) {
      const double saved = p[k].data[j];
      p[k].data[j] = saved + epsilon;
      const double up = sequence_loss(model, X, labels, loss);
      p[k].data[j] = saved - epsilon;
      const double down = sequence_loss(model, X, labels, loss);
      p[k].data[j] = saved;
      const double numeric = (up - down) / (2 * epsilon);
      be.max_relative_error = std::max(be.max_relative_error, relative_error(g[k].data[j], numeric));
      be.max_abs_gradient = std::max(be.max_abs_gradient, std::abs(g[k].data[j]));
    }
    report.max_relative_error = std::max(report.max_relative_error, be.max_relative_error);
    report.blocks.push_back(std::move(be));
  }
  return report;
}

/// Builds a random tiny coupled model, sequence and labels and checks its gradient.
inline GradReport gradcheck(const GradcheckSpec& spec) {
  if (spec.cell > 16) throw ValidationError("gradcheck: cell must be <= 16");
  if (spec.frames < 1) throw ValidationError("gradcheck: frames must be >= 1");
  MultiTaskDims dims{{spec.input, spec.cell, spec.rproj, spec.pproj, spec.n_languages},
                     {spec.input, spec.cell, spec.rproj, spec.pproj, spec.n_speakers}};
  MultiTaskModel m = init_multitask(dims, spec.routing, spec.init_scale, spec.cross_init_scale, spec.seed);
  Rng rng(derive_seed(spec.seed, 4));
  std::normal_distribution<double> normal(0.0, 1.0);
  FrameMatrix X(spec.frames, spec.input);
  for (Index j = 0; j < X.size(); ++j) X.data()[j] = normal(rng);
  SequenceLabels labels{std::uniform_int_distribution<int>(0, spec.n_languages - 1)(rng),
                        std::uniform_int_distribution<int>(0, spec.n_speakers - 1)(rng)};
  return gradcheck_model(std::move(m), X, labels, spec.loss, spec.epsilon);
}

}  // namespace collab
