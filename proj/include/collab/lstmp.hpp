#pragma once

// Projected LSTM (LSTMP) with a recurrent projection r_t and a non-recurrent
// projection p_t:
//
//   i_t = sigmoid(W_ix x_t + W_ir r_{t-1} + w_ic . c_{t-1} + b_i)
//   f_t = sigmoid(W_fx x_t + W_fr r_{t-1} + w_fc . c_{t-1} + b_f)
//   c_t = f_t . c_{t-1} + i_t . tanh(W_cx x_t + W_cr r_{t-1} + b_c)
//   o_t = sigmoid(W_ox x_t + W_or r_{t-1} + w_oc . c_t + b_o)
//   m_t = o_t . tanh(c_t)
//   r_t = W_rm m_t,  p_t = W_pm m_t
//   y_t = W_yr r_t + W_yp p_t + b_y
//
// Peephole weights are diagonal and stored as vectors. y_t are logits.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "collab/blocks.hpp"
#include "collab/common.hpp"

namespace collab {

struct LstmpDims {
  Index input = 0;
  Index cell = 0;
  Index rproj = 0;
  Index pproj = 0;
  Index out = 0;

  friend bool operator==(const LstmpDims&, const LstmpDims&) = default;

  void validate() const {
    if (input < 1 || cell < 1 || rproj < 1 || pproj < 1 || out < 1)
      throw ValidationError("lstmp dims must all be >= 1 (input=" + std::to_string(input) +
                            " cell=" + std::to_string(cell) + " rproj=" + std::to_string(rproj) +
                            " pproj=" + std::to_string(pproj) + " out=" + std::to_string(out) + ")");
  }
};

struct LstmpParams {
  Matrix W_ix, W_fx, W_cx, W_ox;  // cell x input
  Matrix W_ir, W_fr, W_cr, W_or;  // cell x rproj
  Vector w_ic, w_fc, w_oc;        // diagonal peepholes
  Vector b_i, b_f, b_c, b_o;
  Matrix W_rm;  // rproj x cell
  Matrix W_pm;  // pproj x cell
  Matrix W_yr;  // out x rproj
  Matrix W_yp;  // out x pproj
  Vector b_y;

  static LstmpParams zeros(const LstmpDims& d) {
    d.validate();
    LstmpParams p;
    for (Matrix* m : {&p.W_ix, &p.W_fx, &p.W_cx, &p.W_ox}) m->setZero(d.cell, d.input);
    for (Matrix* m : {&p.W_ir, &p.W_fr, &p.W_cr, &p.W_or}) m->setZero(d.cell, d.rproj);
    for (Vector* v : {&p.w_ic, &p.w_fc, &p.w_oc, &p.b_i, &p.b_f, &p.b_c, &p.b_o}) v->setZero(d.cell);
    p.W_rm.setZero(d.rproj, d.cell);
    p.W_pm.setZero(d.pproj, d.cell);
    p.W_yr.setZero(d.out, d.rproj);
    p.W_yp.setZero(d.out, d.pproj);
    p.b_y.setZero(d.out);
    return p;
  }

  LstmpDims dims() const { return {W_ix.cols(), W_ix.rows(), W_rm.rows(), W_pm.rows(), b_y.size()}; }

  /// Visits every parameter block in serialization order as f(name, block).
  template <typename F>
  void for_each_block(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_block(F&& f) const {
    visit(*this, f);
  }

  /// Throws ValidationError unless every block matches dims().
  void check_consistent() const {
    const auto d = dims();
    d.validate();
    auto shape = [](const auto& m, Index r, Index c, const char* name) {
      if (m.rows() != r || m.cols() != c) throw ValidationError(std::string("lstmp: inconsistent shape of ") + name);
    };
    shape(W_fx, d.cell, d.input, "W_fx");
    shape(W_cx, d.cell, d.input, "W_cx");
    shape(W_ox, d.cell, d.input, "W_ox");
    shape(W_ir, d.cell, d.rproj, "W_ir");
    shape(W_fr, d.cell, d.rproj, "W_fr");
    shape(W_cr, d.cell, d.rproj, "W_cr");
    shape(W_or, d.cell, d.rproj, "W_or");
    for (const Vector* v : {&w_ic, &w_fc, &w_oc, &b_i, &b_f, &b_c, &b_o})
      if (v->size() != d.cell) throw ValidationError("lstmp: inconsistent cell-sized vector");
    shape(W_rm, d.rproj, d.cell, "W_rm");
    shape(W_pm, d.pproj, d.cell, "W_pm");
    shape(W_yr, d.out, d.rproj, "W_yr");
    shape(W_yp, d.out, d.pproj, "W_yp");
  }

  friend bool operator==(const LstmpParams& a, const LstmpParams& b) { return params_equal(a, b); }

 private:
  template <typename Self, typename F>
  static void visit(Self& p, F& f) {
    f("W_ix", p.W_ix);
    f("W_fx", p.W_fx);
    f("W_cx", p.W_cx);
    f("W_ox", p.W_ox);
    f("W_ir", p.W_ir);
    f("W_fr", p.W_fr);
    f("W_cr", p.W_cr);
    f("W_or", p.W_or);
    f("w_ic", p.w_ic);
    f("w_fc", p.w_fc);
    f("w_oc", p.w_oc);
    f("b_i", p.b_i);
    f("b_f", p.b_f);
    f("b_c", p.b_c);
    f("b_o", p.b_o);
    f("W_rm", p.W_rm);
    f("W_pm", p.W_pm);
    f("W_yr", p.W_yr);
    f("W_yp", p.W_yp);
    f("b_y", p.b_y);
  }
};

/// Per-step carry. `p` is the previous non-recurrent projection; the single-task
/// recursion never reads it, the cross-task feedback does.
struct LstmpState {
  Vector c;
  Vector r;
  Vector p;

  static LstmpState zeros(const LstmpDims& d) {
    return {Vector::Zero(d.cell), Vector::Zero(d.rproj), Vector::Zero(d.pproj)};
  }
};

/// Everything a step computes; pre_* are gate pre-activations.
struct StepOutput {
  Vector pre_i, pre_f, pre_g, pre_o;
  Vector i, f, g, o;
  Vector c, hc, m, r, p, y;
};

/// Additive terms for the four gate pre-activations; null means none.
struct GateShifts {
  const Vector* input_gate = nullptr;
  const Vector* forget_gate = nullptr;
  const Vector* cell_candidate = nullptr;
  const Vector* output_gate = nullptr;
};

inline LstmpParams init_params(const LstmpDims& dims, double init_scale, std::uint64_t seed) {
  if (!(init_scale >= 0) || !std::isfinite(init_scale)) throw ValidationError("init_params: init_scale must be >= 0");
  LstmpParams p = LstmpParams::zeros(dims);
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(-init_scale, init_scale);
  p.for_each_block([&](std::string_view, auto& block) {
    for (Index k = 0; k < block.size(); ++k) block.data()[k] = init_scale == 0 ? 0.0 : uni(rng);
  });
  return p;
}

namespace detail {

inline void check_finite(const Eigen::Ref<const Vector>& v, const char* what, Index t) {
  if (!v.allFinite())
    throw NumericError(std::string("non-finite ") + what + (t >= 0 ? " at step " + std::to_string(t) : ""));
}

}  // namespace detail

/// One step of the recursion with optional extra gate pre-activation terms.
/// The shift is added after the single-task pre-activation is formed, so a
/// zero shift reproduces the plain step bit for bit.
inline std::pair<LstmpState, StepOutput> step_shifted(const LstmpParams& P, const LstmpState& s,
                                                      const Eigen::Ref<const Vector>& x, const GateShifts& shift,
                                                      Index t = -1) {
  if (x.size() != P.W_ix.cols())
    throw ValidationError("lstmp step: input has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(P.W_ix.cols()));
  if (s.c.size() != P.W_ix.rows() || s.r.size() != P.W_ir.cols())
    throw ValidationError("lstmp step: state dimension mismatch");
  detail::check_finite(x, "input frame", t);

  StepOutput o;
  o.pre_i = P.W_ix * x + P.W_ir * s.r + P.w_ic.cwiseProduct(s.c) + P.b_i;
  if (shift.input_gate) o.pre_i += *shift.input_gate;
  o.i = sigmoid(o.pre_i);

  o.pre_f = P.W_fx * x + P.W_fr * s.r + P.w_fc.cwiseProduct(s.c) + P.b_f;
  if (shift.forget_gate) o.pre_f += *shift.forget_gate;
  o.f = sigmoid(o.pre_f);

  o.pre_g = P.W_cx * x + P.W_cr * s.r + P.b_c;
  if (shift.cell_candidate) o.pre_g += *shift.cell_candidate;
  o.g = tanh(o.pre_g);

  o.c = o.f.cwiseProduct(s.c) + o.i.cwiseProduct(o.g);

  o.pre_o = P.W_ox * x + P.W_or * s.r + P.w_oc.cwiseProduct(o.c) + P.b_o;
  if (shift.output_gate) o.pre_o += *shift.output_gate;
  o.o = sigmoid(o.pre_o);

  o.hc = tanh(o.c);
  o.m = o.o.cwiseProduct(o.hc);
  o.r = P.W_rm * o.m;
  o.p = P.W_pm * o.m;
  o.y = P.W_yr * o.r + P.W_yp * o.p + P.b_y;

  detail::check_finite(o.c, "cell state", t);
  detail::check_finite(o.y, "output", t);
  return {LstmpState{o.c, o.r, o.p}, std::move(o)};
}

inline std::pair<LstmpState, StepOutput> step(const LstmpParams& params, const LstmpState& state,
                                              const Eigen::Ref<const Vector>& x) {
  return step_shifted(params, state, x, {});
}

/// Runs the recursion from the zero state over every frame.
inline std::vector<StepOutput> forward_sequence(const LstmpParams& params, const FrameMatrix& frames) {
  if (frames.cols() != params.W_ix.cols())
    throw ValidationError("forward_sequence: frame dimension " + std::to_string(frames.cols()) + " != model input " +
                          std::to_string(params.W_ix.cols()));
  std::vector<StepOutput> out;
  out.reserve(frames.rows());
  LstmpState state = LstmpState::zeros(params.dims());
  for (Index t = 0; t < frames.rows(); ++t) {
    auto [next, o] = step_shifted(params, state, frames.row(t).transpose(), {}, t);
    state = std::move(next);
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace collab
