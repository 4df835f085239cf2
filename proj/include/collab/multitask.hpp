#pragma once

// Collaborative two-branch model. The language branch (lre) and the speaker
// branch (sre) are each an LSTMP; at step t every configured sink k of one
// branch receives
//
//   sum over sources src of  W^{dir}_{k,src} * src^{other}_{t-1}
//
// added to its pre-activation, where src is the other branch's recurrent (r)
// or non-recurrent (p) projection from the previous step. Direction "ls" feeds
// sre -> lre, "sl" feeds lre -> sre. Sink letters: i (input gate), f (forget
// gate), o (output gate), c (cell candidate, the g() non-linearity).

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "collab/blocks.hpp"
#include "collab/lstmp.hpp"

namespace collab {

enum class Sink : int { input_gate = 0, forget_gate = 1, output_gate = 2, cell_candidate = 3 };
enum class Source : int { rproj = 0, pproj = 1 };
enum class Direction : int { into_lre = 0, into_sre = 1 };

inline constexpr std::array<Sink, 4> kAllSinks{Sink::input_gate, Sink::forget_gate, Sink::output_gate,
                                              Sink::cell_candidate};
inline constexpr std::array<Source, 2> kAllSources{Source::rproj, Source::pproj};
inline constexpr std::array<Direction, 2> kAllDirections{Direction::into_lre, Direction::into_sre};

inline char sink_letter(Sink k) noexcept { return "ifoc"[static_cast<int>(k)]; }
inline char source_letter(Source s) noexcept { return "rp"[static_cast<int>(s)]; }
inline const char* direction_tag(Direction d) noexcept { return d == Direction::into_lre ? "ls" : "sl"; }

/// Name of a cross-task matrix, e.g. W_ls_cr for sre's r feeding lre's cell candidate.
inline std::string cross_name(Direction d, Sink k, Source s) {
  return std::string("W_") + direction_tag(d) + "_" + sink_letter(k) + source_letter(s);
}

struct FeedbackRouting {
  std::array<bool, 4> sinks{};
  std::array<bool, 2> sources{};

  bool has(Sink k) const noexcept { return sinks[static_cast<int>(k)]; }
  bool has(Source s) const noexcept { return sources[static_cast<int>(s)]; }
  bool enabled() const noexcept { return has(Sink::input_gate) || has(Sink::forget_gate) || has(Sink::output_gate) || has(Sink::cell_candidate); }
  bool uses(Sink k, Source s) const noexcept { return has(k) && has(s); }

  friend bool operator==(const FeedbackRouting&, const FeedbackRouting&) = default;

  void validate() const {
    if (enabled() && !has(Source::rproj) && !has(Source::pproj))
      throw ValidationError("feedback routing: sinks configured but no source");
  }

  static FeedbackRouting none() { return {}; }

  static FeedbackRouting make(std::initializer_list<Sink> ks, std::initializer_list<Source> ss) {
    FeedbackRouting r;
    for (Sink k : ks) r.sinks[static_cast<int>(k)] = true;
    for (Source s : ss) r.sources[static_cast<int>(s)] = true;
    r.validate();
    return r;
  }

  /// Parses sink lists like "i,f,o,g" (or "none") and source lists like "r,p".
  static FeedbackRouting parse(std::string_view sink_list, std::string_view source_list) {
    FeedbackRouting r;
    auto trim = [](std::string_view s) {
      while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
      while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
      return s;
    };
    sink_list = trim(sink_list);
    if (!sink_list.empty() && sink_list != "none") {
      for (auto tok : split_on(sink_list, ',')) {
        tok = trim(tok);
        if (tok == "i") r.sinks[0] = true;
        else if (tok == "f") r.sinks[1] = true;
        else if (tok == "o") r.sinks[2] = true;
        else if (tok == "g" || tok == "c") r.sinks[3] = true;
        else throw ValidationError("feedback routing: unknown sink '" + std::string(tok) + "' (use i,f,o,g)");
      }
    }
    source_list = trim(source_list);
    if (!source_list.empty() && source_list != "none") {
      for (auto tok : split_on(source_list, ',')) {
        tok = trim(tok);
        if (tok == "r") r.sources[0] = true;
        else if (tok == "p") r.sources[1] = true;
        else throw ValidationError("feedback routing: unknown source '" + std::string(tok) + "' (use r,p)");
      }
    }
    r.validate();
    return r;
  }

  std::string sinks_string() const {
    std::string s;
    const char* names[] = {"i", "f", "o", "g"};
    for (int k = 0; k < 4; ++k)
      if (sinks[k]) s += (s.empty() ? "" : ",") + std::string(names[k]);
    return s.empty() ? "none" : s;
  }

  std::string sources_string() const {
    std::string s;
    if (sources[0]) s = "r";
    if (sources[1]) s += s.empty() ? "p" : ",p";
    return s.empty() ? "none" : s;
  }
};

/// One matrix slot per (direction, sink, source); only routed slots are non-empty.
struct CrossTaskWeights {
  std::array<Matrix, 16> slots;

  static constexpr int slot(Direction d, Sink k, Source s) noexcept {
    return static_cast<int>(d) * 8 + static_cast<int>(k) * 2 + static_cast<int>(s);
  }
  Matrix& at(Direction d, Sink k, Source s) { return slots[slot(d, k, s)]; }
  const Matrix& at(Direction d, Sink k, Source s) const { return slots[slot(d, k, s)]; }
};

struct MultiTaskDims {
  LstmpDims lre;
  LstmpDims sre;

  void validate() const {
    lre.validate();
    sre.validate();
    if (lre.input != sre.input) throw ValidationError("multitask: branches must share the input dimension");
  }
};

struct MultiTaskModel {
  LstmpParams lre;
  LstmpParams sre;
  FeedbackRouting routing;
  CrossTaskWeights cross;
  std::vector<std::string> languages;
  std::vector<std::string> speakers;

  MultiTaskDims dims() const { return {lre.dims(), sre.dims()}; }

  /// Branch parameters prefixed "lre." and "sre.", then routed cross matrices.
  template <typename F>
  void for_each_block(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_block(F&& f) const {
    visit(*this, f);
  }

  /// Shapes every routed cross slot and clears the others.
  void shape_cross(const FeedbackRouting& r) {
    routing = r;
    const auto d = dims();
    for (Direction dir : kAllDirections)
      for (Sink k : kAllSinks)
        for (Source s : kAllSources) {
          Matrix& m = cross.at(dir, k, s);
          if (!r.uses(k, s)) {
            m.resize(0, 0);
            continue;
          }
          const LstmpDims& into = dir == Direction::into_lre ? d.lre : d.sre;
          const LstmpDims& from = dir == Direction::into_lre ? d.sre : d.lre;
          m.setZero(into.cell, s == Source::rproj ? from.rproj : from.pproj);
        }
  }

  void check_consistent() const {
    lre.check_consistent();
    sre.check_consistent();
    dims().validate();
    routing.validate();
    const auto d = dims();
    for (Direction dir : kAllDirections)
      for (Sink k : kAllSinks)
        for (Source s : kAllSources) {
          const Matrix& m = cross.at(dir, k, s);
          if (!routing.uses(k, s)) {
            if (m.size() != 0) throw ValidationError("multitask: unrouted cross matrix " + cross_name(dir, k, s));
            continue;
          }
          const LstmpDims& into = dir == Direction::into_lre ? d.lre : d.sre;
          const LstmpDims& from = dir == Direction::into_lre ? d.sre : d.lre;
          if (m.rows() != into.cell || m.cols() != (s == Source::rproj ? from.rproj : from.pproj))
            throw ValidationError("multitask: routing references absent or misshaped " + cross_name(dir, k, s));
        }
  }

  friend bool operator==(const MultiTaskModel& a, const MultiTaskModel& b) {
    return a.routing == b.routing && a.languages == b.languages && a.speakers == b.speakers && params_equal(a, b);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& m, F& f) {
    m.lre.for_each_block([&](std::string_view n, auto& b) { f("lre." + std::string(n), b); });
    m.sre.for_each_block([&](std::string_view n, auto& b) { f("sre." + std::string(n), b); });
    for (Direction d : kAllDirections)
      for (Sink k : kAllSinks)
        for (Source s : kAllSources)
          if (m.routing.uses(k, s)) f(cross_name(d, k, s), m.cross.at(d, k, s));
  }
};

/// Both branches random-initialized (or copied from donors), cross matrices
/// uniform in [-cross_init_scale, cross_init_scale]. Branch seeds are
/// derive_seed(seed, 1) and derive_seed(seed, 2), so a single-task model built
/// with init_params(dims, scale, derive_seed(seed, 1)) equals the lre branch.
inline MultiTaskModel init_multitask(const MultiTaskDims& dims, const FeedbackRouting& routing, double init_scale,
                                     double cross_init_scale, std::uint64_t seed,
                                     const std::optional<std::pair<LstmpParams, LstmpParams>>& warm_start = {}) {
  dims.validate();
  routing.validate();
  if (!(cross_init_scale >= 0) || !std::isfinite(cross_init_scale))
    throw ValidationError("init_multitask: cross_init_scale must be >= 0");
  MultiTaskModel m;
  if (warm_start) {
    if (warm_start->first.dims() != dims.lre || warm_start->second.dims() != dims.sre)
      throw ValidationError("init_multitask: warm-start donors do not match the requested dimensions");
    m.lre = warm_start->first;
    m.sre = warm_start->second;
  } else {
    m.lre = init_params(dims.lre, init_scale, derive_seed(seed, 1));
    m.sre = init_params(dims.sre, init_scale, derive_seed(seed, 2));
  }
  m.shape_cross(routing);
  Rng rng(derive_seed(seed, 3));
  std::uniform_real_distribution<double> uni(-cross_init_scale, cross_init_scale);
  for (auto& slot : m.cross.slots)
    for (Index j = 0; j < slot.size(); ++j) slot.data()[j] = cross_init_scale == 0 ? 0.0 : uni(rng);
  return m;
}

struct CoupledStep {
  LstmpState lre_state;
  LstmpState sre_state;
  StepOutput lre;
  StepOutput sre;
};

namespace detail {

/// Feedback term for sink k of the branch fed through `dir`, from the other branch's carry.
inline std::optional<Vector> feedback(const MultiTaskModel& m, Direction dir, Sink k, const LstmpState& other) {
  std::optional<Vector> v;
  if (m.routing.uses(k, Source::rproj)) v = m.cross.at(dir, k, Source::rproj) * other.r;
  if (m.routing.uses(k, Source::pproj)) {
    if (v) *v += m.cross.at(dir, k, Source::pproj) * other.p;
    else v = m.cross.at(dir, k, Source::pproj) * other.p;
  }
  return v;
}

inline GateShifts as_shifts(const std::array<std::optional<Vector>, 4>& v) {
  auto ptr = [&](Sink k) { return v[static_cast<int>(k)] ? &*v[static_cast<int>(k)] : nullptr; };
  return {ptr(Sink::input_gate), ptr(Sink::forget_gate), ptr(Sink::cell_candidate), ptr(Sink::output_gate)};
}

}  // namespace detail

/// One coupled step. Both branches read only the other's previous-step carry.
inline CoupledStep mt_step(const MultiTaskModel& m, const LstmpState& state_l, const LstmpState& state_s,
                           const Eigen::Ref<const Vector>& x, Index t = -1) {
  if (state_l.p.size() != m.lre.W_pm.rows() || state_s.p.size() != m.sre.W_pm.rows() ||
      state_l.r.size() != m.lre.W_rm.rows() || state_s.r.size() != m.sre.W_rm.rows())
    throw ValidationError("mt_step: state dimension mismatch");
  std::array<std::optional<Vector>, 4> into_l, into_s;
  for (Sink k : kAllSinks) {
    into_l[static_cast<int>(k)] = detail::feedback(m, Direction::into_lre, k, state_s);
    into_s[static_cast<int>(k)] = detail::feedback(m, Direction::into_sre, k, state_l);
  }
  auto [next_l, out_l] = step_shifted(m.lre, state_l, x, detail::as_shifts(into_l), t);
  auto [next_s, out_s] = step_shifted(m.sre, state_s, x, detail::as_shifts(into_s), t);
  return {std::move(next_l), std::move(next_s), std::move(out_l), std::move(out_s)};
}

struct CoupledOutputs {
  std::vector<StepOutput> lre;
  std::vector<StepOutput> sre;
};

inline CoupledOutputs mt_forward(const MultiTaskModel& m, const FrameMatrix& frames) {
  if (frames.cols() != m.lre.W_ix.cols())
    throw ValidationError("mt_forward: frame dimension " + std::to_string(frames.cols()) + " != model input " +
                          std::to_string(m.lre.W_ix.cols()));
  const auto d = m.dims();
  LstmpState sl = LstmpState::zeros(d.lre), ss = LstmpState::zeros(d.sre);
  CoupledOutputs out;
  out.lre.reserve(frames.rows());
  out.sre.reserve(frames.rows());
  for (Index t = 0; t < frames.rows(); ++t) {
    auto st = mt_step(m, sl, ss, frames.row(t).transpose(), t);
    sl = std::move(st.lre_state);
    ss = std::move(st.sre_state);
    out.lre.push_back(std::move(st.lre));
    out.sre.push_back(std::move(st.sre));
  }
  return out;
}

}  // namespace collab
