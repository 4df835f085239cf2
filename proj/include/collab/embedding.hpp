#pragma once

// r-vectors: the frame average of concat(r_t, p_t) of one branch.
//
// Archive: one line per vector, `utt_id task dim v1 ... vdim`.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "collab/lstmp.hpp"
#include "collab/models.hpp"
#include "collab/multitask.hpp"

namespace collab {

struct RVector {
  std::string utt_id;
  Task task = Task::speaker;
  Vector values;

  friend bool operator==(const RVector& a, const RVector& b) {
    return a.utt_id == b.utt_id && a.task == b.task && a.values.size() == b.values.size() && a.values == b.values;
  }
};

struct EnrollModel {
  std::string label;
  Vector centroid;
  int n_utts = 0;
};

/// Mean over t of concat(r_t, p_t).
inline Vector rvector_from_steps(std::span<const StepOutput> steps) {
  if (steps.empty()) throw ValidationError("extract_rvector: empty sequence");
  const Index nr = steps.front().r.size(), np = steps.front().p.size();
  Vector sum = Vector::Zero(nr + np);
  for (const auto& s : steps) {
    sum.head(nr) += s.r;
    sum.tail(np) += s.p;
  }
  return sum / static_cast<double>(steps.size());
}

inline RVector extract_rvector(const SingleTaskModel& m, const FeatureSequence& seq) {
  if (seq.num_frames() == 0) throw ValidationError("extract_rvector: empty sequence");
  return {seq.utt_id, m.task, rvector_from_steps(forward_sequence(m.params, seq.frames))};
}

/// Runs the full coupled recursion and averages the requested branch.
inline RVector extract_rvector(const MultiTaskModel& m, Task branch, const FeatureSequence& seq) {
  if (seq.num_frames() == 0) throw ValidationError("extract_rvector: empty sequence");
  auto outs = mt_forward(m, seq.frames);
  return {seq.utt_id, branch, rvector_from_steps(branch == Task::language ? outs.lre : outs.sre)};
}

/// Centroid per label; labels are returned in sorted order.
inline std::vector<EnrollModel> enroll(const std::map<std::string, std::vector<Vector>>& groups) {
  std::vector<EnrollModel> out;
  for (const auto& [label, members] : groups) {
    if (members.empty()) throw ValidationError("enroll: empty group for '" + label + "'");
    Vector sum = Vector::Zero(members.front().size());
    for (const auto& v : members) {
      if (v.size() != sum.size()) throw ValidationError("enroll: r-vector dimensions differ in group '" + label + "'");
      sum += v;
    }
    out.push_back({label, sum / static_cast<double>(members.size()), static_cast<int>(members.size())});
  }
  return out;
}

inline void save_rvectors(std::ostream& out, std::span<const RVector> vs) {
  for (const auto& v : vs) {
    out << v.utt_id << ' ' << to_string(v.task) << ' ' << v.values.size();
    for (Index k = 0; k < v.values.size(); ++k) out << ' ' << format_double(v.values[k]);
    out << '\n';
  }
}

inline std::vector<RVector> load_rvectors(std::istream& in, const std::string& source = "<rvectors>") {
  LineReader r(in, source);
  std::vector<RVector> out;
  std::string line;
  while (r.next_content(line)) {
    auto toks = split_ws(line);
    if (toks.size() < 3) r.fail("expected 'utt_id task dim values...'");
    RVector v;
    v.utt_id = std::string(toks[0]);
    try {
      v.task = parse_task(toks[1]);
    } catch (const ValidationError& e) {
      r.fail(e.what());
    }
    Index dim = 0;
    if (!parse_int(toks[2], dim) || dim < 1) r.fail("bad dimension");
    if (static_cast<Index>(toks.size()) != dim + 3) r.fail("value count does not match dimension");
    v.values.resize(dim);
    for (Index k = 0; k < dim; ++k)
      if (!parse_double(toks[3 + k], v.values[k]) || !std::isfinite(v.values[k]))
        r.fail("bad value '" + std::string(toks[3 + k]) + "'");
    out.push_back(std::move(v));
  }
  return out;
}

inline void save_rvectors_file(const std::filesystem::path& path, std::span<const RVector> vs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write r-vectors to " + path.string());
  save_rvectors(out, vs);
}

inline std::vector<RVector> load_rvectors_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read r-vectors from " + path.string());
  return load_rvectors(in, path.string());
}

}  // namespace collab
