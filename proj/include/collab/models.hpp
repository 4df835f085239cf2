#pragma once

// Labelled model wrappers and the versioned model text format.
//
//   collab-model 1
//   type lstmp                        | type multitask
//   task language|speaker             | routing <sinks> <sources>
//   labels <n> <label>...             | languages <n> <label>...
//                                     | speakers <n> <label>...
//   dims <in> <cell> <rproj> <pproj> <out>
//                                     | dims lre <in> <cell> <rproj> <pproj> <out>
//                                     | dims sre <in> <cell> <rproj> <pproj> <out>
//   matrix <name> <rows> <cols>       (one block per parameter, fixed order)
//   <row-major values, one row per line>
//   ...
//   end
//
// Serialization is deterministic: equal models produce identical bytes.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "collab/blocks.hpp"
#include "collab/lstmp.hpp"
#include "collab/multitask.hpp"

namespace collab {

enum class Task { language, speaker };

inline std::string_view to_string(Task t) noexcept { return t == Task::language ? "language" : "speaker"; }

inline Task parse_task(std::string_view s) {
  if (s == "language" || s == "lre") return Task::language;
  if (s == "speaker" || s == "sre") return Task::speaker;
  throw ValidationError("unknown task '" + std::string(s) + "' (use language or speaker)");
}

/// One LSTMP branch trained on its own, with the label table of its outputs.
struct SingleTaskModel {
  Task task = Task::language;
  std::vector<std::string> labels;
  LstmpParams params;

  template <typename F>
  void for_each_block(F&& f) {
    params.for_each_block(f);
  }
  template <typename F>
  void for_each_block(F&& f) const {
    params.for_each_block(f);
  }

  void check_consistent() const {
    params.check_consistent();
    if (static_cast<Index>(labels.size()) != params.dims().out)
      throw ValidationError("single-task model: label table size differs from output dimension");
  }

  friend bool operator==(const SingleTaskModel& a, const SingleTaskModel& b) {
    return a.task == b.task && a.labels == b.labels && a.params == b.params;
  }
};

namespace detail {

inline constexpr const char* kModelMagic = "collab-model";
inline constexpr int kModelVersion = 1;

inline void write_labels(std::ostream& out, const char* key, const std::vector<std::string>& labels) {
  out << key << ' ' << labels.size();
  for (const auto& l : labels) out << ' ' << l;
  out << '\n';
}

inline void write_dims(std::ostream& out, const LstmpDims& d) {
  out << d.input << ' ' << d.cell << ' ' << d.rproj << ' ' << d.pproj << ' ' << d.out << '\n';
}

inline std::vector<std::string_view> expect_line(LineReader& r, std::string& line, std::string_view key,
                                                 std::size_t min_tokens) {
  if (!r.next_content(line)) r.fail("unexpected end of file, expected '" + std::string(key) + "'");
  auto toks = split_ws(line);
  if (toks.size() < min_tokens || toks[0] != key) r.fail("expected '" + std::string(key) + "' line");
  return toks;
}

inline std::vector<std::string> read_labels(LineReader& r, std::string& line, std::string_view key) {
  auto toks = expect_line(r, line, key, 2);
  std::size_t n = 0;
  if (!parse_int(toks[1], n) || toks.size() != n + 2) r.fail("label count does not match the labels given");
  return {toks.begin() + 2, toks.end()};
}

inline LstmpDims parse_dims(LineReader& r, const std::vector<std::string_view>& toks, std::size_t first) {
  LstmpDims d;
  if (toks.size() != first + 5 || !parse_int(toks[first], d.input) || !parse_int(toks[first + 1], d.cell) ||
      !parse_int(toks[first + 2], d.rproj) || !parse_int(toks[first + 3], d.pproj) ||
      !parse_int(toks[first + 4], d.out))
    r.fail("malformed dims line");
  try {
    d.validate();
  } catch (const ValidationError& e) {
    r.fail(e.what());
  }
  return d;
}

inline void check_labels(const std::vector<std::string>& labels) {
  for (const auto& l : labels)
    if (!is_token(l)) throw ValidationError("model labels must be non-empty and free of whitespace");
}

inline void expect_end(LineReader& r) {
  std::string line;
  if (!r.next_content(line) || split_ws(line)[0] != "end") r.fail("expected 'end'");
}

}  // namespace detail

inline void save_model(std::ostream& out, const SingleTaskModel& m) {
  m.check_consistent();
  detail::check_labels(m.labels);
  out << detail::kModelMagic << ' ' << detail::kModelVersion << '\n' << "type lstmp\n";
  out << "task " << to_string(m.task) << '\n';
  detail::write_labels(out, "labels", m.labels);
  out << "dims ";
  detail::write_dims(out, m.params.dims());
  write_blocks(out, m);
  out << "end\n";
}

inline void save_model(std::ostream& out, const MultiTaskModel& m) {
  m.check_consistent();
  detail::check_labels(m.languages);
  detail::check_labels(m.speakers);
  const auto d = m.dims();
  if (static_cast<Index>(m.languages.size()) != d.lre.out || static_cast<Index>(m.speakers.size()) != d.sre.out)
    throw ValidationError("multitask model: label tables differ from output dimensions");
  out << detail::kModelMagic << ' ' << detail::kModelVersion << '\n' << "type multitask\n";
  out << "routing " << m.routing.sinks_string() << ' ' << m.routing.sources_string() << '\n';
  detail::write_labels(out, "languages", m.languages);
  detail::write_labels(out, "speakers", m.speakers);
  out << "dims lre ";
  detail::write_dims(out, d.lre);
  out << "dims sre ";
  detail::write_dims(out, d.sre);
  write_blocks(out, m);
  out << "end\n";
}

using AnyModel = std::variant<SingleTaskModel, MultiTaskModel>;

inline AnyModel load_model(std::istream& in, const std::string& source = "<model>") {
  LineReader r(in, source);
  std::string line;
  auto head = detail::expect_line(r, line, detail::kModelMagic, 2);
  int version = 0;
  if (!parse_int(head[1], version) || version != detail::kModelVersion)
    r.fail("unsupported model format version '" + std::string(head[1]) + "'");
  auto type = detail::expect_line(r, line, "type", 2);
  if (type[1] == "lstmp") {
    SingleTaskModel m;
    auto task = detail::expect_line(r, line, "task", 2);
    try {
      m.task = parse_task(task[1]);
    } catch (const ValidationError& e) {
      r.fail(e.what());
    }
    m.labels = detail::read_labels(r, line, "labels");
    auto dims = detail::parse_dims(r, detail::expect_line(r, line, "dims", 6), 1);
    if (static_cast<Index>(m.labels.size()) != dims.out) r.fail("label count differs from output dimension");
    m.params = LstmpParams::zeros(dims);
    read_blocks(r, m);
    detail::expect_end(r);
    return m;
  }
  if (type[1] == "multitask") {
    MultiTaskModel m;
    auto routing = detail::expect_line(r, line, "routing", 3);
    FeedbackRouting fr;
    try {
      fr = FeedbackRouting::parse(routing[1], routing[2]);
    } catch (const ValidationError& e) {
      r.fail(e.what());
    }
    m.languages = detail::read_labels(r, line, "languages");
    m.speakers = detail::read_labels(r, line, "speakers");
    auto dl = detail::expect_line(r, line, "dims", 7);
    if (dl[1] != "lre") r.fail("expected 'dims lre'");
    MultiTaskDims dims{detail::parse_dims(r, dl, 2), {}};
    auto ds = detail::expect_line(r, line, "dims", 7);
    if (ds[1] != "sre") r.fail("expected 'dims sre'");
    dims.sre = detail::parse_dims(r, ds, 2);
    if (dims.lre.input != dims.sre.input) r.fail("branches disagree on input dimension");
    if (static_cast<Index>(m.languages.size()) != dims.lre.out || static_cast<Index>(m.speakers.size()) != dims.sre.out)
      r.fail("label tables differ from output dimensions");
    m.lre = LstmpParams::zeros(dims.lre);
    m.sre = LstmpParams::zeros(dims.sre);
    m.shape_cross(fr);
    read_blocks(r, m);
    detail::expect_end(r);
    return m;
  }
  r.fail("unknown model type '" + std::string(type[1]) + "'");
}

template <typename Model>
std::string serialize_model(const Model& m) {
  std::ostringstream out;
  save_model(out, m);
  return out.str();
}

template <typename Model>
void save_model_file(const std::filesystem::path& path, const Model& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model to " + path.string());
  save_model(out, m);
  if (!out) throw IoError("write failed for " + path.string());
}

inline AnyModel load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read model from " + path.string());
  return load_model(in, path.string());
}

}  // namespace collab
