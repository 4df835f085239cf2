#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "collab/error.hpp"

namespace collab {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Feature frames are stored one frame per row so that x_t is contiguous.
using FrameMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

/// splitmix64 finalizer; mixes a base seed with a stream tag into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag1, std::uint64_t tag2) noexcept {
  return derive_seed(derive_seed(seed, tag1), tag2);
}

inline double sigmoid(double a) noexcept { return 1.0 / (1.0 + std::exp(-a)); }

inline Vector sigmoid(const Vector& a) {
  return a.unaryExpr([](double v) { return sigmoid(v); });
}

inline Vector tanh(const Vector& a) {
  return a.unaryExpr([](double v) { return std::tanh(v); });
}

/// Shortest decimal text that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) noexcept {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) noexcept {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

/// Splits on runs of spaces and tabs.
inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// True when a label can be written as a single whitespace-free token.
inline bool is_token(std::string_view s) noexcept {
  if (s.empty()) return false;
  for (char c : s)
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return false;
  return true;
}

/// Line-oriented reader that tracks line numbers for error messages.
class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }

  /// Next line that is neither blank nor a '#' comment.
  bool next_content(std::string& line) {
    while (next(line)) {
      auto toks = split_ws(line);
      if (!toks.empty() && toks.front().front() != '#') return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_no_, what); }

  std::size_t line() const noexcept { return line_no_; }
  const std::string& source() const noexcept { return source_; }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

inline void write_row(std::ostream& out, const double* values, Index n, Index stride = 1) {
  for (Index j = 0; j < n; ++j) {
    if (j) out << ' ';
    out << format_double(values[j * stride]);
  }
  out << '\n';
}

/// Parses exactly `n` doubles from a line; reports through `reader` on failure.
inline void read_row(LineReader& reader, std::string_view line, double* dst, Index n, Index stride = 1) {
  auto toks = split_ws(line);
  if (static_cast<Index>(toks.size()) != n)
    reader.fail("expected " + std::to_string(n) + " values, found " + std::to_string(toks.size()));
  for (Index j = 0; j < n; ++j)
    if (!parse_double(toks[j], dst[j * stride])) reader.fail("bad number '" + std::string(toks[j]) + "'");
}

}  // namespace collab
