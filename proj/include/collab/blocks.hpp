#pragma once

// Generic operations over anything that exposes for_each_block(f), where f is
// called as f(name, block) with an Eigen matrix or vector per parameter block.
//
// Text layout of one block:
//
//   matrix <name> <rows> <cols>
//   <row 0: cols values>
//   ...

#include <string>
#include <vector>

#include "collab/common.hpp"

namespace collab {

struct BlockRef {
  std::string name;
  double* data;
  Index rows;
  Index cols;

  Index size() const noexcept { return rows * cols; }
};

struct ConstBlockRef {
  std::string name;
  const double* data;
  Index rows;
  Index cols;

  Index size() const noexcept { return rows * cols; }
};

template <typename Model>
std::vector<BlockRef> block_refs(Model& m) {
  std::vector<BlockRef> out;
  m.for_each_block([&](std::string_view name, auto& b) {
    out.push_back({std::string(name), b.data(), b.rows(), b.cols()});
  });
  return out;
}

template <typename Model>
std::vector<ConstBlockRef> block_refs(const Model& m) {
  std::vector<ConstBlockRef> out;
  m.for_each_block([&](std::string_view name, const auto& b) {
    out.push_back({std::string(name), b.data(), b.rows(), b.cols()});
  });
  return out;
}

/// Same block names, shapes and values.
template <typename Model>
bool params_equal(const Model& a, const Model& b) {
  auto ba = block_refs(a), bb = block_refs(b);
  if (ba.size() != bb.size()) return false;
  for (std::size_t k = 0; k < ba.size(); ++k) {
    if (ba[k].name != bb[k].name || ba[k].rows != bb[k].rows || ba[k].cols != bb[k].cols) return false;
    for (Index j = 0; j < ba[k].size(); ++j)
      if (ba[k].data[j] != bb[k].data[j]) return false;
  }
  return true;
}

template <typename Model>
void set_zero(Model& m) {
  m.for_each_block([](std::string_view, auto& b) { b.setZero(); });
}

/// Copy of `m` with every block zeroed; label tables and other metadata are kept.
template <typename Model>
Model zeros_like(const Model& m) {
  Model z = m;
  set_zero(z);
  return z;
}

/// y += alpha * x, blockwise.
template <typename Model>
void axpy(double alpha, const Model& x, Model& y) {
  auto bx = block_refs(x);
  auto by = block_refs(y);
  for (std::size_t k = 0; k < bx.size(); ++k)
    for (Index j = 0; j < bx[k].size(); ++j) by[k].data[j] += alpha * bx[k].data[j];
}

template <typename Model>
void scale(Model& m, double alpha) {
  m.for_each_block([&](std::string_view, auto& b) { b *= alpha; });
}

template <typename Model>
double global_norm(const Model& m) {
  double sq = 0;
  m.for_each_block([&](std::string_view, const auto& b) { sq += b.squaredNorm(); });
  return std::sqrt(sq);
}

template <typename Model>
Index parameter_count(const Model& m) {
  Index n = 0;
  m.for_each_block([&](std::string_view, const auto& b) { n += b.size(); });
  return n;
}

/// First block containing a non-finite value, or empty.
template <typename Model>
std::string first_non_finite_block(const Model& m) {
  std::string bad;
  m.for_each_block([&](std::string_view name, const auto& b) {
    if (bad.empty() && !b.allFinite()) bad = std::string(name);
  });
  return bad;
}

template <typename Model>
void write_blocks(std::ostream& out, const Model& m, const std::string& prefix = "") {
  m.for_each_block([&](std::string_view name, const auto& b) {
    out << "matrix " << prefix << name << ' ' << b.rows() << ' ' << b.cols() << '\n';
    for (Index r = 0; r < b.rows(); ++r) write_row(out, b.data() + r, b.cols(), b.rows());
  });
}

/// Reads blocks into an already-shaped model; names and shapes must match exactly.
template <typename Model>
void read_blocks(LineReader& reader, Model& m, const std::string& prefix = "") {
  std::string line;
  m.for_each_block([&](std::string_view name, auto& b) {
    const std::string want = prefix + std::string(name);
    if (!reader.next_content(line)) reader.fail("unexpected end of file, expected block '" + want + "'");
    auto toks = split_ws(line);
    Index rows = 0, cols = 0;
    if (toks.size() != 4 || toks[0] != "matrix" || !parse_int(toks[2], rows) || !parse_int(toks[3], cols))
      reader.fail("malformed block header, expected 'matrix " + want + " rows cols'");
    if (toks[1] != want) reader.fail("expected block '" + want + "', found '" + std::string(toks[1]) + "'");
    if (rows != b.rows() || cols != b.cols())
      reader.fail("block '" + want + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                  ", expected " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    for (Index r = 0; r < rows; ++r) {
      if (!reader.next(line)) reader.fail("unexpected end of file inside block '" + want + "'");
      read_row(reader, line, b.data() + r, cols, rows);
    }
    if (!b.allFinite()) reader.fail("block '" + want + "' contains non-finite values");
  });
}

}  // namespace collab
