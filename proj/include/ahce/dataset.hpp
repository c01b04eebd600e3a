#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ahce/error.hpp"
#include "ahce/fingerprint.hpp"
#include "ahce/graph.hpp"

namespace ahce {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Provenance {
  bool interventional = false;
  std::map<std::string, double> assignments;
};

/// n x d samples, one column per graph variable in declaration order.
struct Dataset {
  std::vector<std::string> columns;
  RowMatrix values;
  Provenance provenance;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }

  std::size_t column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) fail(Errc::unknown_variable, "dataset has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }

  Dataset subset(const std::vector<std::size_t>& row_ids) const {
    Dataset out{columns, RowMatrix(static_cast<Eigen::Index>(row_ids.size()), values.cols()), provenance};
    for (std::size_t i = 0; i < row_ids.size(); ++i) out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(row_ids[i]));
    return out;
  }

  std::uint64_t fingerprint() const {
    Fnv1a h;
    for (const auto& c : columns) h.add(c);
    h.add(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
    return h.value();
  }
};

/// Non-target columns of a dataset laid out as network inputs, plus the target.
struct SupervisedData {
  RowMatrix inputs;
  Eigen::VectorXd targets;

  std::size_t rows() const { return static_cast<std::size_t>(inputs.rows()); }
};

inline SupervisedData split_inputs(const CausalGraph& g, const Dataset& data) {
  if (data.columns != g.names()) fail(Errc::validation, "dataset columns do not match graph variables");
  auto in = g.inputs();
  SupervisedData out{RowMatrix(data.values.rows(), static_cast<Eigen::Index>(in.size())),
                     data.values.col(static_cast<Eigen::Index>(g.target()))};
  for (std::size_t j = 0; j < in.size(); ++j) {
    out.inputs.col(static_cast<Eigen::Index>(j)) = data.values.col(static_cast<Eigen::Index>(in[j]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

/// Header row of names, one sample per row. Columns are written in the given
/// order except that `target_last` moves the named column to the end.
inline void write_csv(std::ostream& os, const Dataset& data, const std::string& target_last = {}) {
  std::vector<std::size_t> order;
  std::size_t tgt = data.cols();
  for (std::size_t j = 0; j < data.cols(); ++j) {
    if (!target_last.empty() && data.columns[j] == target_last) {
      tgt = j;
    } else {
      order.push_back(j);
    }
  }
  if (tgt != data.cols()) order.push_back(tgt);
  for (std::size_t k = 0; k < order.size(); ++k) os << (k ? "," : "") << data.columns[order[k]];
  os << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
    for (std::size_t k = 0; k < order.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", data.values(i, static_cast<Eigen::Index>(order[k])));
      os << (k ? "," : "") << buf;
    }
    os << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Reads a numeric CSV with a header row. Rejects ragged rows, empty or
/// non-numeric cells and non-finite values.
inline Dataset read_csv(std::istream& in) {
  Dataset out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) break;
  }
  out.columns = detail::split_csv_line(detail::trim(line));
  if (out.columns.empty() || out.columns.front().empty()) fail(Errc::parse, "csv: missing header row");
  std::vector<double> cells;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty()) continue;
    auto fields = detail::split_csv_line(t);
    if (fields.size() != out.columns.size()) {
      fail(Errc::parse, "csv line " + std::to_string(lineno) + ": expected " + std::to_string(out.columns.size()) +
                            " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const auto& f = fields[j];
      char* end = nullptr;
      double v = f.empty() ? 0.0 : std::strtod(f.c_str(), &end);
      if (f.empty() || end != f.c_str() + f.size()) {
        fail(Errc::validation, "csv line " + std::to_string(lineno) + ", column '" + out.columns[j] +
                                   "': non-numeric value '" + f + "'");
      }
      if (!std::isfinite(v)) {
        fail(Errc::validation, "csv line " + std::to_string(lineno) + ", column '" + out.columns[j] + "': non-finite value");
      }
      cells.push_back(v);
    }
    ++rows;
  }
  out.values = Eigen::Map<RowMatrix>(cells.data(), static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(out.columns.size()));
  return out;
}

inline Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open '" + path + "'");
  return read_csv(in);
}

inline void write_csv_file(const std::string& path, const Dataset& data, const std::string& target_last = {}) {
  std::ofstream os(path);
  if (!os) fail(Errc::io, "cannot write '" + path + "'");
  write_csv(os, data, target_last);
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-column min-max scaling onto [0, 1]. Columns whose values are all 0 or
/// 1 are flagged binary.
struct MinMaxScaler {
  std::vector<std::string> columns;
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<bool> binary;

  static MinMaxScaler fit(const Dataset& data) {
    if (data.rows() == 0) fail(Errc::validation, "cannot normalize an empty dataset");
    MinMaxScaler s;
    s.columns = data.columns;
    for (std::size_t j = 0; j < data.cols(); ++j) {
      auto col = data.values.col(static_cast<Eigen::Index>(j));
      double lo = col.minCoeff(), hi = col.maxCoeff();
      if (!(hi > lo)) fail(Errc::validation, "column '" + data.columns[j] + "' is constant (zero range)");
      s.lo.push_back(lo);
      s.hi.push_back(hi);
      s.binary.push_back(col.unaryExpr([](double v) { return (v == 0.0 || v == 1.0) ? 0.0 : 1.0; }).sum() == 0.0);
    }
    return s;
  }

  std::size_t index(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) fail(Errc::unknown_variable, "scaler has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }
  double range(std::size_t j) const { return hi[j] - lo[j]; }
  double to_unit(std::size_t j, double raw) const { return (raw - lo[j]) / range(j); }
  double to_raw(std::size_t j, double unit) const { return lo[j] + unit * range(j); }

  Dataset apply(const Dataset& data) const {
    if (data.columns != columns) fail(Errc::validation, "scaler columns do not match dataset");
    Dataset out = data;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      auto c = out.values.col(static_cast<Eigen::Index>(j));
      c = (c.array() - lo[j]) / range(j);
    }
    return out;
  }
};

/// column,lo,hi,binary; lo and hi as %.17g so the round trip is exact.
inline void write_scaler(std::ostream& os, const MinMaxScaler& s) {
  os << "column,lo,hi,binary\n";
  char buf[64];
  for (std::size_t j = 0; j < s.columns.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d", s.lo[j], s.hi[j], s.binary[j] ? 1 : 0);
    os << s.columns[j] << ',' << buf << '\n';
  }
}

inline MinMaxScaler read_scaler(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "column,lo,hi,binary") fail(Errc::parse, "scaler file: bad header");
  MinMaxScaler s;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 4) detail::parse_fail(lineno, "scaler file: expected 4 fields");
    char* end = nullptr;
    const double lo = std::strtod(f[1].c_str(), &end);
    if (*end != '\0') detail::parse_fail(lineno, "scaler file: bad lo");
    const double hi = std::strtod(f[2].c_str(), &end);
    if (*end != '\0' || !(hi > lo)) detail::parse_fail(lineno, "scaler file: bad hi");
    if (f[3] != "0" && f[3] != "1") detail::parse_fail(lineno, "scaler file: binary flag must be 0 or 1");
    s.columns.push_back(f[0]);
    s.lo.push_back(lo);
    s.hi.push_back(hi);
    s.binary.push_back(f[3] == "1");
  }
  if (s.columns.empty()) fail(Errc::parse, "scaler file has no columns");
  return s;
}

/// Validates a raw CSV against a graph: every graph variable must be present
/// exactly once, no extra columns. Columns are reordered to graph order.
inline Dataset conform_to_graph(const Dataset& raw, const CausalGraph& g) {
  for (const auto& name : g.names()) {
    if (std::count(raw.columns.begin(), raw.columns.end(), name) == 0) {
      fail(Errc::validation, "csv is missing column '" + name + "'" + (name == g.name(g.target()) ? " (the target)" : ""));
    }
  }
  for (const auto& c : raw.columns) {
    if (!g.find(c)) fail(Errc::validation, "csv column '" + c + "' is not a graph variable");
    if (std::count(raw.columns.begin(), raw.columns.end(), c) > 1) fail(Errc::validation, "csv column '" + c + "' repeated");
  }
  Dataset out{g.names(), RowMatrix(raw.values.rows(), static_cast<Eigen::Index>(g.size())), raw.provenance};
  for (std::size_t j = 0; j < g.size(); ++j) {
    out.values.col(static_cast<Eigen::Index>(j)) = raw.values.col(static_cast<Eigen::Index>(raw.column(g.name(j))));
  }
  return out;
}

}  // namespace ahce
