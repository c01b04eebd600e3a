#pragma once

#include <cstddef>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ahce/dataset.hpp"
#include "ahce/error.hpp"

namespace ahce {

enum class EffectKind { ace, adce, aice };

inline const char* to_string(EffectKind k) {
  switch (k) {
    case EffectKind::ace:
      return "ACE";
    case EffectKind::adce:
      return "ADCE";
    case EffectKind::aice:
      return "AICE";
  }
  return "?";
}

inline EffectKind parse_effect_kind(const std::string& s) {
  if (s == "ACE") return EffectKind::ace;
  if (s == "ADCE") return EffectKind::adce;
  if (s == "AICE") return EffectKind::aice;
  fail(Errc::parse, "unknown effect kind '" + s + "'");
}

struct CurvePoint {
  double intervention;
  double effect;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

/// Effect as a function of the intervention value. Intervention values are
/// strictly increasing.
struct EffectCurve {
  std::string feature;
  EffectKind kind = EffectKind::ace;
  double baseline = 0.0;
  std::vector<CurvePoint> points;

  std::vector<double> grid() const {
    std::vector<double> g;
    g.reserve(points.size());
    for (const auto& p : points) g.push_back(p.intervention);
    return g;
  }
  std::vector<double> effects() const {
    std::vector<double> e;
    e.reserve(points.size());
    for (const auto& p : points) e.push_back(p.effect);
    return e;
  }
};

/// The three curves of one feature on a shared grid.
struct EffectCurves {
  EffectCurve ace;
  EffectCurve adce;
  EffectCurve aice;

  const EffectCurve& get(EffectKind k) const {
    return k == EffectKind::ace ? ace : (k == EffectKind::adce ? adce : aice);
  }
};

inline EffectCurves make_curves(const std::string& feature, double baseline, const std::vector<double>& grid) {
  EffectCurves c;
  for (auto* curve : {&c.ace, &c.adce, &c.aice}) {
    curve->feature = feature;
    curve->baseline = baseline;
    curve->points.reserve(grid.size());
  }
  c.ace.kind = EffectKind::ace;
  c.adce.kind = EffectKind::adce;
  c.aice.kind = EffectKind::aice;
  return c;
}

/// `count` evenly spaced values over [lo, hi]; count == 1 yields {lo}.
inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
  std::vector<double> g;
  if (count == 0) return g;
  g.reserve(count);
  if (count == 1) {
    g.push_back(lo);
    return g;
  }
  for (std::size_t k = 0; k < count; ++k) {
    g.push_back(k + 1 == count ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1));
  }
  return g;
}

inline void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) fail(Errc::validation, "intervention grid is empty");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) fail(Errc::validation, "intervention grid must be strictly increasing");
  }
}

// ---------------------------------------------------------------------------
// CSV export: feature,kind,intervention_value,effect

inline void write_curves(std::ostream& os, const std::vector<EffectCurve>& curves) {
  os << "feature,kind,intervention_value,effect\n";
  char buf[80];
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", p.intervention, p.effect);
      os << c.feature << ',' << to_string(c.kind) << ',' << buf << '\n';
    }
  }
}

inline std::vector<EffectCurve> read_curves(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "feature,kind,intervention_value,effect") {
    fail(Errc::parse, "curve csv: expected header 'feature,kind,intervention_value,effect'");
  }
  std::vector<EffectCurve> out;
  std::map<std::pair<std::string, int>, std::size_t> index;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty()) continue;
    auto f = detail::split_csv_line(t);
    if (f.size() != 4) fail(Errc::parse, "curve csv line " + std::to_string(lineno) + ": expected 4 fields");
    auto kind = parse_effect_kind(f[1]);
    char* e1 = nullptr;
    char* e2 = nullptr;
    double x = std::strtod(f[2].c_str(), &e1);
    double y = std::strtod(f[3].c_str(), &e2);
    if (e1 == f[2].c_str() || e2 == f[3].c_str()) fail(Errc::parse, "curve csv line " + std::to_string(lineno) + ": bad number");
    auto key = std::make_pair(f[0], static_cast<int>(kind));
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      EffectCurve c;
      c.feature = f[0];
      c.kind = kind;
      out.push_back(std::move(c));
    }
    auto& c = out[it->second];
    if (!c.points.empty() && !(x > c.points.back().intervention)) {
      fail(Errc::validation, "curve csv line " + std::to_string(lineno) + ": intervention values must increase");
    }
    c.points.push_back({x, y});
  }
  return out;
}

inline void write_curves_file(const std::string& path, const std::vector<EffectCurve>& curves) {
  std::ofstream os(path);
  if (!os) fail(Errc::io, "cannot write '" + path + "'");
  write_curves(os, curves);
}

inline std::vector<EffectCurve> read_curves_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open '" + path + "'");
  return read_curves(in);
}

}  // namespace ahce
