#pragma once

// Scores learned effect curves against reference curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "ahce/curve.hpp"
#include "ahce/error.hpp"

namespace ahce {

struct CurvePair {
  EffectCurve learned;
  EffectCurve truth;
  bool resampled = false;  // truth was interpolated onto the learned grid
};

/// Piecewise-linear value of a curve at x; x must lie within the grid.
inline double interpolate(const EffectCurve& c, double x) {
  const auto& p = c.points;
  if (p.empty()) fail(Errc::validation, "cannot interpolate an empty curve");
  if (x < p.front().intervention || x > p.back().intervention) {
    fail(Errc::validation, "value " + std::to_string(x) + " lies outside the reference grid of '" + c.feature + "'");
  }
  auto it = std::lower_bound(p.begin(), p.end(), x, [](const CurvePoint& a, double v) { return a.intervention < v; });
  if (it->intervention == x) return it->effect;
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double t = (x - lo.intervention) / (hi.intervention - lo.intervention);
  return lo.effect + t * (hi.effect - lo.effect);
}

/// Pairs two curves of the same feature and kind. When the grids differ the
/// truth is resampled onto the learned grid and the pair is flagged.
inline CurvePair align(const EffectCurve& learned, const EffectCurve& truth) {
  if (learned.feature != truth.feature || learned.kind != truth.kind) {
    fail(Errc::validation, "cannot pair " + learned.feature + "/" + to_string(learned.kind) + " with " + truth.feature + "/" +
                               to_string(truth.kind));
  }
  CurvePair pair{learned, truth, false};
  if (learned.grid() == truth.grid()) return pair;
  pair.resampled = true;
  pair.truth.points.clear();
  for (const auto& p : learned.points) pair.truth.points.push_back({p.intervention, interpolate(truth, p.intervention)});
  return pair;
}

inline double rmse(const CurvePair& pair) {
  const auto& a = pair.learned.points;
  const auto& b = pair.truth.points;
  if (a.empty() || a.size() != b.size()) fail(Errc::validation, "rmse needs two non-empty curves on the same grid");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].intervention != b[k].intervention) fail(Errc::validation, "rmse needs two curves on the same grid");
    const double d = a[k].effect - b[k].effect;
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

/// Discrete Frechet distance between the point sequences
/// (intervention value, effect) of two curves.
inline double discrete_frechet(const std::vector<CurvePoint>& a, const std::vector<CurvePoint>& b) {
  if (a.empty() || b.empty()) fail(Errc::validation, "Frechet distance needs non-empty curves");
  const std::size_t n = a.size(), m = b.size();
  auto dist = [&](std::size_t i, std::size_t j) {
    return std::hypot(a[i].intervention - b[j].intervention, a[i].effect - b[j].effect);
  };
  std::vector<double> prev(m), cur(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = dist(i, j);
      if (i == 0 && j == 0) {
        cur[j] = d;
      } else if (i == 0) {
        cur[j] = std::max(cur[j - 1], d);
      } else if (j == 0) {
        cur[j] = std::max(prev[j], d);
      } else {
        cur[j] = std::max(std::min({prev[j], prev[j - 1], cur[j - 1]}), d);
      }
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

inline double discrete_frechet(const CurvePair& pair) { return discrete_frechet(pair.learned.points, pair.truth.points); }

// ---------------------------------------------------------------------------

struct ScoreRow {
  std::string feature;
  EffectKind kind = EffectKind::ace;
  double rmse = 0.0;
  double frechet = 0.0;
  bool resampled = false;
};

struct ScoreReport {
  std::vector<ScoreRow> rows;

  bool empty() const { return rows.empty(); }

  double average_rmse() const { return average(&ScoreRow::rmse); }
  double average_frechet() const { return average(&ScoreRow::frechet); }

  /// Mean over rows of one kind; NaN if there are none.
  double average_rmse(EffectKind k) const { return average(&ScoreRow::rmse, &k); }
  double average_frechet(EffectKind k) const { return average(&ScoreRow::frechet, &k); }

  /// feature,kind,rmse,frechet rows, then one Average row per kind present.
  void write(std::ostream& os) const {
    os << "# frechet over (intervention value, effect) points, axes unscaled\n";
    if (empty()) {
      os << "# empty report: no curve pairs\n";
      return;
    }
    os << "feature,kind,rmse,frechet,resampled\n";
    char buf[96];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.10g,%.10g,%d", r.rmse, r.frechet, r.resampled ? 1 : 0);
      os << r.feature << ',' << to_string(r.kind) << ',' << buf << '\n';
    }
    for (auto k : {EffectKind::ace, EffectKind::adce, EffectKind::aice}) {
      double a = average_rmse(k);
      if (std::isnan(a)) continue;
      std::snprintf(buf, sizeof buf, "%.10g,%.10g,", a, average_frechet(k));
      os << "Average," << to_string(k) << ',' << buf << '\n';
    }
  }

 private:
  double average(double ScoreRow::*field, const EffectKind* kind = nullptr) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (kind && r.kind != *kind) continue;
      s += r.*field;
      ++n;
    }
    return n ? s / static_cast<double>(n) : std::nan("");
  }
};

inline ScoreReport score_report(const std::vector<CurvePair>& pairs) {
  ScoreReport rep;
  for (const auto& p : pairs) rep.rows.push_back({p.learned.feature, p.learned.kind, rmse(p), discrete_frechet(p), p.resampled});
  return rep;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) fail(Errc::validation, "mean of an empty list");
  MeanStd r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return r;
}

}  // namespace ahce
