#pragma once

// Interventional moments of the inputs under do(X_i = x), with the learned
// layer 0 acting as the structural model among inputs, and the second-order
// Taylor estimate of the expected network output under those moments.

#include <Eigen/Dense>
#include <concepts>
#include <cstddef>
#include <string>
#include <vector>

#include "ahce/antehoc.hpp"
#include "ahce/curve.hpp"
#include "ahce/dataset.hpp"
#include "ahce/error.hpp"
#include "ahce/mlp.hpp"

namespace ahce {

enum class InterventionKind { total, direct, indirect };

/// total(x): everything downstream of X_i sees x.
/// direct(x, x*): X_i is x but its descendants are computed from x*.
/// indirect(x, x*): X_i is x* but its descendants are computed from x.
struct InterventionMode {
  InterventionKind kind = InterventionKind::total;
  double value = 0.0;
  double reference = 0.0;

  static InterventionMode total(double x) { return {InterventionKind::total, x, x}; }
  static InterventionMode direct(double x, double ref) { return {InterventionKind::direct, x, ref}; }
  static InterventionMode indirect(double x, double ref) { return {InterventionKind::indirect, x, ref}; }

  /// Value the descendants are computed from.
  double propagation_value() const { return kind == InterventionKind::direct ? reference : value; }
  /// Value X_i itself takes in the mean vector.
  double feature_value() const { return kind == InterventionKind::indirect ? reference : value; }
};

struct InterventionalStats {
  Vector mu;
  Matrix cov;
  InterventionMode mode;
  std::size_t feature = 0;  // input position
};

/// Moments of the data after clamping X_i and recomputing its descendants.
/// Depends only on the propagation value, so the three modes share it.
struct PropagatedMoments {
  Vector mean;
  Matrix cov;  // population covariance; the clamped row/column is zero
  std::size_t feature = 0;
};

inline std::size_t feature_position(const AnteHocNet& m, const std::string& name) {
  auto v = m.graph.index_of(name);
  if (v == m.graph.target()) fail(Errc::validation, "'" + name + "' is the target, not an input feature");
  return input_positions(m.graph)[v];
}

namespace detail {

// Functions recomputed when X_i is clamped. With observed derivation each
// function reads observed parents, so only the direct children move.
inline std::vector<std::size_t> moved_functions(const AnteHocNet& m, std::size_t feature) {
  if (m.derive_mode == DeriveMode::propagate) return m.layer0.downstream(feature);
  std::vector<std::size_t> out;
  const auto& fns = m.layer0.functions();
  for (std::size_t s = 0; s < fns.size(); ++s) {
    for (auto p : fns[s].parents) {
      if (p == feature) {
        out.push_back(s);
        break;
      }
    }
  }
  return out;
}

inline void check_inputs(const AnteHocNet& m, const RowMatrix& inputs, std::size_t feature) {
  if (inputs.rows() == 0) fail(Errc::validation, "interventional statistics need at least one data row");
  if (static_cast<std::size_t>(inputs.cols()) != m.input_size()) {
    fail(Errc::dimension_mismatch, "data width does not match the model inputs");
  }
  if (feature >= m.input_size()) fail(Errc::validation, "feature position out of range");
}

}  // namespace detail

/// The data rows with X_i clamped to `clamp` and its layer-0 descendants
/// recomputed in topological order; other columns keep their observed values.
inline RowMatrix intervened_rows(const AnteHocNet& m, const RowMatrix& inputs, std::size_t feature, double clamp) {
  detail::check_inputs(m, inputs, feature);
  const auto moved = detail::moved_functions(m, feature);
  const auto& fns = m.layer0.functions();
  const bool propagate = m.derive_mode == DeriveMode::propagate;
  RowMatrix out = inputs;
  const auto fi = static_cast<Eigen::Index>(feature);
  out.col(fi).setConstant(clamp);
  if (moved.empty()) return out;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    Vector x = out.row(r).transpose();
    const Vector source = x;
    for (auto s : moved) {
      const auto& f = fns[s];
      x(static_cast<Eigen::Index>(f.position)) = f.apply(propagate ? VectorCRef(x) : VectorCRef(source));
    }
    out.row(r) = x.transpose();
  }
  return out;
}

inline PropagatedMoments propagated_moments(const AnteHocNet& m, const RowMatrix& inputs, std::size_t feature, double clamp) {
  RowMatrix rows = intervened_rows(m, inputs, feature, clamp);
  PropagatedMoments pm;
  pm.feature = feature;
  pm.mean = rows.colwise().mean().transpose();
  const double n = static_cast<double>(rows.rows());
  rows.rowwise() -= pm.mean.transpose();
  pm.cov = (rows.transpose() * rows) / n;
  pm.cov = 0.5 * (pm.cov + pm.cov.transpose());
  const auto fi = static_cast<Eigen::Index>(feature);
  pm.mean(fi) = clamp;
  pm.cov.row(fi).setZero();
  pm.cov.col(fi).setZero();
  if (!pm.mean.allFinite() || !pm.cov.allFinite()) fail(Errc::numerical, "non-finite interventional statistics");
  return pm;
}

/// Moments under `mode`, given the moments at the mode's propagation value.
inline InterventionalStats assemble_stats(const PropagatedMoments& pm, const InterventionMode& mode) {
  InterventionalStats s{pm.mean, pm.cov, mode, pm.feature};
  s.mu(static_cast<Eigen::Index>(pm.feature)) = mode.feature_value();
  return s;
}

inline InterventionalStats interventional_stats(const AnteHocNet& m, const RowMatrix& inputs, std::size_t feature,
                                                const InterventionMode& mode) {
  return assemble_stats(propagated_moments(m, inputs, feature, mode.propagation_value()), mode);
}

inline InterventionalStats interventional_stats(const AnteHocNet& m, const Dataset& data, const std::string& feature,
                                                const InterventionMode& mode) {
  return interventional_stats(m, split_inputs(m.graph, data).inputs, feature_position(m, feature), mode);
}

// ---------------------------------------------------------------------------
// Expectation estimators

enum class HessianMode { exact, gauss_newton };

inline const char* to_string(HessianMode h) { return h == HessianMode::exact ? "exact" : "gauss-newton"; }

inline HessianMode parse_hessian_mode(const std::string& s) {
  if (s == "exact") return HessianMode::exact;
  if (s == "gauss-newton") return HessianMode::gauss_newton;
  fail(Errc::parse, "unknown hessian mode '" + s + "'");
}

/// Exact finite-difference Hessians up to 32 inputs, Gauss-Newton above.
inline HessianMode default_hessian_mode(std::size_t inputs) {
  return inputs <= 32 ? HessianMode::exact : HessianMode::gauss_newton;
}

template <class P>
concept Predictor = requires(const P& p, const Vector& x) {
  { p.forward(x) } -> std::convertible_to<double>;
  { p.input_hessian(x) } -> std::convertible_to<Matrix>;
  { p.gauss_newton_hessian(x) } -> std::convertible_to<Matrix>;
};

/// f(mu) + tr(H(mu) cov) / 2. The first-order term vanishes around the mean.
template <Predictor P>
double taylor_expectation(const P& f, const InterventionalStats& s, HessianMode mode = HessianMode::exact) {
  const double f0 = f.forward(s.mu);
  if (s.cov.isZero(0.0)) return f0;
  const Matrix H = mode == HessianMode::exact ? Matrix(f.input_hessian(s.mu)) : Matrix(f.gauss_newton_hessian(s.mu));
  if (H.rows() != s.cov.rows()) fail(Errc::dimension_mismatch, "statistics dimension does not match the predictor");
  const double v = f0 + 0.5 * H.cwiseProduct(s.cov).sum();
  if (!std::isfinite(v)) fail(Errc::numerical, "non-finite Taylor expectation");
  return v;
}

/// Empirical mean of the predictor over the intervened rows, with X_i set
/// to the mode's feature value. `max_rows` = 0 uses every row.
template <Predictor P>
double mc_expectation(const P& f, const AnteHocNet& m, const RowMatrix& inputs, std::size_t feature,
                      const InterventionMode& mode, std::size_t max_rows = 0) {
  const RowMatrix& used = inputs;
  const Eigen::Index n = max_rows == 0 ? used.rows() : std::min<Eigen::Index>(used.rows(), static_cast<Eigen::Index>(max_rows));
  RowMatrix rows = intervened_rows(m, used.topRows(n), feature, mode.propagation_value());
  rows.col(static_cast<Eigen::Index>(feature)).setConstant(mode.feature_value());
  double sum = 0.0;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) sum += f.forward(rows.row(r).transpose());
  return sum / static_cast<double>(rows.rows());
}

inline double mc_expectation(const AnteHocNet& m, const Dataset& data, const std::string& feature,
                             const InterventionMode& mode, std::size_t max_rows = 0) {
  return mc_expectation(m.predictor, m, split_inputs(m.graph, data).inputs, feature_position(m, feature), mode, max_rows);
}

// ---------------------------------------------------------------------------
// Effect curves

/// ACE, ADCE and AICE of one feature against the baseline x*:
///   ACE(x)  = E[y | total(x)]         - E[y | total(x*)]
///   ADCE(x) = E[y | direct(x, x*)]    - E[y | total(x*)]
///   AICE(x) = E[y | indirect(x, x*)]  - E[y | total(x*)]
/// Each grid point needs one propagation at x; the direct terms all share
/// the propagation at x*.
template <class StatsAt>
EffectCurves effect_curves_from(const AnteHocNet& m, const std::string& name, const std::vector<double>& grid, double baseline,
                                HessianMode hessian, StatsAt&& moments_at) {
  check_grid(grid);
  const PropagatedMoments at_ref = moments_at(baseline);
  const double ref = taylor_expectation(m.predictor, assemble_stats(at_ref, InterventionMode::total(baseline)), hessian);
  EffectCurves c = make_curves(name, baseline, grid);
  for (double x : grid) {
    const PropagatedMoments at_x = moments_at(x);
    const double t = taylor_expectation(m.predictor, assemble_stats(at_x, InterventionMode::total(x)), hessian);
    const double d = taylor_expectation(m.predictor, assemble_stats(at_ref, InterventionMode::direct(x, baseline)), hessian);
    const double i = taylor_expectation(m.predictor, assemble_stats(at_x, InterventionMode::indirect(x, baseline)), hessian);
    c.ace.points.push_back({x, t - ref});
    c.adce.points.push_back({x, d - ref});
    c.aice.points.push_back({x, i - ref});
  }
  return c;
}

inline EffectCurves effect_curves(const AnteHocNet& m, const RowMatrix& inputs, std::size_t feature, const std::vector<double>& grid,
                                  double baseline, HessianMode hessian) {
  const auto& name = m.graph.name(m.graph.inputs().at(feature));
  return effect_curves_from(m, name, grid, baseline, hessian,
                            [&](double v) { return propagated_moments(m, inputs, feature, v); });
}

inline EffectCurves effect_curves(const AnteHocNet& m, const Dataset& data, const std::string& feature, const std::vector<double>& grid,
                                  double baseline, HessianMode hessian) {
  return effect_curves(m, split_inputs(m.graph, data).inputs, feature_position(m, feature), grid, baseline, hessian);
}

/// Evenly spaced over the observed range, or {0, 1} for a binary column.
inline std::vector<double> default_grid(const Eigen::Ref<const Vector>& column, bool binary, std::size_t points = 1000) {
  if (column.size() == 0) fail(Errc::validation, "cannot build a grid from an empty column");
  if (binary) return {0.0, 1.0};
  const double lo = column.minCoeff(), hi = column.maxCoeff();
  if (!(hi > lo)) return {lo};
  return linspace(lo, hi, points);
}

/// Observational mean, or 0 for a binary column.
inline double default_baseline(const Eigen::Ref<const Vector>& column, bool binary) {
  if (column.size() == 0) fail(Errc::validation, "cannot choose a baseline from an empty column");
  return binary ? 0.0 : column.mean();
}

}  // namespace ahce
