#pragma once

// End-to-end experiment on a simulated dataset: sample, normalize, split,
// train, explain, and score against the simulator's ground truth. Shared by
// the command-line tool and the acceptance suite.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ahce/antehoc.hpp"
#include "ahce/curve.hpp"
#include "ahce/dataset.hpp"
#include "ahce/effects.hpp"
#include "ahce/metrics.hpp"
#include "ahce/random.hpp"
#include "ahce/scm.hpp"

namespace ahce {

struct PreparedData {
  CausalGraph graph;
  Dataset raw;
  MinMaxScaler scaler;
  Dataset normalized;
  Dataset train;
  Dataset test;
};

/// Normalizes every column onto [0, 1] and splits rows at random into train
/// and held-out parts.
inline PreparedData prepare_data(const CausalGraph& g, const Dataset& raw, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0 && train_fraction <= 1)) fail(Errc::usage, "train fraction must be in (0, 1]");
  PreparedData p;
  p.graph = g;
  p.raw = conform_to_graph(raw, g);
  p.scaler = MinMaxScaler::fit(p.raw);
  p.normalized = p.scaler.apply(p.raw);
  std::vector<std::size_t> order(p.raw.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Stream s(seed, 0x73706c6974ULL);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[s.below(i)]);
  auto cut = static_cast<std::size_t>(train_fraction * static_cast<double>(order.size()));
  cut = std::max<std::size_t>(1, std::min(cut, order.size()));
  std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<long>(cut));
  std::vector<std::size_t> te(order.begin() + static_cast<long>(cut), order.end());
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  p.train = p.normalized.subset(tr);
  p.test = p.normalized.subset(te);
  return p;
}

/// Intervention grid and baseline of one input feature, in normalized units.
struct FeatureSettings {
  std::string feature;
  std::size_t position = 0;  // input position
  bool binary = false;
  double baseline = 0.0;
  std::vector<double> grid;
};

inline std::vector<FeatureSettings> feature_settings(const PreparedData& p, std::size_t grid_points) {
  std::vector<FeatureSettings> out;
  auto in = p.graph.inputs();
  for (std::size_t k = 0; k < in.size(); ++k) {
    const auto col = p.normalized.values.col(static_cast<Eigen::Index>(in[k]));
    FeatureSettings f;
    f.feature = p.graph.name(in[k]);
    f.position = k;
    f.binary = p.scaler.binary[in[k]];
    f.baseline = default_baseline(col, f.binary);
    f.grid = default_grid(col, f.binary, grid_points);
    out.push_back(std::move(f));
  }
  return out;
}

/// Simulator ground truth on the normalized grids, with effects divided by
/// the target's range so they are in the model's output units.
struct NormalizedTruth {
  std::vector<EffectCurves> curves;
  std::vector<GroundTruth> raw;
};

inline NormalizedTruth normalized_truth(const ScmSpec& scm, const PreparedData& p, const std::vector<FeatureSettings>& settings,
                                        std::size_t n_mc, std::uint64_t seed, unsigned threads = 1) {
  NormalizedTruth out;
  const auto& sc = p.scaler;
  const std::size_t y = p.graph.target();
  for (const auto& f : settings) {
    const std::size_t v = p.graph.index_of(f.feature);
    std::vector<double> raw_grid;
    for (double u : f.grid) raw_grid.push_back(sc.to_raw(v, u));
    auto gt = ground_truth_effects(scm, f.feature, raw_grid, sc.to_raw(v, f.baseline), n_mc, seed, threads);
    EffectCurves c = make_curves(f.feature, f.baseline, f.grid);
    for (auto kind : {EffectKind::ace, EffectKind::adce, EffectKind::aice}) {
      auto& dst = kind == EffectKind::ace ? c.ace : (kind == EffectKind::adce ? c.adce : c.aice);
      const auto& src = gt.curves.get(kind).points;
      for (std::size_t k = 0; k < f.grid.size(); ++k) dst.points.push_back({f.grid[k], src[k].effect / sc.range(y)});
    }
    out.curves.push_back(std::move(c));
    out.raw.push_back(std::move(gt));
  }
  return out;
}

inline std::vector<EffectCurves> learned_curves(const AnteHocNet& m, const Dataset& data, const std::vector<FeatureSettings>& settings,
                                                HessianMode hessian) {
  const auto inputs = split_inputs(m.graph, data).inputs;
  std::vector<EffectCurves> out;
  for (const auto& f : settings) out.push_back(effect_curves(m, inputs, f.position, f.grid, f.baseline, hessian));
  return out;
}

inline ScoreReport score_curves(const std::vector<EffectCurves>& learned, const std::vector<EffectCurves>& truth,
                                const std::vector<EffectKind>& kinds = {EffectKind::ace, EffectKind::adce, EffectKind::aice}) {
  if (learned.size() != truth.size()) fail(Errc::validation, "learned and true curve sets differ in size");
  std::vector<CurvePair> pairs;
  for (auto kind : kinds) {
    for (std::size_t k = 0; k < learned.size(); ++k) pairs.push_back(align(learned[k].get(kind), truth[k].get(kind)));
  }
  return score_report(pairs);
}

struct ExperimentConfig {
  std::size_t n = 1000;
  std::uint64_t data_seed = 7;
  double train_fraction = 0.8;
  std::size_t grid_points = 1000;
  std::size_t n_mc = 100000;
  std::uint64_t truth_seed = 11;
  unsigned threads = 1;
  TrainConfig train;
  ModelOptions model;
  HessianMode hessian = HessianMode::exact;
};

struct SeedRun {
  std::uint64_t seed = 0;
  AnteHocNet model;
  std::vector<LossRecord> log;
  double test_rmse = 0.0;
  std::vector<EffectCurves> learned;
  ScoreReport report;
};

/// Trains one model with `seed` driving initialization and row order, then
/// explains it and scores it against `truth`.
inline SeedRun run_seed(const PreparedData& p, const std::vector<FeatureSettings>& settings, const std::vector<EffectCurves>& truth,
                        const ExperimentConfig& cfg, std::uint64_t seed, bool with_layer0) {
  SeedRun run;
  run.seed = seed;
  ModelOptions mo = cfg.model;
  mo.seed = seed;
  mo.with_layer0 = with_layer0;
  run.model = AnteHocNet::create(p.graph, mo);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  run.log = train(run.model, p.train, tc);
  run.test_rmse = p.test.rows() ? prediction_rmse(run.model, split_inputs(p.graph, p.test)) : 0.0;
  run.learned = learned_curves(run.model, p.train, settings, cfg.hessian);
  run.report = score_curves(run.learned, truth);
  return run;
}

}  // namespace ahce
