#pragma once

// Offline / online split of effect estimation. Training rows are grouped
// around anchor rows; for every anchor, feature and offline grid value the
// interventional moments of the anchor's members are precomputed. Online
// queries go to the nearest anchor and the nearest grid value.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "ahce/antehoc.hpp"
#include "ahce/curve.hpp"
#include "ahce/dataset.hpp"
#include "ahce/effects.hpp"
#include "ahce/error.hpp"
#include "ahce/kdtree.hpp"

namespace ahce {

/// Greedy clustering: rows are visited in order and join the earliest anchor
/// within `max_distance`, else become an anchor themselves.
struct Clustering {
  std::vector<std::size_t> anchors;     // row ids
  std::vector<std::size_t> assignment;  // row -> index into anchors
  std::vector<std::vector<std::size_t>> members;
};

/// Maps rows onto the unit cube per column so one distance threshold fits
/// every dataset. Constant columns are left unscaled.
struct UnitScaling {
  std::vector<double> lo;
  std::vector<double> scale;

  static UnitScaling fit(const RowMatrix& x) {
    UnitScaling s;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double lo = x.col(j).minCoeff(), hi = x.col(j).maxCoeff();
      s.lo.push_back(lo);
      s.scale.push_back(hi > lo ? 1.0 / (hi - lo) : 1.0);
    }
    return s;
  }

  std::vector<double> apply(VectorCRef x) const {
    std::vector<double> out(lo.size());
    for (std::size_t j = 0; j < lo.size(); ++j) out[j] = (x(static_cast<Eigen::Index>(j)) - lo[j]) * scale[j];
    return out;
  }
};

inline Clustering cluster_rows(const RowMatrix& x, const UnitScaling& scaling, double max_distance) {
  if (x.rows() == 0) fail(Errc::validation, "cannot cluster an empty dataset");
  if (!(max_distance >= 0)) fail(Errc::usage, "cluster distance must be non-negative");
  KdTree tree(static_cast<std::size_t>(x.cols()));
  Clustering c;
  c.assignment.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto p = scaling.apply(x.row(r).transpose());
    auto hit = tree.first_within(p, max_distance);
    std::size_t a = hit.id;
    if (a == KdTree::npos) {
      a = tree.insert(p);
      c.anchors.push_back(static_cast<std::size_t>(r));
      c.members.emplace_back();
    }
    c.assignment[static_cast<std::size_t>(r)] = a;
    c.members[a].push_back(static_cast<std::size_t>(r));
  }
  return c;
}

struct FeatureGrid {
  std::size_t feature = 0;  // input position
  double baseline = 0.0;
  std::vector<double> values;
};

inline RowMatrix select_rows(const RowMatrix& x, const std::vector<std::size_t>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

class BinStore {
 public:
  static constexpr std::uint32_t kVersion = 1;

  /// Moments are computed from each anchor's members, at every grid value
  /// and at the baseline. The three intervention modes are assembled from
  /// these at query time.
  static BinStore build(const AnteHocNet& m, const RowMatrix& inputs, std::vector<FeatureGrid> grids, double max_distance) {
    if (inputs.rows() == 0) fail(Errc::validation, "cannot build a bin store from empty data");
    if (grids.empty()) fail(Errc::validation, "bin store needs at least one feature grid");
    BinStore s;
    s.model_fp_ = m.fingerprint();
    s.data_fp_ = matrix_fingerprint(inputs);
    s.dim_ = static_cast<std::size_t>(inputs.cols());
    s.max_distance_ = max_distance;
    s.scaling_ = UnitScaling::fit(inputs);
    s.clusters_ = cluster_rows(inputs, s.scaling_, max_distance);
    for (auto r : s.clusters_.anchors) s.anchor_points_.push_back(s.scaling_.apply(inputs.row(static_cast<Eigen::Index>(r)).transpose()));
    for (auto& g : grids) {
      check_grid(g.values);
      if (g.feature >= s.dim_) fail(Errc::validation, "feature grid position out of range");
    }
    s.grids_ = std::move(grids);
    for (std::size_t a = 0; a < s.clusters_.anchors.size(); ++a) {
      const RowMatrix sub = select_rows(inputs, s.clusters_.members[a]);
      for (const auto& g : s.grids_) {
        s.moments_.push_back(propagated_moments(m, sub, g.feature, g.baseline));
        for (double v : g.values) s.moments_.push_back(propagated_moments(m, sub, g.feature, v));
      }
    }
    s.index();
    return s;
  }

  std::size_t anchor_count() const { return clusters_.anchors.size(); }
  const Clustering& clustering() const { return clusters_; }
  const std::vector<FeatureGrid>& grids() const { return grids_; }
  std::uint64_t model_fingerprint() const { return model_fp_; }
  std::uint64_t data_fingerprint() const { return data_fp_; }
  double max_distance() const { return max_distance_; }

  void check_model(const AnteHocNet& m) const {
    if (m.fingerprint() != model_fp_) {
      fail(Errc::fingerprint_mismatch, "bin store was built for a different model (store " + to_hex(model_fp_) +
                                           ", model " + to_hex(m.fingerprint()) + ")");
    }
  }
  void check_data(const RowMatrix& inputs) const {
    if (matrix_fingerprint(inputs) != data_fp_) fail(Errc::fingerprint_mismatch, "bin store was built from a different dataset");
  }

  /// Index into anchors of the anchor nearest to `point`.
  std::size_t nearest_anchor(VectorCRef point) const {
    if (static_cast<std::size_t>(point.size()) != dim_) fail(Errc::dimension_mismatch, "query point has wrong dimension");
    return tree_.nearest(scaling_.apply(point)).id;
  }

  /// Index into grids() for the feature at input position `feature`.
  std::size_t grid_slot(std::size_t feature) const {
    for (std::size_t k = 0; k < grids_.size(); ++k) {
      if (grids_[k].feature == feature) return k;
    }
    fail(Errc::validation, "feature " + std::to_string(feature) + " is not in the bin store");
  }

  /// Nearest grid index; values outside the grid clamp to its ends.
  static std::size_t snap(const std::vector<double>& grid, double v) {
    auto it = std::lower_bound(grid.begin(), grid.end(), v);
    if (it == grid.begin()) return 0;
    if (it == grid.end()) return grid.size() - 1;
    auto hi = static_cast<std::size_t>(it - grid.begin());
    return (v - grid[hi - 1] <= grid[hi] - v) ? hi - 1 : hi;
  }

  /// Stored moments for the value `v`: the baseline's own entry when `v` is
  /// the baseline, else the nearest grid value.
  const PropagatedMoments& moments(std::size_t anchor, std::size_t slot, double v) const {
    const auto& g = grids_.at(slot);
    const std::size_t base = offsets_.at(anchor * grids_.size() + slot);
    if (v == g.baseline) return moments_[base];
    return moments_[base + 1 + snap(g.values, v)];
  }

  double snapped(std::size_t slot, double v) const {
    const auto& g = grids_.at(slot);
    return v == g.baseline ? v : g.values[snap(g.values, v)];
  }

  void write(std::ostream& os) const;
  static BinStore read(std::istream& in);

  friend bool operator==(const BinStore& a, const BinStore& b) {
    if (a.model_fp_ != b.model_fp_ || a.data_fp_ != b.data_fp_ || a.dim_ != b.dim_ || a.max_distance_ != b.max_distance_) return false;
    if (a.scaling_.lo != b.scaling_.lo || a.scaling_.scale != b.scaling_.scale) return false;
    if (a.clusters_.anchors != b.clusters_.anchors || a.clusters_.assignment != b.clusters_.assignment) return false;
    if (a.grids_.size() != b.grids_.size() || a.moments_.size() != b.moments_.size()) return false;
    for (std::size_t k = 0; k < a.grids_.size(); ++k) {
      const auto &x = a.grids_[k], &y = b.grids_[k];
      if (x.feature != y.feature || x.baseline != y.baseline || x.values != y.values) return false;
    }
    for (std::size_t k = 0; k < a.moments_.size(); ++k) {
      if (a.moments_[k].mean != b.moments_[k].mean || a.moments_[k].cov != b.moments_[k].cov) return false;
    }
    return true;
  }

  static std::uint64_t matrix_fingerprint(const RowMatrix& x) {
    Fnv1a h;
    h.add(static_cast<std::uint64_t>(x.rows()));
    h.add(static_cast<std::uint64_t>(x.cols()));
    h.add(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
    return h.value();
  }

 private:
  void index() {
    tree_ = KdTree(dim_);
    for (std::size_t a = 0; a < anchor_points_.size(); ++a) tree_.insert(anchor_points_[a]);
    offsets_.clear();
    std::size_t off = 0;
    for (std::size_t a = 0; a < clusters_.anchors.size(); ++a) {
      for (const auto& g : grids_) {
        offsets_.push_back(off);
        off += 1 + g.values.size();
      }
    }
    if (off != moments_.size()) fail(Errc::validation, "bin store stats block has the wrong size");
  }

  std::uint64_t model_fp_ = 0;
  std::uint64_t data_fp_ = 0;
  std::size_t dim_ = 0;
  double max_distance_ = 0.0;
  UnitScaling scaling_;
  Clustering clusters_;
  std::vector<std::vector<double>> anchor_points_;  // scaled coordinates
  std::vector<FeatureGrid> grids_;
  std::vector<PropagatedMoments> moments_;
  std::vector<std::size_t> offsets_;
  KdTree tree_{1};
};

// ---------------------------------------------------------------------------
// Store file, all integers and doubles little-endian:
//
//   "AHCEBINS" u32 version u32 0
//   u64 model fingerprint, u64 dataset fingerprint, u64 dim, f64 max distance
//   dim x (f64 lo, f64 scale)
//   u64 rows, rows x u64 anchor index
//   u64 anchors, anchors x u64 row id, anchors x dim x f64 scaled coordinates
//   u64 grids, per grid: u64 feature, f64 baseline, u64 count, count x f64
//   per anchor, per grid, baseline then each grid value:
//     dim x f64 mean, dim x dim x f64 covariance (column-major)

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    os_.write(reinterpret_cast<const char*>(b), 8);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    os_.write(reinterpret_cast<const char*>(b), 4);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::ostream& os_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}
  std::uint64_t u64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    return v;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b[k]) << (8 * k);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::uint64_t limit, const char* what) {
    auto v = u64();
    if (v > limit) fail(Errc::parse, std::string("bin store: implausible ") + what);
    return static_cast<std::size_t>(v);
  }
  void read(unsigned char* b, std::size_t n) {
    in_.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) fail(Errc::parse, "bin store: truncated file");
  }

 private:
  std::istream& in_;
};

inline constexpr char kStoreMagic[8] = {'A', 'H', 'C', 'E', 'B', 'I', 'N', 'S'};

}  // namespace detail

inline void BinStore::write(std::ostream& os) const {
  detail::LeWriter w(os);
  os.write(detail::kStoreMagic, 8);
  w.u32(kVersion);
  w.u32(0);
  w.u64(model_fp_);
  w.u64(data_fp_);
  w.u64(dim_);
  w.f64(max_distance_);
  for (std::size_t j = 0; j < dim_; ++j) {
    w.f64(scaling_.lo[j]);
    w.f64(scaling_.scale[j]);
  }
  w.u64(clusters_.assignment.size());
  for (auto a : clusters_.assignment) w.u64(a);
  w.u64(clusters_.anchors.size());
  for (auto r : clusters_.anchors) w.u64(r);
  for (const auto& p : anchor_points_) {
    for (double v : p) w.f64(v);
  }
  w.u64(grids_.size());
  for (const auto& g : grids_) {
    w.u64(g.feature);
    w.f64(g.baseline);
    w.u64(g.values.size());
    for (double v : g.values) w.f64(v);
  }
  for (const auto& pm : moments_) {
    for (Eigen::Index k = 0; k < pm.mean.size(); ++k) w.f64(pm.mean(k));
    for (Eigen::Index k = 0; k < pm.cov.size(); ++k) w.f64(pm.cov.data()[k]);
  }
  if (!os) fail(Errc::io, "bin store: write failed");
}

inline BinStore BinStore::read(std::istream& in) {
  detail::LeReader r(in);
  unsigned char magic[8];
  r.read(magic, 8);
  if (std::memcmp(magic, detail::kStoreMagic, 8) != 0) fail(Errc::parse, "bin store: bad magic");
  if (auto v = r.u32(); v != kVersion) fail(Errc::parse, "bin store: unsupported version " + std::to_string(v));
  r.u32();
  BinStore s;
  s.model_fp_ = r.u64();
  s.data_fp_ = r.u64();
  s.dim_ = r.count(1u << 16, "dimension");
  if (s.dim_ == 0) fail(Errc::parse, "bin store: zero dimension");
  s.max_distance_ = r.f64();
  for (std::size_t j = 0; j < s.dim_; ++j) {
    s.scaling_.lo.push_back(r.f64());
    s.scaling_.scale.push_back(r.f64());
  }
  const std::size_t rows = r.count(1ull << 32, "row count");
  for (std::size_t i = 0; i < rows; ++i) s.clusters_.assignment.push_back(r.count(rows, "anchor index"));
  const std::size_t anchors = r.count(rows, "anchor count");
  if (anchors == 0) fail(Errc::parse, "bin store: no anchors");
  s.clusters_.members.resize(anchors);
  for (std::size_t a = 0; a < anchors; ++a) s.clusters_.anchors.push_back(r.count(rows - 1, "anchor row"));
  for (std::size_t i = 0; i < rows; ++i) {
    auto a = s.clusters_.assignment[i];
    if (a >= anchors) fail(Errc::parse, "bin store: row assigned to a missing anchor");
    s.clusters_.members[a].push_back(i);
  }
  for (std::size_t a = 0; a < anchors; ++a) {
    if (s.clusters_.assignment[s.clusters_.anchors[a]] != a) fail(Errc::parse, "bin store: anchor is not its own member");
    std::vector<double> p(s.dim_);
    for (auto& v : p) v = r.f64();
    s.anchor_points_.push_back(std::move(p));
  }
  const std::size_t grids = r.count(s.dim_, "grid count");
  for (std::size_t k = 0; k < grids; ++k) {
    FeatureGrid g;
    g.feature = r.count(s.dim_ - 1, "feature position");
    g.baseline = r.f64();
    const std::size_t n = r.count(1u << 24, "grid size");
    for (std::size_t i = 0; i < n; ++i) g.values.push_back(r.f64());
    check_grid(g.values);
    s.grids_.push_back(std::move(g));
  }
  const auto d = static_cast<Eigen::Index>(s.dim_);
  for (std::size_t a = 0; a < anchors; ++a) {
    for (const auto& g : s.grids_) {
      for (std::size_t e = 0; e < 1 + g.values.size(); ++e) {
        PropagatedMoments pm{Vector(d), Matrix(d, d), g.feature};
        for (Eigen::Index k = 0; k < d; ++k) pm.mean(k) = r.f64();
        for (Eigen::Index k = 0; k < d * d; ++k) pm.cov.data()[k] = r.f64();
        s.moments_.push_back(std::move(pm));
      }
    }
  }
  s.index();
  return s;
}

inline void write_store_file(const std::string& path, const BinStore& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::io, "cannot write '" + path + "'");
  s.write(os);
}

inline BinStore read_store_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open '" + path + "'");
  return BinStore::read(in);
}

// ---------------------------------------------------------------------------
// Online queries

/// Answers queries from a store after checking it belongs to the model.
class BinnedExplainer {
 public:
  BinnedExplainer(const BinStore& store, const AnteHocNet& m) : store_(store), m_(m) { store.check_model(m); }

  /// Stats of the nearest anchor at the snapped intervention values.
  InterventionalStats query(VectorCRef point, std::size_t feature, const InterventionMode& mode) const {
    const std::size_t slot = store_.grid_slot(feature);
    const std::size_t anchor = store_.nearest_anchor(point);
    InterventionMode snapped = mode;
    snapped.value = store_.snapped(slot, mode.value);
    snapped.reference = store_.snapped(slot, mode.reference);
    return assemble_stats(store_.moments(anchor, slot, snapped.propagation_value()), snapped);
  }

  EffectCurves curves(VectorCRef point, std::size_t feature, const std::vector<double>& grid, double baseline,
                      HessianMode hessian) const {
    check_grid(grid);
    const std::size_t slot = store_.grid_slot(feature);
    const std::size_t anchor = store_.nearest_anchor(point);
    const double bs = store_.snapped(slot, baseline);
    const auto& at_ref = store_.moments(anchor, slot, bs);
    const auto& f = m_.predictor;
    const double ref = taylor_expectation(f, assemble_stats(at_ref, InterventionMode::total(bs)), hessian);
    EffectCurves c = make_curves(m_.graph.name(m_.graph.inputs().at(feature)), baseline, grid);
    for (double x : grid) {
      const double xs = store_.snapped(slot, x);
      const auto& at_x = store_.moments(anchor, slot, xs);
      const double t = taylor_expectation(f, assemble_stats(at_x, InterventionMode::total(xs)), hessian);
      const double d = taylor_expectation(f, assemble_stats(at_ref, InterventionMode::direct(xs, bs)), hessian);
      const double i = taylor_expectation(f, assemble_stats(at_x, InterventionMode::indirect(xs, bs)), hessian);
      c.ace.points.push_back({x, t - ref});
      c.adce.points.push_back({x, d - ref});
      c.aice.points.push_back({x, i - ref});
    }
    return c;
  }

 private:
  const BinStore& store_;
  const AnteHocNet& m_;
};

struct TimedCurves {
  EffectCurves curves;
  double seconds = 0.0;
};

inline TimedCurves effect_curves_binned(const BinStore& store, const AnteHocNet& m, VectorCRef point, std::size_t feature,
                                        const std::vector<double>& grid, double baseline, HessianMode hessian) {
  const auto t0 = std::chrono::steady_clock::now();
  BinnedExplainer ex(store, m);
  TimedCurves out{ex.curves(point, feature, grid, baseline, hessian), 0.0};
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark: the same random queries answered from scratch over the full
// training data and from the store. A query asks for ACE, ADCE and AICE of
// one feature at one intervention value for one test point.

struct BinningBenchmark {
  std::size_t queries = 0;
  std::size_t anchors = 0;
  double build_seconds = 0.0;
  double exact_seconds = 0.0;
  double binned_seconds = 0.0;
  double mean_abs_ace_drift = 0.0;
  double max_abs_ace_drift = 0.0;
  double speedup() const { return binned_seconds > 0 ? exact_seconds / binned_seconds : 0.0; }
};

inline BinningBenchmark benchmark_binning(const AnteHocNet& m, const RowMatrix& train_inputs, const BinStore& store,
                                          const RowMatrix& test_points, std::size_t queries, std::uint64_t seed,
                                          HessianMode hessian) {
  if (test_points.rows() == 0 || queries == 0) fail(Errc::usage, "benchmark needs test points and at least one query");
  struct Query {
    Eigen::Index row;
    std::size_t slot;
    double value;
  };
  std::vector<Query> qs;
  Stream rng(seed, 0x62656e6368ULL);
  for (std::size_t k = 0; k < queries; ++k) {
    Query q;
    q.row = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(test_points.rows())));
    q.slot = static_cast<std::size_t>(rng.below(store.grids().size()));
    const auto& g = store.grids()[q.slot].values;
    q.value = rng.uniform(g.front(), g.back());
    qs.push_back(q);
  }
  const auto& f = m.predictor;
  auto effects = [&](const PropagatedMoments& at_x, const PropagatedMoments& at_ref, double x, double ref_value) {
    const double ref = taylor_expectation(f, assemble_stats(at_ref, InterventionMode::total(ref_value)), hessian);
    return std::array<double, 3>{
        taylor_expectation(f, assemble_stats(at_x, InterventionMode::total(x)), hessian) - ref,
        taylor_expectation(f, assemble_stats(at_ref, InterventionMode::direct(x, ref_value)), hessian) - ref,
        taylor_expectation(f, assemble_stats(at_x, InterventionMode::indirect(x, ref_value)), hessian) - ref};
  };

  store.check_model(m);
  std::vector<double> exact_ace(queries), binned_ace(queries);
  auto t0 = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < queries; ++k) {
    const auto& q = qs[k];
    const auto& g = store.grids()[q.slot];
    auto at_x = propagated_moments(m, train_inputs, g.feature, q.value);
    auto at_ref = propagated_moments(m, train_inputs, g.feature, g.baseline);
    exact_ace[k] = effects(at_x, at_ref, q.value, g.baseline)[0];
  }
  auto t1 = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < queries; ++k) {
    const auto& q = qs[k];
    const auto& g = store.grids()[q.slot];
    const std::size_t anchor = store.nearest_anchor(test_points.row(q.row).transpose());
    const double xs = store.snapped(q.slot, q.value);
    binned_ace[k] = effects(store.moments(anchor, q.slot, xs), store.moments(anchor, q.slot, g.baseline), xs, g.baseline)[0];
  }
  auto t2 = std::chrono::steady_clock::now();

  BinningBenchmark b;
  b.queries = queries;
  b.anchors = store.anchor_count();
  b.exact_seconds = std::chrono::duration<double>(t1 - t0).count();
  b.binned_seconds = std::chrono::duration<double>(t2 - t1).count();
  for (std::size_t k = 0; k < queries; ++k) {
    const double d = std::abs(exact_ace[k] - binned_ace[k]);
    b.mean_abs_ace_drift += d / static_cast<double>(queries);
    b.max_abs_ace_drift = std::max(b.max_abs_ace_drift, d);
  }
  return b;
}

}  // namespace ahce
