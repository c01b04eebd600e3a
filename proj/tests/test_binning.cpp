#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "ahce/binning.hpp"
#include "ahce/pipeline.hpp"

using namespace ahce;

namespace {

const PreparedData& fixture() {
  static const PreparedData p = [] {
    auto scm = builtin_synthetic();
    return prepare_data(scm.graph(), sample(scm, 1000, 7), 0.8, 7);
  }();
  return p;
}

const RowMatrix& train_inputs() {
  static const RowMatrix x = split_inputs(fixture().graph, fixture().train).inputs;
  return x;
}

const AnteHocNet& trained() {
  static const AnteHocNet m = [] {
    ModelOptions mo;
    mo.hidden = {8};
    mo.seed = 3;
    auto net = AnteHocNet::create(fixture().graph, mo);
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.epochs = 3;
    train(net, fixture().train, cfg);
    return net;
  }();
  return m;
}

std::vector<FeatureGrid> small_grids() {
  std::vector<FeatureGrid> g;
  for (std::size_t f = 0; f < 3; ++f) g.push_back({f, 0.5, linspace(0, 1, 11)});
  return g;
}

std::vector<double> random_point(Stream& s, std::size_t dim, bool lattice) {
  std::vector<double> p(dim);
  // Lattice points produce many exact ties and splits on equal coordinates.
  for (auto& v : p) v = lattice ? static_cast<double>(s.below(4)) : s.uniform(-1, 1);
  return p;
}

double sq(const std::vector<double>& a, std::span<const double> b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

}  // namespace

TEST(KdTree, AgreesWithBruteForce) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Stream s(seed, 77);
    const std::size_t dim = 1 + s.below(4);
    const bool lattice = seed % 2 == 0;
    KdTree tree(dim);
    for (int k = 0; k < 300; ++k) tree.insert(random_point(s, dim, lattice));
    for (int q = 0; q < 100; ++q) {
      auto p = random_point(s, dim, lattice);
      std::size_t best = 0;
      for (std::size_t id = 1; id < tree.size(); ++id) {
        if (sq(p, tree.point(id)) < sq(p, tree.point(best))) best = id;
      }
      EXPECT_EQ(tree.nearest(p).id, best) << "seed " << seed;
      const double r = lattice ? 1.0 : 0.3;
      std::size_t first = KdTree::npos;
      for (std::size_t id = 0; id < tree.size() && first == KdTree::npos; ++id) {
        if (sq(p, tree.point(id)) <= r * r) first = id;
      }
      EXPECT_EQ(tree.first_within(p, r).id, first) << "seed " << seed;
    }
  }
  KdTree empty(2);
  EXPECT_EQ(empty.nearest(std::vector<double>{0, 0}).id, KdTree::npos);
  EXPECT_THROW(empty.insert(std::vector<double>{1}), Error);
  EXPECT_THROW(KdTree(0), Error);
}

TEST(Clustering, DegenerateDistances) {
  const auto& x = train_inputs();
  auto scaling = UnitScaling::fit(x);
  std::set<std::vector<double>> distinct;
  for (Eigen::Index r = 0; r < x.rows(); ++r) distinct.insert(scaling.apply(x.row(r).transpose()));
  EXPECT_EQ(cluster_rows(x, scaling, 0.0).anchors.size(), distinct.size());
  EXPECT_EQ(cluster_rows(x, scaling, std::numeric_limits<double>::infinity()).anchors.size(), 1u);
  EXPECT_LT(cluster_rows(x, scaling, 10.0).anchors.size(), 1000u);
  EXPECT_THROW(cluster_rows(x, scaling, -1.0), Error);

  RowMatrix dup(3, 2);
  dup << 0.1, 0.2, 0.5, 0.5, 0.1, 0.2;
  auto c = cluster_rows(dup, UnitScaling::fit(dup), 0.0);
  EXPECT_EQ(c.anchors, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(c.assignment, (std::vector<std::size_t>{0, 1, 0}));
}

TEST(Clustering, MembersStayWithinDistanceOfTheirAnchor) {
  const auto& x = train_inputs();
  auto scaling = UnitScaling::fit(x);
  for (double d : {0.05, 0.1, 0.3}) {
    auto c = cluster_rows(x, scaling, d);
    std::size_t total = 0;
    for (std::size_t a = 0; a < c.anchors.size(); ++a) {
      auto anchor = scaling.apply(x.row(static_cast<Eigen::Index>(c.anchors[a])).transpose());
      for (auto r : c.members[a]) {
        EXPECT_EQ(c.assignment[r], a);
        EXPECT_LE(std::sqrt(sq(anchor, scaling.apply(x.row(static_cast<Eigen::Index>(r)).transpose()))), d);
      }
      total += c.members[a].size();
    }
    EXPECT_EQ(total, static_cast<std::size_t>(x.rows()));
  }
}

// Greedy clustering carries no general monotonicity guarantee, so this is
// checked on the fixture over a sweep of distances.
TEST(Clustering, LargerDistanceNeverAddsAnchorsOnFixture) {
  const auto& x = train_inputs();
  auto scaling = UnitScaling::fit(x);
  std::size_t previous = std::numeric_limits<std::size_t>::max();
  for (double d : {0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 10.0}) {
    const auto n = cluster_rows(x, scaling, d).anchors.size();
    EXPECT_LE(n, previous) << "distance " << d;
    previous = n;
  }
}

TEST(BinStore, StoredMomentsEqualRecomputationOnMembers) {
  const auto& m = trained();
  auto store = BinStore::build(m, train_inputs(), small_grids(), 0.2);
  ASSERT_GT(store.anchor_count(), 1u);
  const auto& c = store.clustering();
  for (std::size_t a = 0; a < store.anchor_count(); a += 3) {
    const RowMatrix members = select_rows(train_inputs(), c.members[a]);
    for (std::size_t slot = 0; slot < 3; ++slot) {
      const auto& g = store.grids()[slot];
      for (double v : {g.baseline, g.values[0], g.values[7]}) {
        auto direct = propagated_moments(m, members, g.feature, v);
        const auto& stored = store.moments(a, slot, v);
        EXPECT_EQ(stored.mean, direct.mean);
        EXPECT_EQ(stored.cov, direct.cov);
      }
    }
  }
}

TEST(BinStore, AnchorQueryAtGridValueIsExact) {
  const auto& m = trained();
  auto store = BinStore::build(m, train_inputs(), small_grids(), 0.2);
  BinnedExplainer ex(store, m);
  const auto& c = store.clustering();
  for (std::size_t a = 0; a < store.anchor_count(); a += 5) {
    const Vector point = train_inputs().row(static_cast<Eigen::Index>(c.anchors[a])).transpose();
    const RowMatrix members = select_rows(train_inputs(), c.members[a]);
    for (std::size_t f = 0; f < 3; ++f) {
      for (auto mode : {InterventionMode::total(0.3), InterventionMode::direct(0.3, 0.8), InterventionMode::indirect(0.3, 0.8)}) {
        auto got = ex.query(point, f, mode);
        auto want = interventional_stats(m, members, f, mode);
        EXPECT_EQ(got.mu, want.mu);
        EXPECT_EQ(got.cov, want.cov);
      }
    }
  }
}

TEST(BinStore, SnapsToNearestGridValueAndClamps) {
  const std::vector<double> g{0.0, 0.1, 0.2, 0.3};
  EXPECT_EQ(BinStore::snap(g, -5), 0u);
  EXPECT_EQ(BinStore::snap(g, 0.04), 0u);
  EXPECT_EQ(BinStore::snap(g, 0.16), 2u);
  EXPECT_EQ(BinStore::snap(g, 9), 3u);

  const auto& m = trained();
  auto store = BinStore::build(m, train_inputs(), small_grids(), 0.2);
  BinnedExplainer ex(store, m);
  Vector point = train_inputs().row(17).transpose();
  auto s = ex.query(point, 0, InterventionMode::total(0.52));
  EXPECT_EQ(s.mu(0), 0.5);
  auto clamped = ex.query(point, 0, InterventionMode::total(3.0));
  EXPECT_EQ(clamped.mu(0), 1.0);
  EXPECT_THROW(BinStore::build(m, train_inputs(), {{5, 0.5, {0.0, 1.0}}}, 0.2), Error);
}

TEST(BinStore, PerRowAnchorsReproduceExactCurves) {
  const auto& m = trained();
  RowMatrix rows = train_inputs().topRows(40);
  auto store = BinStore::build(m, rows, small_grids(), 0.0);
  ASSERT_EQ(store.anchor_count(), 40u);
  const auto grid = linspace(0, 1, 11);
  for (Eigen::Index r = 0; r < rows.rows(); r += 7) {
    const Vector point = rows.row(r).transpose();
    const RowMatrix single = rows.row(r);
    for (std::size_t f = 0; f < 3; ++f) {
      auto binned = effect_curves_binned(store, m, point, f, grid, 0.5, HessianMode::exact).curves;
      auto exact = effect_curves(m, single, f, grid, 0.5, HessianMode::exact);
      for (auto k : {EffectKind::ace, EffectKind::adce, EffectKind::aice}) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
          EXPECT_NEAR(binned.get(k).points[i].effect, exact.get(k).points[i].effect, 1e-10);
        }
      }
    }
  }
}

TEST(BinStore, FileRoundTripIsBitwise) {
  const auto& m = trained();
  auto store = BinStore::build(m, train_inputs(), small_grids(), 0.3);
  std::stringstream ss;
  store.write(ss);
  auto back = BinStore::read(ss);
  EXPECT_TRUE(back == store);
  BinnedExplainer a(store, m), b(back, m);
  Vector point = train_inputs().row(3).transpose();
  EXPECT_EQ(a.query(point, 1, InterventionMode::direct(0.2, 0.6)).mu, b.query(point, 1, InterventionMode::direct(0.2, 0.6)).mu);

  std::string bytes = ss.str();
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(BinStore::read(truncated), Error);
  bytes[0] = 'X';
  std::istringstream bad_magic(bytes);
  EXPECT_THROW(BinStore::read(bad_magic), Error);
}

TEST(BinStore, RejectsForeignModelAndData) {
  const auto& m = trained();
  auto store = BinStore::build(m, train_inputs(), small_grids(), 0.3);
  auto other = m;
  other.predictor.biases().back()(0) += 1e-9;
  try {
    BinnedExplainer ex(store, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::fingerprint_mismatch);
  }
  EXPECT_NO_THROW(store.check_data(train_inputs()));
  EXPECT_THROW(store.check_data(train_inputs().topRows(10)), Error);
}

TEST(BinStore, DeterministicBuild) {
  const auto& m = trained();
  auto a = BinStore::build(m, train_inputs(), small_grids(), 0.25);
  auto b = BinStore::build(m, train_inputs(), small_grids(), 0.25);
  EXPECT_TRUE(a == b);
}

// Drift of binned ACE against the exact query over the whole training set,
// on the small fixture model. Frozen from a measured mean of about 7e-3.
TEST(BinStore, BenchmarkDriftStaysBounded) {
  const auto& m = trained();
  auto store = BinStore::build(m, train_inputs(), small_grids(), 10.0);
  RowMatrix test = split_inputs(fixture().graph, fixture().test).inputs;
  auto b = benchmark_binning(m, train_inputs(), store, test, 100, 5, HessianMode::exact);
  std::cout << "mean drift " << b.mean_abs_ace_drift << " max " << b.max_abs_ace_drift << '\n';
  EXPECT_EQ(b.queries, 100u);
  EXPECT_EQ(b.anchors, 1u);
  EXPECT_LT(b.mean_abs_ace_drift, 0.02);
}
