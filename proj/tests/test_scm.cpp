#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "ahce/scm.hpp"

using namespace ahce;

namespace {

double column_mean(const Dataset& d, const std::string& name) { return d.values.col(static_cast<Eigen::Index>(d.column(name))).mean(); }

// E[log(Z^2)] for Z ~ N(m, s^2), midpoint rule on either side of the
// singularity at 0.
double expected_log_square(double m, double s) {
  const int n = 400000;
  double total = 0.0;
  for (int side = 0; side < 2; ++side) {
    const double a = side ? 0.0 : m - 12 * s;
    const double b = side ? m + 12 * s : 0.0;
    if (b <= a) continue;
    const double h = (b - a) / n;
    for (int k = 0; k < n; ++k) {
      const double z = a + (k + 0.5) * h;
      const double u = (z - m) / s;
      total += h * std::exp(-0.5 * u * u) / (s * std::sqrt(2 * std::numbers::pi)) * std::log(z * z);
    }
  }
  return total;
}

// E[Y | do(W=w)]: X ~ N(-3w/2, 0.02) so E[X^3] = mu^3 + 3 mu var, and
// Z ~ N(w/2, 0.01).
double expected_y_under_w(double w) {
  const double mu = -1.5 * w, var = 0.02;
  return mu * mu * mu + 3 * mu * var + expected_log_square(w / 2, 0.1);
}

}  // namespace

TEST(Scm, BuiltinMatchesShippedFile) {
  auto file = load_scm_file(std::string(AHCE_DATA_DIR) + "/synthetic.scm");
  auto builtin = builtin_synthetic();
  EXPECT_EQ(file.graph(), builtin.graph());
  EXPECT_EQ(file.serialize(), builtin.serialize());
  auto a = sample(file, 50, 3);
  auto b = sample(builtin, 50, 3);
  EXPECT_EQ(a.values, b.values);
}

TEST(Scm, BuiltinHasFiveEdgesAndNoDirectWToY) {
  auto scm = builtin_synthetic();
  const auto& g = scm.graph();
  EXPECT_EQ(g.edges().size(), 5u);
  const auto w = g.index_of("W"), z = g.index_of("Z"), x = g.index_of("X"), y = g.index_of("Y");
  EXPECT_TRUE(g.has_edge(w, z));
  EXPECT_TRUE(g.has_edge(w, x));
  EXPECT_TRUE(g.has_edge(z, x));
  EXPECT_TRUE(g.has_edge(z, y));
  EXPECT_TRUE(g.has_edge(x, y));
  EXPECT_FALSE(g.has_edge(w, y));
}

TEST(Scm, EquationsInClosedForm) {
  auto scm = builtin_synthetic();
  const auto& g = scm.graph();
  std::vector<double> v(4, 0.0);
  v[g.index_of("W")] = 0.8;
  EXPECT_DOUBLE_EQ(scm.equation(g.index_of("Z")).expression.evaluate(v), 0.4);
  v[g.index_of("X")] = 1.0;
  v[g.index_of("Z")] = 1.0;
  EXPECT_DOUBLE_EQ(scm.equation(g.index_of("Y")).expression.evaluate(v), 1.0);
}

TEST(Scm, ObservationalMeans) {
  auto d = sample(builtin_synthetic(), 1000, 7);
  EXPECT_NEAR(column_mean(d, "W"), 0.5, 0.03);
  EXPECT_NEAR(column_mean(d, "Z"), 0.25, 0.03);
  EXPECT_FALSE(d.provenance.interventional);
}

TEST(Scm, SamplingIsDeterministic) {
  auto scm = builtin_synthetic();
  auto a = sample(scm, 200, 7);
  auto b = sample(scm, 200, 7);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  auto c = sample(scm, 200, 8);
  EXPECT_NE(a.values, c.values);
  // Row r depends only on (seed, r).
  auto longer = sample(scm, 300, 7);
  EXPECT_EQ(RowMatrix(longer.values.topRows(200)), a.values);
}

TEST(Scm, NoiselessConstantModelGivesIdenticalRows) {
  auto scm = parse_scm(R"(
[variables]
A
B
Y
[target]
Y
[edges]
A -> B
B -> Y
[equations]
A = 2 ; none
B = A * 3
Y = B + 1 ; gaussian(0, 0)
)");
  auto d = sample(scm, 20, 1);
  for (Eigen::Index r = 1; r < d.values.rows(); ++r) EXPECT_EQ(d.values.row(r), d.values.row(0));
  EXPECT_EQ(d.values(0, 2), 7.0);
}

TEST(Scm, InterventionClampsValue) {
  auto d = sample_interventional(builtin_synthetic(), {{"W", 0.5}}, 500, 7);
  for (Eigen::Index r = 0; r < d.values.rows(); ++r) EXPECT_EQ(d.values(r, 0), 0.5);
  EXPECT_TRUE(d.provenance.interventional);
}

TEST(Scm, InterventionLeavesNonDescendantsAlone) {
  auto scm = builtin_synthetic();
  auto obs = sample(scm, 1000, 7);
  auto d = sample_interventional(scm, {{"X", 0.0}}, 1000, 7);
  EXPECT_NEAR(column_mean(d, "W"), 0.5, 0.03);
  EXPECT_NEAR(column_mean(d, "Z"), 0.25, 0.03);
  // Same noise, so the non-descendants are bitwise those of the
  // observational sample.
  EXPECT_EQ(d.values.col(0), obs.values.col(0));
  EXPECT_EQ(d.values.col(1), obs.values.col(1));
}

TEST(Scm, InterventionOnWShiftsZ) {
  auto d = sample_interventional(builtin_synthetic(), {{"W", 1.0}}, 1000, 7);
  EXPECT_NEAR(column_mean(d, "Z"), 0.5, 0.03);
}

TEST(Scm, AnalyticInterventionalMeans) {
  auto scm = builtin_synthetic();
  const std::size_t n = 20000;
  for (int k = 0; k < 10; ++k) {
    const double w = k / 9.0;
    auto d = sample_interventional(scm, {{"W", w}}, n, 100 + static_cast<std::uint64_t>(k));
    for (auto [name, expected] : {std::pair{"Z", w / 2}, std::pair{"X", -1.5 * w}}) {
      auto col = d.values.col(static_cast<Eigen::Index>(d.column(name)));
      const double mean = col.mean();
      const double se = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n - 1) / static_cast<double>(n));
      EXPECT_LE(std::abs(mean - expected), 3 * se) << name << " at w=" << w;
    }
  }
}

TEST(Scm, InterventionErrors) {
  auto scm = builtin_synthetic();
  EXPECT_THROW(sample_interventional(scm, {{"Y", 0.0}}, 10, 1), Error);
  EXPECT_THROW(sample_interventional(scm, {{"Q", 0.0}}, 10, 1), Error);
  EXPECT_THROW(sample(scm, 0, 1), Error);
}

TEST(Scm, ParseErrors) {
  const std::string head = "[variables]\nA\nY\n[target]\nY\n[edges]\nA -> Y\n[equations]\n";
  EXPECT_THROW(parse_scm(head + "A = ; uniform(0, 1)\n"), Error);  // no equation for Y
  EXPECT_THROW(parse_scm(head + "A = ; uniform(0, 1)\nY = A ; cauchy(0, 1)\n"), Error);
  EXPECT_THROW(parse_scm(head + "A = ; uniform(1, 0)\nY = A\n"), Error);
  EXPECT_THROW(parse_scm(head + "A = ; uniform(0, 1)\nY = 2\n"), Error);  // ignores parent A
  EXPECT_THROW(parse_scm(head + "A = ; uniform(0, 1)\nA = 1\nY = A\n"), Error);
  EXPECT_NO_THROW(parse_scm(head + "A = ; uniform(0, 1)\nY = A ; gaussian(0, 0.1)\n"));
}

TEST(GroundTruth, BaselinePointIsExactlyZero) {
  auto scm = builtin_synthetic();
  auto gt = ground_truth_effects(scm, "W", {0.2, 0.5, 0.9}, 0.5, 5000, 11);
  for (auto k : {EffectKind::ace, EffectKind::adce, EffectKind::aice}) EXPECT_EQ(gt.curves.get(k).points[1].effect, 0.0);
}

TEST(GroundTruth, FeatureWithoutChildrenHasNoIndirectEffect) {
  auto scm = builtin_synthetic();
  auto grid = linspace(-2.0, 0.5, 15);
  auto gt = ground_truth_effects(scm, "X", grid, -0.75, 20000, 11);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_LE(std::abs(gt.curves.aice.points[k].effect), 2 * gt.aice_stderr[k] + 1e-12) << "x=" << grid[k];
    EXPECT_DOUBLE_EQ(gt.curves.ace.points[k].effect, gt.curves.adce.points[k].effect);
  }
}

TEST(GroundTruth, WHasNoDirectEffect) {
  auto gt = ground_truth_effects(builtin_synthetic(), "W", linspace(0, 1, 5), 0.5, 5000, 11);
  for (const auto& p : gt.curves.adce.points) EXPECT_EQ(p.effect, 0.0);
}

// Frozen after checking it against the quadrature oracle below.
TEST(GroundTruth, GoldenValueForW) {
  const double golden = -1.4342320018341226;
  auto gt = ground_truth_effects(builtin_synthetic(), "W", {1.0}, 0.5, 100000, 11);
  EXPECT_DOUBLE_EQ(gt.curves.ace.points[0].effect, golden);
  const double oracle = expected_y_under_w(1.0) - expected_y_under_w(0.5);
  EXPECT_LE(std::abs(golden - oracle), 3 * gt.ace_stderr[0]) << "oracle " << oracle;
}

TEST(GroundTruth, ThreadCountDoesNotChangeResults) {
  auto scm = builtin_synthetic();
  auto grid = linspace(0, 1, 7);
  auto a = ground_truth_effects(scm, "Z", grid, 0.25, 3000, 5, 1);
  auto b = ground_truth_effects(scm, "Z", grid, 0.25, 3000, 5, 3);
  for (auto k : {EffectKind::ace, EffectKind::adce, EffectKind::aice}) {
    EXPECT_EQ(a.curves.get(k).effects(), b.curves.get(k).effects());
  }
}

TEST(GroundTruth, RejectsTargetAndBadGrid) {
  auto scm = builtin_synthetic();
  EXPECT_THROW(ground_truth_effects(scm, "Y", {0.0}, 0.0, 10, 1), Error);
  EXPECT_THROW(ground_truth_effects(scm, "W", {0.5, 0.1}, 0.0, 10, 1), Error);
  EXPECT_THROW(ground_truth_effects(scm, "W", {0.5}, 0.0, 0, 1), Error);
}
