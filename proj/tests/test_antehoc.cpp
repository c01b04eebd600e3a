#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "ahce/pipeline.hpp"
#include "oracles.hpp"

using namespace ahce;

namespace {

const PreparedData& fixture() {
  static const PreparedData p = [] {
    auto scm = builtin_synthetic();
    return prepare_data(scm.graph(), sample(scm, 1000, 7), 0.8, 7);
  }();
  return p;
}

Vector vec(std::initializer_list<double> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return x;
}

LateralFunction linear_fn(std::size_t position, std::vector<std::size_t> parents, std::vector<double> w, double b) {
  LateralFunction f;
  f.position = position;
  f.parents = std::move(parents);
  f.net = Mlp({f.parents.size(), 1}, Activation::identity, Activation::identity);
  for (std::size_t j = 0; j < w.size(); ++j) f.net.weights()[0](0, static_cast<Eigen::Index>(j)) = w[j];
  f.net.biases()[0](0) = b;
  return f;
}

// W -> Z is the only edge among the inputs.
CausalGraph wz_graph() { return CausalGraph::create({"W", "Z", "X", "Y"}, {{"W", "Z"}, {"Z", "Y"}, {"X", "Y"}}, "Y"); }

CausalGraph chain_graph() { return CausalGraph::create({"W", "Z", "X", "Y"}, {{"W", "Z"}, {"Z", "X"}, {"X", "Y"}}, "Y"); }

AnteHocNet small_model(const CausalGraph& g, bool with_layer0, std::uint64_t seed = 3) {
  ModelOptions mo;
  mo.hidden = {6};
  mo.with_layer0 = with_layer0;
  mo.seed = seed;
  return AnteHocNet::create(g, mo);
}

bool same_layer0(const LayerZero& a, const LayerZero& b) { return a == b; }

}  // namespace

TEST(LayerZero, WiringFollowsGraph) {
  const auto& g = fixture().graph;
  auto l0 = LayerZero::wired(g, LateralKind::linear, 1);
  ASSERT_EQ(l0.functions().size(), 2u);  // Z and X have parents, W does not
  EXPECT_EQ(l0.functions()[0].position, 1u);
  EXPECT_EQ(l0.functions()[0].parents, (std::vector<std::size_t>{0}));
  EXPECT_EQ(l0.functions()[1].position, 2u);
  EXPECT_EQ(l0.functions()[1].parents, (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(l0.matches(g));
  EXPECT_EQ(l0.slot(0), kNoPosition);
  EXPECT_EQ(l0.downstream(0), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(l0.downstream(1), (std::vector<std::size_t>{1}));
  EXPECT_TRUE(l0.downstream(2).empty());
  EXPECT_THROW(LayerZero::from_functions(g, {linear_fn(1, {2}, {1.0}, 0.0)}), Error);
}

TEST(LayerZero, NoEdgesLeavesInputsUnchanged) {
  auto g = CausalGraph::create({"A", "B", "Y"}, {{"A", "Y"}, {"B", "Y"}}, "Y");
  auto l0 = LayerZero::wired(g, LateralKind::mlp, 1);
  EXPECT_TRUE(l0.empty());
  Vector x = vec({0.3, 0.9});
  EXPECT_EQ(l0.derive(x, DeriveMode::propagate), x);
  EXPECT_EQ(l0.regularizer(RowMatrix::Constant(3, 2, 0.4)), 0.0);
}

TEST(LayerZero, DerivesWithDocumentedLinearForm) {
  auto g = wz_graph();
  auto l0 = LayerZero::from_functions(g, {linear_fn(1, {0}, {0.5}, 0.0)});
  EXPECT_DOUBLE_EQ(l0.derive(vec({0.8, 123.0, 0.1}), DeriveMode::propagate)(1), 0.4);
}

TEST(LayerZero, PropagateChainsThroughDerivedParents) {
  auto g = chain_graph();
  auto l0 = LayerZero::from_functions(g, {linear_fn(2, {1}, {2.0}, 0.1), linear_fn(1, {0}, {0.5}, 0.0)});
  Vector x = vec({0.8, 0.3, 5.0});
  Vector p = l0.derive(x, DeriveMode::propagate);
  EXPECT_DOUBLE_EQ(p(1), 0.4);
  EXPECT_DOUBLE_EQ(p(2), 2.0 * 0.4 + 0.1);
  Vector o = l0.derive(x, DeriveMode::observed);
  EXPECT_DOUBLE_EQ(o(1), 0.4);
  EXPECT_DOUBLE_EQ(o(2), 2.0 * 0.3 + 0.1);
  EXPECT_EQ(p(0), x(0));
}

TEST(LayerZero, NonEdgesHaveNoSensitivity) {
  auto g = load_graph_file(std::string(AHCE_DATA_DIR) + "/autompg.graph");
  auto l0 = LayerZero::wired(g, LateralKind::mlp, 5);
  const auto in = g.inputs();
  Vector x = oracle::random_point(2, in.size());
  for (auto mode : {DeriveMode::observed, DeriveMode::propagate}) {
    const Vector base = l0.derive(x, mode);
    for (std::size_t u = 0; u < in.size(); ++u) {
      Vector bumped = x;
      bumped(static_cast<Eigen::Index>(u)) += 0.25;
      const Vector out = l0.derive(bumped, mode);
      for (std::size_t v = 0; v < in.size(); ++v) {
        if (u == v || l0.slot(v) == kNoPosition) continue;
        const bool edge = g.has_edge(in[u], in[v]);
        // Observed mode sees only the parents' observed values. Propagate mode
        // overwrites every derived input, so only underived ancestors matter.
        bool ancestor = edge;
        if (mode == DeriveMode::propagate) {
          ancestor = false;
          if (l0.slot(u) == kNoPosition) {
            for (auto s : l0.downstream(u)) ancestor = ancestor || l0.functions()[s].position == v;
          }
        }
        const double d = out(static_cast<Eigen::Index>(v)) - base(static_cast<Eigen::Index>(v));
        if (ancestor) {
          EXPECT_NE(d, 0.0) << g.name(in[u]) << " -> " << g.name(in[v]);
        } else {
          EXPECT_EQ(d, 0.0) << g.name(in[u]) << " -> " << g.name(in[v]);
        }
      }
    }
  }
}

TEST(LayerZero, RegularizerExamples) {
  auto g = wz_graph();
  auto l0 = LayerZero::from_functions(g, {linear_fn(1, {0}, {0.5}, 0.0)});
  RowMatrix exact(2, 3);
  exact << 0.8, 0.4, 0.0, 0.2, 0.1, 0.0;
  EXPECT_EQ(l0.regularizer(exact), 0.0);
  RowMatrix one(1, 3);
  one << 0.8, 0.4 + 0.3, 0.0;
  EXPECT_NEAR(l0.regularizer(one), 0.09, 1e-15);
  RowMatrix two(2, 3);
  two << 0.8, 1.4, 0.0, 0.2, 2.1, 0.0;
  EXPECT_NEAR(l0.regularizer(two), 5.0, 1e-12);
}

TEST(Training, PhaseOneLeavesLayerZeroUntouched) {
  auto m = small_model(fixture().graph, true);
  const auto before = m.layer0;
  const auto predictor_before = m.predictor;
  TrainConfig cfg;
  phase1_epoch(m, fixture().train, cfg);
  EXPECT_TRUE(same_layer0(m.layer0, before));
  EXPECT_FALSE(m.predictor == predictor_before);
}

TEST(Training, ZeroLearningRateLeavesModel) {
  auto m = small_model(fixture().graph, true);
  const auto fp = m.fingerprint();
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  auto log = train(m, fixture().train, cfg);
  EXPECT_EQ(m.fingerprint(), fp);
  EXPECT_EQ(log.size(), 4u);
}

TEST(Training, ZeroEpochsGivesEmptyLog) {
  auto m = small_model(fixture().graph, true);
  const auto fp = m.fingerprint();
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(train(m, fixture().train, cfg).empty());
  EXPECT_EQ(m.fingerprint(), fp);
}

TEST(Training, PhaseTwoWithoutEdgesAndLambdaZeroIsPhaseOne) {
  auto g = CausalGraph::create({"W", "Z", "X", "Y"}, {{"W", "Y"}, {"Z", "Y"}, {"X", "Y"}}, "Y");
  Dataset data = fixture().train;
  ModelOptions mo;
  mo.hidden = {6};
  mo.lambda = 0.0;
  mo.seed = 4;
  auto a = AnteHocNet::create(g, mo);
  auto b = a;
  TrainConfig cfg;
  cfg.seed = 9;
  phase1_epoch(a, data, cfg, 0);
  phase2_epoch(b, data, cfg, 0);
  EXPECT_TRUE(a.predictor == b.predictor);
  const auto d = split_inputs(g, data);
  EXPECT_EQ(evaluate_phase_loss(a, d, 1).loss, evaluate_phase_loss(b, d, 2).loss);
}

TEST(Training, LossDecomposes) {
  auto m = small_model(fixture().graph, true);
  m.lambda = 0.37;
  const auto d = split_inputs(m.graph, fixture().train);
  auto rec = evaluate_phase_loss(m, d, 2);
  EXPECT_NEAR(rec.loss, rec.erm + m.lambda * rec.regularizer, 1e-10);
  EXPECT_NEAR(rec.regularizer * static_cast<double>(d.rows()), m.layer0.regularizer(d.inputs), 1e-9);
  // Batch of one row: the step objective is exactly the regularized loss.
  std::vector<std::size_t> row{5};
  auto g = phase2_gradients(m, d, row);
  Vector x = d.inputs.row(5).transpose();
  const double erm = std::pow(m.predict(m.derive(x)) - d.targets(5), 2);
  EXPECT_NEAR(g.loss, erm + m.lambda * m.layer0.regularizer(RowMatrix(d.inputs.row(5))), 1e-12);
}

TEST(Training, PhaseTwoGradientMatchesFiniteDifferences) {
  const auto& p = fixture();
  const auto d = split_inputs(p.graph, p.train);
  std::vector<std::size_t> rows{3, 17, 250};
  for (auto mode : {DeriveMode::propagate, DeriveMode::observed}) {
    for (auto kind : {LateralKind::linear, LateralKind::mlp}) {
      ModelOptions mo;
      mo.hidden = {5};
      mo.lateral = kind;
      mo.lateral_width = 3;
      mo.lambda = 0.7;
      mo.derive = mode;
      mo.seed = 8;
      auto m = AnteHocNet::create(p.graph, mo);
      auto g = phase2_gradients(m, d, rows);
      auto objective = [&] { return phase2_gradients(m, d, rows).loss; };
      auto analytic = oracle::flatten(g.predictor);
      auto fd = oracle::parameter_fd(m.predictor, objective);
      for (std::size_t s = 0; s < g.layer0.size(); ++s) {
        auto a = oracle::flatten(g.layer0[s]);
        auto f = oracle::parameter_fd(m.layer0.functions()[s].net, objective);
        analytic.insert(analytic.end(), a.begin(), a.end());
        fd.insert(fd.end(), f.begin(), f.end());
      }
      EXPECT_LT(oracle::relative_error(analytic, fd), 1e-5) << to_string(mode) << ' ' << to_string(kind);
    }
  }
}

TEST(Training, Deterministic) {
  auto a = small_model(fixture().graph, true);
  auto b = small_model(fixture().graph, true);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  auto la = train(a, fixture().train, cfg);
  auto lb = train(b, fixture().train, cfg);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t k = 0; k < la.size(); ++k) EXPECT_EQ(la[k].loss, lb[k].loss);
}

TEST(Training, NonFiniteLossNamesEpochPhaseAndRow) {
  auto m = small_model(fixture().graph, true);
  m.predictor.biases().back()(0) = std::numeric_limits<double>::infinity();
  try {
    train(m, fixture().train, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.exit_code(), 3);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("phase 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("row"), std::string::npos) << msg;
  }
}

TEST(Training, DefaultRunLogsTwoPhasesPerEpoch) {
  auto m = AnteHocNet::create(fixture().graph, ModelOptions{});
  auto log = train(m, fixture().train, TrainConfig{});
  ASSERT_EQ(log.size(), 40u);
  for (std::size_t k = 0; k < log.size(); ++k) {
    EXPECT_EQ(log[k].epoch, k / 2);
    EXPECT_EQ(log[k].phase, k % 2 ? 2 : 1);
  }
}

// With a very large lambda the lateral linear function for Z is the least
// squares fit of Z on W; in raw units that is Z = 0.5 W.
TEST(Training, LargeLambdaRecoversGeneratingCoefficients) {
  const auto& p = fixture();
  ModelOptions mo;
  mo.lambda = 1e6;
  mo.seed = 1;
  auto m = AnteHocNet::create(p.graph, mo);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 1;
  train(m, p.train, cfg);
  const auto& fz = m.layer0.functions()[m.layer0.slot(1)];
  const double slope = fz.net.weights()[0](0, 0), intercept = fz.net.biases()[0](0);

  const auto d = split_inputs(p.graph, p.train);
  Matrix A(d.inputs.rows(), 2);
  A.col(0) = d.inputs.col(0);
  A.col(1).setOnes();
  Vector ls = A.colPivHouseholderQr().solve(Vector(d.inputs.col(1)));
  EXPECT_NEAR(slope, ls(0), 0.05);
  EXPECT_NEAR(intercept, ls(1), 0.05);

  const auto& sc = p.scaler;
  const double raw_slope = slope * sc.range(1) / sc.range(0);
  const double raw_intercept = sc.lo[1] + sc.range(1) * intercept - raw_slope * sc.lo[0];
  EXPECT_NEAR(raw_slope, 0.5, 0.05);
  EXPECT_NEAR(raw_intercept, 0.0, 0.05);
}

// Smoke criterion on the held-out 20% at the default settings. The plain
// network clears it; see the ledger for the ante-hoc model.
TEST(Training, HeldOutRmseSmoke) {
  const auto& p = fixture();
  const auto test = split_inputs(p.graph, p.test);
  for (bool with_layer0 : {false, true}) {
    ModelOptions mo;
    mo.with_layer0 = with_layer0;
    mo.seed = 1;
    auto m = AnteHocNet::create(p.graph, mo);
    TrainConfig cfg;
    cfg.seed = 1;
    train(m, p.train, cfg);
    EXPECT_LE(prediction_rmse(m, test), 0.05) << (with_layer0 ? "with" : "without") << " layer 0";
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  for (auto kind : {LateralKind::linear, LateralKind::mlp}) {
    ModelOptions mo;
    mo.lateral = kind;
    mo.lambda = 0.3;
    mo.derive = DeriveMode::observed;
    auto m = AnteHocNet::create(fixture().graph, mo);
    std::stringstream ss;
    write_checkpoint(ss, m);
    auto back = read_checkpoint(ss, fixture().graph);
    EXPECT_EQ(back.fingerprint(), m.fingerprint());
    EXPECT_TRUE(back.predictor == m.predictor);
    EXPECT_TRUE(back.layer0 == m.layer0);
    EXPECT_EQ(back.lambda, 0.3);
    EXPECT_EQ(back.derive_mode, DeriveMode::observed);
  }
}

TEST(Checkpoint, PlainModelHasEmptyLayerZero) {
  auto m = small_model(fixture().graph, false);
  std::stringstream ss;
  write_checkpoint(ss, m);
  EXPECT_NE(ss.str().find("layer0 0\n"), std::string::npos);
  auto back = read_checkpoint(ss, fixture().graph);
  EXPECT_TRUE(back.layer0.empty());
}

TEST(Checkpoint, GraphMismatchIsRejected) {
  auto m = small_model(fixture().graph, true);
  std::stringstream ss;
  write_checkpoint(ss, m);
  try {
    read_checkpoint(ss, chain_graph());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::fingerprint_mismatch);
  }
  std::istringstream junk("ahce-checkpoint 2\n");
  EXPECT_THROW(read_checkpoint(junk, fixture().graph), Error);
}
