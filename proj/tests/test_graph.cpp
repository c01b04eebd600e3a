#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "ahce/expression.hpp"
#include "ahce/graph.hpp"

using namespace ahce;

namespace {

const char* kSynthetic = R"(
[variables]
W
Z
X
Y
[target]
Y
[edges]
W -> Z   # comment
W -> X
Z -> X
Z -> Y
X -> Y
)";

std::vector<std::string> names(const CausalGraph& g, const std::vector<std::size_t>& ids) {
  std::vector<std::string> out;
  for (auto v : ids) out.push_back(g.name(v));
  return out;
}

Errc code_of(const std::string& text) {
  try {
    parse_graph(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return Errc::usage;
}

}  // namespace

TEST(Graph, ParsesSyntheticFile) {
  auto g = parse_graph(kSynthetic);
  EXPECT_EQ(g.size(), 4u);
  EXPECT_EQ(g.name(g.target()), "Y");
  EXPECT_EQ(g.edges().size(), 5u);
  EXPECT_EQ(names(g, g.inputs()), (std::vector<std::string>{"W", "Z", "X"}));
}

TEST(Graph, ShippedFilesLoad) {
  for (const char* f : {"synthetic.graph", "autompg.graph", "lung_cancer.graph", "sachs.graph"}) {
    SCOPED_TRACE(f);
    EXPECT_NO_THROW(load_graph_file(std::string(AHCE_DATA_DIR) + "/" + f));
  }
  EXPECT_EQ(load_graph_file(std::string(AHCE_DATA_DIR) + "/synthetic.graph"), parse_graph(kSynthetic));
}

TEST(Graph, Parents) {
  auto chain = CausalGraph::create({"W", "Z", "X", "Y"}, {{"W", "Z"}, {"Z", "X"}, {"X", "Y"}}, "Y");
  EXPECT_EQ(names(chain, chain.parents(chain.index_of("Z"))), (std::vector<std::string>{"W"}));
  EXPECT_TRUE(chain.parents(chain.index_of("W")).empty());

  auto diamond = CausalGraph::create({"A", "B", "C", "Y"}, {{"B", "C"}, {"A", "C"}, {"C", "Y"}}, "Y");
  EXPECT_EQ(names(diamond, diamond.parents(diamond.index_of("C"))), (std::vector<std::string>{"A", "B"}));
  EXPECT_THROW(
      {
        try {
          diamond.index_of("Q");
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), Errc::unknown_variable);
          throw;
        }
      },
      Error);
}

TEST(Graph, ChildrenExceptTarget) {
  auto g = parse_graph(kSynthetic);
  EXPECT_EQ(names(g, g.children_except_target(g.index_of("W"))), (std::vector<std::string>{"Z", "X"}));
  EXPECT_TRUE(g.children_except_target(g.index_of("X")).empty());
  EXPECT_EQ(names(g, g.children_except_target(g.index_of("Z"))), (std::vector<std::string>{"X"}));
}

TEST(Graph, TopologicalOrder) {
  auto chain = CausalGraph::create({"Y", "X", "Z", "W"}, {{"W", "Z"}, {"Z", "X"}, {"X", "Y"}}, "Y");
  EXPECT_EQ(names(chain, chain.topological_order()), (std::vector<std::string>{"W", "Z", "X", "Y"}));

  auto isolated = CausalGraph::create({"A", "B", "Y"}, {}, "Y");
  EXPECT_EQ(names(isolated, isolated.topological_order()), (std::vector<std::string>{"A", "B", "Y"}));

  auto g = parse_graph(kSynthetic);
  auto order = names(g, g.topological_order());
  EXPECT_EQ(order, (std::vector<std::string>{"W", "Z", "X", "Y"}));
}

TEST(Graph, TopologicalOrderRespectsEveryEdge) {
  auto g = load_graph_file(std::string(AHCE_DATA_DIR) + "/lung_cancer.graph");
  std::vector<std::size_t> rank(g.size());
  const auto& order = g.topological_order();
  for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = k;
  for (const auto& e : g.edges()) EXPECT_LT(rank[e.cause], rank[e.effect]);
}

TEST(Graph, ValidationErrors) {
  EXPECT_EQ(code_of("[variables]\nA\nY\n[target]\nY\n[edges]\nA -> Q\n"), Errc::dangling_edge);
  EXPECT_EQ(code_of("[variables]\nX\nY\n[target]\nY\n[edges]\nY -> X\n"), Errc::target_has_outgoing_edge);
  EXPECT_EQ(code_of("[variables]\nA\nB\nY\n[target]\nY\n[edges]\nA -> B\nB -> A\n"), Errc::cycle);
  EXPECT_EQ(code_of("[variables]\nA\nY\n[edges]\nA -> Y\n"), Errc::missing_target);
  EXPECT_EQ(code_of("[variables]\nA\nY\n[target]\nQ\n"), Errc::missing_target);
  EXPECT_EQ(code_of("[variables]\nA\nA\nY\n[target]\nY\n"), Errc::duplicate);
  EXPECT_EQ(code_of("[variables]\nA\nY\n[target]\nY\n[edges]\nA -> Y\nA -> Y\n"), Errc::duplicate);
  EXPECT_EQ(code_of("[variables]\nA\nY\n[target]\nY\n[edges]\nA Y\n"), Errc::parse);
  EXPECT_EQ(code_of("[bogus]\n"), Errc::parse);
  EXPECT_EQ(code_of("A\n"), Errc::parse);
}

TEST(Graph, ParseErrorsCarryLineNumbers) {
  try {
    parse_graph("[variables]\nA\nY\n[target]\nY\n[edges]\nA Y\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos) << e.what();
  }
}

TEST(Graph, CycleErrorNamesAnEdge) {
  try {
    CausalGraph::create({"A", "B", "C", "Y"}, {{"A", "B"}, {"B", "C"}, {"C", "A"}}, "Y");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::cycle);
    EXPECT_NE(std::string(e.what()).find("->"), std::string::npos) << e.what();
  }
}

TEST(Graph, FingerprintFollowsStructure) {
  auto a = parse_graph(kSynthetic);
  auto b = parse_graph(kSynthetic);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  auto c = CausalGraph::create({"W", "Z", "X", "Y"}, {{"W", "Z"}, {"W", "X"}, {"Z", "X"}, {"Z", "Y"}}, "Y");
  EXPECT_NE(a.fingerprint(), c.fingerprint());
  EXPECT_EQ(parse_graph(a.serialize()), a);
}

// ---------------------------------------------------------------------------

namespace {

double eval(const std::string& src, std::vector<double> values = {}) {
  const std::vector<std::string> vars{"W", "Z", "X"};
  auto e = Expression::compile(src, [&](const std::string& n) -> std::size_t {
    for (std::size_t k = 0; k < vars.size(); ++k) {
      if (vars[k] == n) return k;
    }
    fail(Errc::unknown_variable, n);
  });
  values.resize(vars.size());
  return e.evaluate(values);
}

}  // namespace

TEST(Expression, Arithmetic) {
  EXPECT_DOUBLE_EQ(eval("1 + 2 * 3"), 7.0);
  EXPECT_DOUBLE_EQ(eval("(1 + 2) * 3"), 9.0);
  EXPECT_DOUBLE_EQ(eval("-2^2"), -4.0);
  EXPECT_DOUBLE_EQ(eval("2^3^2"), 512.0);
  EXPECT_DOUBLE_EQ(eval("8 / 4 / 2"), 1.0);
  EXPECT_DOUBLE_EQ(eval("   "), 0.0);
}

TEST(Expression, SyntheticEquations) {
  EXPECT_DOUBLE_EQ(eval("W / 2", {0.8}), 0.4);
  EXPECT_DOUBLE_EQ(eval("X^3 + log(Z^2)", {0.0, 1.0, 1.0}), 1.0);
  EXPECT_DOUBLE_EQ(eval("-W - Z", {0.3, 0.2}), -0.5);
  EXPECT_DOUBLE_EQ(eval("X^3", {0, 0, -2.0}), -8.0);
}

TEST(Expression, Functions) {
  EXPECT_NEAR(eval("exp(1)"), std::exp(1.0), 1e-15);
  EXPECT_NEAR(eval("log(exp(2.5))"), 2.5, 1e-15);
  EXPECT_NEAR(eval("log(-2)"), std::log(2.0), 1e-15);
  EXPECT_NEAR(eval("2^0.5"), std::sqrt(2.0), 1e-15);
}

TEST(Expression, LogIsGuardedAtZero) {
  const double v = eval("log(Z^2)", {0.0, 0.0});
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_DOUBLE_EQ(v, std::log(kLogFloor));
}

TEST(Expression, Errors) {
  EXPECT_THROW(eval("1 +"), Error);
  EXPECT_THROW(eval("(1"), Error);
  EXPECT_THROW(eval("Q + 1"), Error);
  EXPECT_THROW(eval("sin(1)"), Error);
  EXPECT_THROW(eval("1 2"), Error);
}
