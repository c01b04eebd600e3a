#pragma once

// Executable structural causal models: observational and interventional
// sampling plus the Monte-Carlo ground truth for ACE / ADCE / AICE.
//
// SCM file = graph file + an [equations] section, one line per variable:
//
//   [equations]
//   W = ; uniform(0, 1)
//   Z = W / 2 ; gaussian(0, 0.1)
//   X = -W - Z ; gaussian(0, 0.1)
//   Y = X^3 + log(Z^2) ; gaussian(0, 0.1)
//
// The noise clause is `none`, `gaussian(mean, stddev)` or `uniform(low, high)`
// and is added to the expression value. An omitted clause means `none`; an
// empty expression means the variable is pure noise.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <exception>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "ahce/curve.hpp"
#include "ahce/dataset.hpp"
#include "ahce/error.hpp"
#include "ahce/expression.hpp"
#include "ahce/graph.hpp"
#include "ahce/random.hpp"

namespace ahce {

struct NoiseSpec {
  enum class Kind { none, gaussian, uniform };
  Kind kind = Kind::none;
  double a = 0.0;  // mean | low
  double b = 0.0;  // stddev | high

  static NoiseSpec none() { return {}; }
  static NoiseSpec gaussian(double mean, double stddev) {
    if (!(stddev >= 0.0)) fail(Errc::validation, "gaussian noise requires stddev >= 0");
    return {Kind::gaussian, mean, stddev};
  }
  static NoiseSpec uniform(double low, double high) {
    if (!(low <= high)) fail(Errc::validation, "uniform noise requires low <= high");
    return {Kind::uniform, low, high};
  }

  double draw(Stream& s) const {
    switch (kind) {
      case Kind::gaussian:
        return a + b * s.normal();
      case Kind::uniform:
        return s.uniform(a, b);
      case Kind::none:
        break;
    }
    return 0.0;
  }

  std::string to_string() const {
    char buf[96];
    switch (kind) {
      case Kind::gaussian:
        std::snprintf(buf, sizeof buf, "gaussian(%.17g, %.17g)", a, b);
        return buf;
      case Kind::uniform:
        std::snprintf(buf, sizeof buf, "uniform(%.17g, %.17g)", a, b);
        return buf;
      case Kind::none:
        break;
    }
    return "none";
  }

  static NoiseSpec parse(const std::string& text) {
    auto t = detail::trim(text);
    if (t.empty() || t == "none") return none();
    auto open = t.find('(');
    if (open == std::string::npos || t.back() != ')') fail(Errc::parse, "bad noise clause '" + t + "'");
    auto name = detail::trim(std::string_view(t).substr(0, open));
    auto args = detail::split_csv_line(t.substr(open + 1, t.size() - open - 2));
    if (args.size() != 2) fail(Errc::parse, "noise clause '" + t + "' needs two arguments");
    double p[2];
    for (int k = 0; k < 2; ++k) {
      char* end = nullptr;
      p[k] = std::strtod(args[static_cast<std::size_t>(k)].c_str(), &end);
      if (args[static_cast<std::size_t>(k)].empty() || *end != '\0') fail(Errc::parse, "bad number in noise clause '" + t + "'");
    }
    if (name == "gaussian") return gaussian(p[0], p[1]);
    if (name == "uniform") return uniform(p[0], p[1]);
    fail(Errc::parse, "unknown noise kind '" + name + "'");
  }
};

struct StructuralEquation {
  std::size_t variable = 0;
  Expression expression;
  NoiseSpec noise;
};

struct EquationSource {
  std::string variable;
  std::string expression;
  NoiseSpec noise;
};

class ScmSpec {
 public:
  /// One equation per graph variable; each expression must reference
  /// exactly the variable's parents.
  static ScmSpec create(CausalGraph graph, const std::vector<EquationSource>& sources) {
    ScmSpec s;
    s.graph_ = std::move(graph);
    const auto& g = s.graph_;
    s.equations_.resize(g.size());
    std::vector<bool> seen(g.size(), false);
    for (const auto& src : sources) {
      auto v = g.index_of(src.variable);
      if (seen[v]) fail(Errc::duplicate, "two equations for '" + src.variable + "'");
      seen[v] = true;
      auto expr = Expression::compile(src.expression, [&](const std::string& name) { return g.index_of(name); });
      const auto& pa = g.parents(v);
      std::set<std::size_t> parents(pa.begin(), pa.end());
      if (expr.references() != parents) {
        fail(Errc::validation, "equation for '" + src.variable + "' must reference exactly its graph parents");
      }
      s.equations_[v] = {v, std::move(expr), src.noise};
    }
    for (std::size_t v = 0; v < g.size(); ++v) {
      if (!seen[v]) fail(Errc::validation, "no equation for '" + g.name(v) + "'");
    }
    return s;
  }

  const CausalGraph& graph() const { return graph_; }
  const StructuralEquation& equation(std::size_t v) const { return equations_.at(v); }

  /// Noise for every variable, drawn in declaration order.
  void draw_noise(Stream& s, std::span<double> out) const {
    for (std::size_t v = 0; v < equations_.size(); ++v) out[v] = equations_[v].noise.draw(s);
  }

  /// Evaluates `order` (a topologically sorted subset) in place. Variables
  /// outside `order` keep their current value in `values`.
  void propagate(std::span<const std::size_t> order, std::span<const double> noise, std::span<double> values) const {
    for (auto v : order) values[v] = equations_[v].expression.evaluate(values) + noise[v];
  }

  /// Evaluates one row with the given variables clamped.
  void evaluate(std::span<const double> noise, const std::vector<std::optional<double>>& clamp, std::span<double> values) const {
    for (auto v : graph_.topological_order()) {
      values[v] = clamp[v] ? *clamp[v] : equations_[v].expression.evaluate(values) + noise[v];
    }
  }

  /// Descendants of `v` (excluding v) in topological order, target included.
  std::vector<std::size_t> descendants(std::size_t v) const {
    std::vector<bool> mark(graph_.size(), false);
    mark[v] = true;
    std::vector<std::size_t> out;
    for (auto u : graph_.topological_order()) {
      if (u == v) continue;
      for (auto p : graph_.parents(u)) {
        if (mark[p]) {
          mark[u] = true;
          out.push_back(u);
          break;
        }
      }
    }
    return out;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << graph_.serialize() << "[equations]\n";
    for (const auto& eq : equations_) {
      os << graph_.name(eq.variable) << " = " << eq.expression.source() << " ; " << eq.noise.to_string() << '\n';
    }
    return os.str();
  }

 private:
  CausalGraph graph_;
  std::vector<StructuralEquation> equations_;
};

inline ScmSpec load_scm(std::istream& in) {
  auto s = detail::read_sections(in, "equations");
  auto graph = CausalGraph::create(std::move(s.variables), s.edges, s.target);
  std::vector<EquationSource> sources;
  for (const auto& [lineno, text] : s.extra) {
    auto eq = text.find('=');
    if (eq == std::string::npos) detail::parse_fail(lineno, "expected 'name = expression ; noise'");
    auto semi = text.find(';', eq);
    EquationSource src;
    src.variable = detail::trim(std::string_view(text).substr(0, eq));
    src.expression = detail::trim(std::string_view(text).substr(eq + 1, semi == std::string::npos ? std::string::npos : semi - eq - 1));
    try {
      src.noise = semi == std::string::npos ? NoiseSpec::none() : NoiseSpec::parse(text.substr(semi + 1));
    } catch (const Error& e) {
      detail::parse_fail(lineno, e.what());
    }
    sources.push_back(std::move(src));
  }
  return ScmSpec::create(std::move(graph), sources);
}

inline ScmSpec parse_scm(const std::string& text) {
  std::istringstream in(text);
  return load_scm(in);
}

inline ScmSpec load_scm_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open '" + path + "'");
  return load_scm(in);
}

/// W <- Uniform(0,1); Z <- W/2 + N(0,0.1); X <- -W - Z + N(0,0.1);
/// Y <- X^3 + log(Z^2) + N(0,0.1). W reaches Y only through Z and X.
inline ScmSpec builtin_synthetic() {
  auto g = CausalGraph::create({"W", "Z", "X", "Y"},
                               {{"W", "Z"}, {"W", "X"}, {"Z", "X"}, {"Z", "Y"}, {"X", "Y"}}, "Y");
  return ScmSpec::create(std::move(g), {
                                           {"W", "", NoiseSpec::uniform(0.0, 1.0)},
                                           {"Z", "W / 2", NoiseSpec::gaussian(0.0, 0.1)},
                                           {"X", "-W - Z", NoiseSpec::gaussian(0.0, 0.1)},
                                           {"Y", "X^3 + log(Z^2)", NoiseSpec::gaussian(0.0, 0.1)},
                                       });
}

namespace detail {

inline void check_row(const ScmSpec& scm, std::span<const double> values, std::size_t row) {
  for (std::size_t v = 0; v < values.size(); ++v) {
    if (!std::isfinite(values[v])) {
      fail(Errc::domain, "non-finite value for '" + scm.graph().name(v) + "' in row " + std::to_string(row));
    }
  }
}

}  // namespace detail

/// Interventional sample: assigned variables are clamped, everything else
/// follows its equation. Row r draws its noise from Stream(seed, r), so an
/// empty assignment reproduces `sample` bitwise.
inline Dataset sample_interventional(const ScmSpec& scm, const std::map<std::string, double>& assignments,
                                     std::size_t n, std::uint64_t seed) {
  if (n == 0) fail(Errc::validation, "sample size must be at least 1");
  const auto& g = scm.graph();
  std::vector<std::optional<double>> clamp(g.size());
  for (const auto& [name, value] : assignments) {
    auto v = g.index_of(name);
    if (v == g.target()) fail(Errc::validation, "cannot intervene on the target '" + name + "'");
    clamp[v] = value;
  }
  Dataset out{g.names(), RowMatrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g.size())),
              {!assignments.empty(), assignments}};
  std::vector<double> noise(g.size());
  for (std::size_t r = 0; r < n; ++r) {
    Stream s(seed, r);
    scm.draw_noise(s, noise);
    std::span<double> row(out.values.row(static_cast<Eigen::Index>(r)).data(), g.size());
    scm.evaluate(noise, clamp, row);
    detail::check_row(scm, row, r);
  }
  return out;
}

inline Dataset sample(const ScmSpec& scm, std::size_t n, std::uint64_t seed) {
  return sample_interventional(scm, {}, n, seed);
}

/// Monte-Carlo curves with per-point standard errors of the paired
/// differences.
struct GroundTruth {
  EffectCurves curves;
  std::vector<double> ace_stderr;
  std::vector<double> adce_stderr;
  std::vector<double> aice_stderr;

  const std::vector<double>& stderr_of(EffectKind k) const {
    return k == EffectKind::ace ? ace_stderr : (k == EffectKind::adce ? adce_stderr : aice_stderr);
  }
};

/// Ground-truth ACE / ADCE / AICE of `feature` on the SCM's target.
///
/// Every expectation uses the same n_mc exogenous draws (paired noise), so
/// the reference term E[Y | do(x*, Z_{x*})] cancels exactly at x = x*.
/// ADCE and AICE clamp the feature's children Z (graph children other than
/// the target) to their values under the source intervention, then
/// re-evaluate the remaining descendants.
inline GroundTruth ground_truth_effects(const ScmSpec& scm, const std::string& feature, const std::vector<double>& grid,
                                        double baseline, std::size_t n_mc, std::uint64_t seed, unsigned threads = 1) {
  check_grid(grid);
  if (n_mc == 0) fail(Errc::validation, "n_mc must be at least 1");
  const auto& g = scm.graph();
  const std::size_t f = g.index_of(feature);
  if (f == g.target()) fail(Errc::validation, "the target has no causal effect on itself");
  const std::size_t d = g.size();
  const std::size_t y = g.target();
  const auto children = g.children_except_target(f);
  const auto desc = scm.descendants(f);
  std::vector<bool> is_child(d, false);
  for (auto c : children) is_child[c] = true;
  std::vector<std::size_t> below_children;  // descendants that are neither f nor a child
  for (auto v : desc) {
    if (!is_child[v]) below_children.push_back(v);
  }

  RowMatrix noise(static_cast<Eigen::Index>(n_mc), static_cast<Eigen::Index>(d));
  RowMatrix observed(static_cast<Eigen::Index>(n_mc), static_cast<Eigen::Index>(d));
  RowMatrix reference(static_cast<Eigen::Index>(n_mc), static_cast<Eigen::Index>(d));
  std::vector<std::optional<double>> no_clamp(d);
  for (std::size_t r = 0; r < n_mc; ++r) {
    auto ri = static_cast<Eigen::Index>(r);
    Stream s(seed, r);
    std::span<double> nz(noise.row(ri).data(), d);
    scm.draw_noise(s, nz);
    std::span<double> obs(observed.row(ri).data(), d);
    scm.evaluate(nz, no_clamp, obs);
    detail::check_row(scm, obs, r);
    reference.row(ri) = observed.row(ri);
    std::span<double> ref(reference.row(ri).data(), d);
    ref[f] = baseline;
    scm.propagate(desc, nz, ref);
    detail::check_row(scm, ref, r);
  }

  GroundTruth out;
  out.curves = make_curves(feature, baseline, grid);
  const std::size_t k = grid.size();
  std::vector<double> mean(3 * k), se(3 * k);

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> a(d), dir(d), ind(d);
    for (std::size_t gi = begin; gi < end; ++gi) {
      const double x = grid[gi];
      double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
      for (std::size_t r = 0; r < n_mc; ++r) {
        auto ri = static_cast<Eigen::Index>(r);
        std::span<const double> nz(noise.row(ri).data(), d);
        const double* obs = observed.row(ri).data();
        const double* ref = reference.row(ri).data();
        // do(X = x)
        std::copy(obs, obs + d, a.begin());
        a[f] = x;
        scm.propagate(desc, nz, a);
        // do(X = x, Z = Z_{x*})
        std::copy(obs, obs + d, dir.begin());
        dir[f] = x;
        for (auto c : children) dir[c] = ref[c];
        scm.propagate(below_children, nz, dir);
        // do(X = x*, Z = Z_x)
        std::copy(obs, obs + d, ind.begin());
        ind[f] = baseline;
        for (auto c : children) ind[c] = a[c];
        scm.propagate(below_children, nz, ind);

        const double diff[3] = {a[y] - ref[y], dir[y] - ref[y], ind[y] - ref[y]};
        for (int q = 0; q < 3; ++q) {
          if (!std::isfinite(diff[q])) fail(Errc::domain, "non-finite target value in Monte-Carlo row " + std::to_string(r));
          sum[q] += diff[q];
          sq[q] += diff[q] * diff[q];
        }
      }
      const double n = static_cast<double>(n_mc);
      for (int q = 0; q < 3; ++q) {
        double m = sum[q] / n;
        double var = n > 1 ? std::max(0.0, (sq[q] - n * m * m) / (n - 1)) : 0.0;
        mean[static_cast<std::size_t>(q) * k + gi] = m;
        se[static_cast<std::size_t>(q) * k + gi] = std::sqrt(var / n);
      }
    }
  };

  unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(k)));
  if (workers == 1) {
    work(0, k);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
      std::size_t b = k * w / workers, e = k * (w + 1) / workers;
      pool.emplace_back([&, w, b, e] {
        try {
          work(b, e);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  for (std::size_t gi = 0; gi < k; ++gi) {
    out.curves.ace.points.push_back({grid[gi], mean[gi]});
    out.curves.adce.points.push_back({grid[gi], mean[k + gi]});
    out.curves.aice.points.push_back({grid[gi], mean[2 * k + gi]});
  }
  out.ace_stderr.assign(se.begin(), se.begin() + static_cast<long>(k));
  out.adce_stderr.assign(se.begin() + static_cast<long>(k), se.begin() + static_cast<long>(2 * k));
  out.aice_stderr.assign(se.begin() + static_cast<long>(2 * k), se.end());
  return out;
}

}  // namespace ahce
