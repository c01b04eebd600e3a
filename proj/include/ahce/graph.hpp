#pragma once

// Causal graph over named variables with one designated target.
//
// File format (UTF-8, line oriented, '#' starts a comment):
//
//   [variables]
//   W
//   Z
//   X
//   Y
//   [target]
//   Y
//   [edges]
//   W -> Z
//   Z -> X
//
// Variable names are case-sensitive and may not contain whitespace, '#',
// '[' or the sequence "->". Declaration order is significant: it breaks ties
// in the topological order and fixes the column order of datasets.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ahce/error.hpp"
#include "ahce/fingerprint.hpp"

namespace ahce {

struct Edge {
  std::size_t cause;
  std::size_t effect;
  friend bool operator==(const Edge&, const Edge&) = default;
};

class CausalGraph {
 public:
  CausalGraph() = default;

  /// Validates every invariant: declared endpoints, no self-loops or
  /// duplicates, acyclic, target declared and without outgoing edges.
  static CausalGraph create(std::vector<std::string> variables,
                            const std::vector<std::pair<std::string, std::string>>& edges,
                            const std::string& target) {
    CausalGraph g;
    if (variables.empty()) fail(Errc::validation, "graph declares no variables");
    for (std::size_t i = 0; i < variables.size(); ++i) {
      const auto& name = variables[i];
      if (name.empty()) fail(Errc::validation, "empty variable name");
      if (!g.index_.emplace(name, i).second) {
        fail(Errc::duplicate, "variable '" + name + "' declared twice");
      }
    }
    g.names_ = std::move(variables);
    if (target.empty()) fail(Errc::missing_target, "graph has no target");
    auto t = g.find(target);
    if (!t) fail(Errc::missing_target, "target '" + target + "' is not a declared variable");
    g.target_ = *t;

    const std::size_t n = g.names_.size();
    g.parents_.assign(n, {});
    g.children_.assign(n, {});
    for (const auto& [cause, effect] : edges) {
      auto c = g.find(cause);
      auto e = g.find(effect);
      if (!c) fail(Errc::dangling_edge, "edge " + cause + " -> " + effect + ": '" + cause + "' is not declared");
      if (!e) fail(Errc::dangling_edge, "edge " + cause + " -> " + effect + ": '" + effect + "' is not declared");
      if (*c == *e) fail(Errc::validation, "self-loop on '" + cause + "'");
      if (*c == g.target_) {
        fail(Errc::target_has_outgoing_edge, "target '" + cause + "' has outgoing edge to '" + effect + "'");
      }
      Edge edge{*c, *e};
      if (std::find(g.edges_.begin(), g.edges_.end(), edge) != g.edges_.end()) {
        fail(Errc::duplicate, "duplicate edge " + cause + " -> " + effect);
      }
      g.edges_.push_back(edge);
      g.parents_[*e].push_back(*c);
      g.children_[*c].push_back(*e);
    }
    for (auto& p : g.parents_) std::sort(p.begin(), p.end());
    for (auto& c : g.children_) std::sort(c.begin(), c.end());
    g.order_ = g.compute_topological_order();
    return g;
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t v) const { return names_.at(v); }
  std::size_t target() const { return target_; }
  const std::vector<Edge>& edges() const { return edges_; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const std::string& name) const {
    auto v = find(name);
    if (!v) fail(Errc::unknown_variable, "unknown variable '" + name + "'");
    return *v;
  }

  /// Parents of v in ascending declaration order. The target is never a
  /// parent because it has no outgoing edges.
  const std::vector<std::size_t>& parents(std::size_t v) const {
    check(v);
    return parents_[v];
  }

  /// Children of v other than the target.
  std::vector<std::size_t> children_except_target(std::size_t v) const {
    check(v);
    std::vector<std::size_t> out;
    for (auto c : children_[v]) {
      if (c != target_) out.push_back(c);
    }
    return out;
  }

  bool has_edge(std::size_t cause, std::size_t effect) const {
    return std::find(edges_.begin(), edges_.end(), Edge{cause, effect}) != edges_.end();
  }

  /// Deterministic: ties are broken by declaration order.
  const std::vector<std::size_t>& topological_order() const { return order_; }

  /// All variables except the target, in declaration order. This is the
  /// input layout of every network trained on the graph.
  std::vector<std::size_t> inputs() const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < size(); ++v) {
      if (v != target_) out.push_back(v);
    }
    return out;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << "[variables]\n";
    for (const auto& n : names_) os << n << '\n';
    os << "[target]\n" << names_[target_] << '\n';
    os << "[edges]\n";
    for (const auto& e : edges_) os << names_[e.cause] << " -> " << names_[e.effect] << '\n';
    return os.str();
  }

  /// Hash of the canonical serialization; insensitive to comments and
  /// whitespace in the source file.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.add(serialize());
    return h.value();
  }

  friend bool operator==(const CausalGraph& a, const CausalGraph& b) {
    return a.names_ == b.names_ && a.target_ == b.target_ && a.edges_ == b.edges_;
  }

 private:
  void check(std::size_t v) const {
    if (v >= names_.size()) fail(Errc::unknown_variable, "variable index " + std::to_string(v) + " out of range");
  }

  std::vector<std::size_t> compute_topological_order() const {
    const std::size_t n = names_.size();
    std::vector<std::size_t> indegree(n, 0);
    for (const auto& e : edges_) ++indegree[e.effect];
    std::vector<bool> done(n, false);
    std::vector<std::size_t> order;
    order.reserve(n);
    // n is small; a linear scan for the lowest ready index keeps the
    // declaration-order tie-break obvious.
    for (std::size_t step = 0; step < n; ++step) {
      std::size_t next = n;
      for (std::size_t v = 0; v < n; ++v) {
        if (!done[v] && indegree[v] == 0) {
          next = v;
          break;
        }
      }
      if (next == n) report_cycle(done);
      done[next] = true;
      order.push_back(next);
      for (auto c : children_[next]) --indegree[c];
    }
    return order;
  }

  [[noreturn]] void report_cycle(const std::vector<bool>& done) const {
    // Every remaining node has a remaining parent; walking parents must
    // revisit a node, and the edge that closes the walk lies on a cycle.
    std::size_t v = 0;
    while (done[v]) ++v;
    std::vector<int> seen(names_.size(), -1);
    int step = 0;
    while (seen[v] < 0) {
      seen[v] = step++;
      for (auto p : parents_[v]) {
        if (!done[p]) {
          if (seen[p] >= 0) {
            fail(Errc::cycle, "cycle detected at edge " + names_[p] + " -> " + names_[v]);
          }
          v = p;
          break;
        }
      }
    }
    fail(Errc::cycle, "cycle detected through '" + names_[v] + "'");
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t target_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::size_t> order_;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_comment(const std::string& line) {
  auto hash = line.find('#');
  return trim(hash == std::string::npos ? line : line.substr(0, hash));
}

inline bool valid_name(const std::string& name) {
  if (name.empty() || name.find("->") != std::string::npos) return false;
  return std::none_of(name.begin(), name.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '[' || c == ']' || c == '#';
  });
}

[[noreturn]] inline void parse_fail(std::size_t line, const std::string& what) {
  fail(Errc::parse, "line " + std::to_string(line) + ": " + what);
}

/// Parsed but unvalidated graph sections; shared with the SCM loader, which
/// adds an [equations] section.
struct GraphSections {
  std::vector<std::string> variables;
  std::vector<std::pair<std::string, std::string>> edges;
  std::string target;
  std::vector<std::pair<std::size_t, std::string>> extra;  // (line, text) of unknown sections
  std::string extra_section;
};

inline GraphSections read_sections(std::istream& in, const std::string& allowed_extra = {}) {
  GraphSections out;
  std::string section;
  std::string raw;
  std::size_t lineno = 0;
  bool saw_target = false;
  while (std::getline(in, raw)) {
    ++lineno;
    auto line = strip_comment(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') parse_fail(lineno, "unterminated section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "variables" && section != "target" && section != "edges" &&
          (allowed_extra.empty() || section != allowed_extra)) {
        parse_fail(lineno, "unknown section '" + section + "'");
      }
      if (section == allowed_extra) out.extra_section = section;
      continue;
    }
    if (section.empty()) parse_fail(lineno, "content before the first section header");
    if (section == "variables") {
      if (!valid_name(line)) parse_fail(lineno, "invalid variable name '" + line + "'");
      out.variables.push_back(line);
    } else if (section == "target") {
      if (saw_target) parse_fail(lineno, "more than one target");
      if (!valid_name(line)) parse_fail(lineno, "invalid target name '" + line + "'");
      out.target = line;
      saw_target = true;
    } else if (section == "edges") {
      auto arrow = line.find("->");
      if (arrow == std::string::npos) parse_fail(lineno, "expected 'cause -> effect', got '" + line + "'");
      auto cause = trim(std::string_view(line).substr(0, arrow));
      auto effect = trim(std::string_view(line).substr(arrow + 2));
      if (!valid_name(cause)) parse_fail(lineno, "invalid cause '" + cause + "'");
      if (!valid_name(effect)) parse_fail(lineno, "invalid effect '" + effect + "'");
      out.edges.emplace_back(cause, effect);
    } else {
      out.extra.emplace_back(lineno, line);
    }
  }
  return out;
}

}  // namespace detail

/// Parses and validates a graph file.
inline CausalGraph load_graph(std::istream& in) {
  auto s = detail::read_sections(in);
  return CausalGraph::create(std::move(s.variables), s.edges, s.target);
}

inline CausalGraph parse_graph(const std::string& text) {
  std::istringstream in(text);
  return load_graph(in);
}

inline CausalGraph load_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open '" + path + "'");
  return load_graph(in);
}

}  // namespace ahce
