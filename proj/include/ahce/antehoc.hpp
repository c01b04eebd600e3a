#pragma once

// Network with learnable lateral functions among its inputs (layer 0), wired
// from the causal graph, and the alternating two-phase trainer.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ahce/dataset.hpp"
#include "ahce/error.hpp"
#include "ahce/fingerprint.hpp"
#include "ahce/graph.hpp"
#include "ahce/mlp.hpp"
#include "ahce/random.hpp"

namespace ahce {

enum class LateralKind { linear, mlp };

/// propagate: a derived value is computed from the already-derived values of
/// its parents. observed: always from the observed parent values.
enum class DeriveMode { propagate, observed };

inline const char* to_string(LateralKind k) { return k == LateralKind::linear ? "linear" : "mlp"; }
inline const char* to_string(DeriveMode m) { return m == DeriveMode::propagate ? "propagate" : "observed"; }

inline LateralKind parse_lateral_kind(const std::string& s) {
  if (s == "linear") return LateralKind::linear;
  if (s == "mlp") return LateralKind::mlp;
  fail(Errc::parse, "unknown lateral function kind '" + s + "'");
}

inline DeriveMode parse_derive_mode(const std::string& s) {
  if (s == "propagate") return DeriveMode::propagate;
  if (s == "observed") return DeriveMode::observed;
  fail(Errc::parse, "unknown derive mode '" + s + "'");
}

inline constexpr std::size_t kNoPosition = std::numeric_limits<std::size_t>::max();

/// Graph variable index -> position in the network input vector (kNoPosition
/// for the target).
inline std::vector<std::size_t> input_positions(const CausalGraph& g) {
  std::vector<std::size_t> pos(g.size(), kNoPosition);
  auto in = g.inputs();
  for (std::size_t k = 0; k < in.size(); ++k) pos[in[k]] = k;
  return pos;
}

/// f_i: parents of input i -> estimate of input i. Positions index the input
/// vector, not the graph.
struct LateralFunction {
  std::size_t position = 0;
  std::vector<std::size_t> parents;
  LateralKind kind = LateralKind::linear;
  Mlp net;

  Vector gather(VectorCRef x) const {
    Vector p(static_cast<Eigen::Index>(parents.size()));
    for (std::size_t j = 0; j < parents.size(); ++j) p(static_cast<Eigen::Index>(j)) = x(static_cast<Eigen::Index>(parents[j]));
    return p;
  }
  double apply(VectorCRef x) const { return net.forward(gather(x)); }
};

class LayerZero {
 public:
  LayerZero() = default;

  /// One function per input that has parents, in topological order.
  static LayerZero wired(const CausalGraph& g, LateralKind kind, std::uint64_t seed, std::size_t hidden_width = 8) {
    LayerZero l0 = none(g);
    auto pos = input_positions(g);
    for (auto v : g.topological_order()) {
      if (v == g.target() || g.parents(v).empty()) continue;
      LateralFunction f;
      f.position = pos[v];
      for (auto p : g.parents(v)) f.parents.push_back(pos[p]);
      f.kind = kind;
      const std::size_t k = f.parents.size();
      std::uint64_t s = splitmix64(seed ^ (0x4c30ULL + v));
      f.net = kind == LateralKind::linear
                  ? Mlp::initialized({k, 1}, Activation::identity, Activation::identity, s)
                  : Mlp::initialized({k, hidden_width, 1}, Activation::tanh, Activation::identity, s);
      l0.fns_.push_back(std::move(f));
    }
    l0.index();
    return l0;
  }

  /// No lateral functions: the plain network used as the ablation baseline.
  static LayerZero none(const CausalGraph& g) {
    LayerZero l0;
    l0.inputs_ = g.size() - 1;
    l0.slot_.assign(l0.inputs_, kNoPosition);
    return l0;
  }

  /// Adopts externally built functions after checking them against the graph.
  static LayerZero from_functions(const CausalGraph& g, std::vector<LateralFunction> fns) {
    LayerZero l0 = none(g);
    auto pos = input_positions(g);
    std::vector<LateralFunction> ordered;
    for (auto v : g.topological_order()) {
      if (v == g.target()) continue;
      for (auto& f : fns) {
        if (f.position == pos[v]) ordered.push_back(std::move(f));
      }
    }
    if (ordered.size() != fns.size()) fail(Errc::validation, "layer 0 function refers to a non-input position");
    l0.fns_ = std::move(ordered);
    l0.index();
    if (!l0.empty() && !l0.matches(g)) fail(Errc::validation, "layer 0 wiring does not match the graph edges");
    return l0;
  }

  bool empty() const { return fns_.empty(); }
  std::size_t input_size() const { return inputs_; }
  std::vector<LateralFunction>& functions() { return fns_; }
  const std::vector<LateralFunction>& functions() const { return fns_; }

  /// Index into functions() of the function deriving `position`, or kNoPosition.
  std::size_t slot(std::size_t position) const { return slot_.at(position); }

  /// True when exactly the inputs with parents have functions, each over
  /// exactly its graph parents.
  bool matches(const CausalGraph& g) const {
    if (inputs_ + 1 != g.size()) return false;
    auto pos = input_positions(g);
    std::size_t expected = 0;
    for (auto v : g.inputs()) {
      if (g.parents(v).empty()) {
        if (slot_[pos[v]] != kNoPosition) return false;
        continue;
      }
      ++expected;
      auto s = slot_[pos[v]];
      if (s == kNoPosition) return false;
      std::vector<std::size_t> want;
      for (auto p : g.parents(v)) want.push_back(pos[p]);
      if (fns_[s].parents != want || fns_[s].net.input_size() != want.size()) return false;
    }
    return expected == fns_.size();
  }

  Vector derive(VectorCRef x, DeriveMode mode) const {
    check(x);
    Vector out = x;
    for (const auto& f : fns_) {
      out(static_cast<Eigen::Index>(f.position)) = f.apply(mode == DeriveMode::propagate ? VectorCRef(out) : x);
    }
    return out;
  }

  /// Sum over rows and derived inputs of (x_i - f_i(observed parents))^2.
  double regularizer(const RowMatrix& inputs) const {
    if (inputs.rows() == 0) fail(Errc::validation, "regularizer needs a non-empty batch");
    double total = 0.0;
    for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
      Vector x = inputs.row(r).transpose();
      check(x);
      for (const auto& f : fns_) {
        double d = x(static_cast<Eigen::Index>(f.position)) - f.apply(x);
        total += d * d;
      }
    }
    return total;
  }

  /// Functions (as indices into functions()) whose value changes when the
  /// input at `position` is clamped: the transitive closure of its
  /// children, in topological order.
  std::vector<std::size_t> downstream(std::size_t position) const {
    std::vector<bool> moved(inputs_, false);
    moved.at(position) = true;
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < fns_.size(); ++s) {
      const auto& f = fns_[s];
      if (f.position == position) continue;
      for (auto p : f.parents) {
        if (moved[p]) {
          moved[f.position] = true;
          out.push_back(s);
          break;
        }
      }
    }
    return out;
  }

  void add_to_fingerprint(Fnv1a& h) const {
    h.add(static_cast<std::uint64_t>(inputs_));
    for (const auto& f : fns_) {
      h.add(static_cast<std::uint64_t>(f.position));
      for (auto p : f.parents) h.add(static_cast<std::uint64_t>(p));
      f.net.add_to_fingerprint(h);
    }
  }

  friend bool operator==(const LayerZero& a, const LayerZero& b) {
    if (a.inputs_ != b.inputs_ || a.fns_.size() != b.fns_.size()) return false;
    for (std::size_t s = 0; s < a.fns_.size(); ++s) {
      const auto& f = a.fns_[s];
      const auto& g = b.fns_[s];
      if (f.position != g.position || f.parents != g.parents || f.kind != g.kind || !(f.net == g.net)) return false;
    }
    return true;
  }

  // Training support: forward with recorded activations, and the reverse pass.
  struct Tape {
    Vector derived;
    std::vector<Mlp::Tape> fn;
  };

  void derive(VectorCRef x, DeriveMode mode, Tape& tape) const {
    check(x);
    tape.derived = x;
    tape.fn.resize(fns_.size());
    for (std::size_t s = 0; s < fns_.size(); ++s) {
      const auto& f = fns_[s];
      Vector in = f.gather(mode == DeriveMode::propagate ? VectorCRef(tape.derived) : x);
      tape.derived(static_cast<Eigen::Index>(f.position)) = f.net.forward(in, tape.fn[s]);
    }
  }

  /// Accumulates parameter gradients given dL/d(derived inputs). In propagate
  /// mode gradients reaching a derived parent flow on into its own function.
  void backward(const Tape& tape, Vector d_derived, DeriveMode mode, std::vector<MlpGradients>& grads) const {
    Vector d_parents;
    for (std::size_t s = fns_.size(); s-- > 0;) {
      const auto& f = fns_[s];
      const double d = d_derived(static_cast<Eigen::Index>(f.position));
      const bool chain = mode == DeriveMode::propagate;
      f.net.backward(tape.fn[s], d * f.net.output_derivative(tape.fn[s]), &grads[s], chain ? &d_parents : nullptr);
      if (chain) {
        for (std::size_t j = 0; j < f.parents.size(); ++j) {
          d_derived(static_cast<Eigen::Index>(f.parents[j])) += d_parents(static_cast<Eigen::Index>(j));
        }
      }
    }
  }

 private:
  void check(VectorCRef x) const {
    if (static_cast<std::size_t>(x.size()) != inputs_) {
      fail(Errc::dimension_mismatch, "layer 0 expects " + std::to_string(inputs_) + " inputs, got " + std::to_string(x.size()));
    }
  }

  void index() {
    slot_.assign(inputs_, kNoPosition);
    for (std::size_t s = 0; s < fns_.size(); ++s) {
      auto p = fns_[s].position;
      if (p >= inputs_) fail(Errc::validation, "layer 0 function position out of range");
      if (slot_[p] != kNoPosition) fail(Errc::duplicate, "two layer 0 functions for one input");
      for (auto q : fns_[s].parents) {
        if (q >= inputs_) fail(Errc::validation, "layer 0 parent position out of range");
      }
      slot_[p] = s;
    }
  }

  std::size_t inputs_ = 0;
  std::vector<LateralFunction> fns_;
  std::vector<std::size_t> slot_;
};

// ---------------------------------------------------------------------------

struct ModelOptions {
  std::vector<std::size_t> hidden = {32, 32};
  Activation hidden_activation = Activation::tanh;
  Activation output_activation = Activation::identity;
  bool with_layer0 = true;
  LateralKind lateral = LateralKind::linear;
  std::size_t lateral_width = 8;
  double lambda = 1.0;
  DeriveMode derive = DeriveMode::propagate;
  std::uint64_t seed = 0;
};

struct AnteHocNet {
  CausalGraph graph;
  LayerZero layer0;
  Mlp predictor;
  double lambda = 1.0;
  DeriveMode derive_mode = DeriveMode::propagate;

  static AnteHocNet create(const CausalGraph& g, const ModelOptions& opt) {
    if (!(opt.lambda >= 0) || !std::isfinite(opt.lambda)) fail(Errc::usage, "lambda must be a finite non-negative number");
    AnteHocNet m;
    m.graph = g;
    m.layer0 = opt.with_layer0 ? LayerZero::wired(g, opt.lateral, opt.seed, opt.lateral_width) : LayerZero::none(g);
    std::vector<std::size_t> sizes{g.size() - 1};
    sizes.insert(sizes.end(), opt.hidden.begin(), opt.hidden.end());
    sizes.push_back(1);
    m.predictor = Mlp::initialized(sizes, opt.hidden_activation, opt.output_activation, splitmix64(opt.seed));
    m.lambda = opt.lambda;
    m.derive_mode = opt.derive;
    m.validate();
    return m;
  }

  std::size_t input_size() const { return predictor.input_size(); }

  void validate() const {
    if (graph.size() < 2) fail(Errc::validation, "model graph needs at least one input besides the target");
    if (predictor.input_size() + 1 != graph.size()) {
      fail(Errc::dimension_mismatch, "predictor width does not match the number of non-target variables");
    }
    if (layer0.input_size() != predictor.input_size()) fail(Errc::dimension_mismatch, "layer 0 width does not match predictor");
    if (!layer0.empty() && !layer0.matches(graph)) fail(Errc::validation, "layer 0 wiring does not match the graph edges");
  }

  Vector derive(VectorCRef x) const { return layer0.derive(x, derive_mode); }
  double predict(VectorCRef x) const { return predictor.forward(x); }

  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.add(graph.fingerprint());
    h.add(std::span<const double>(&lambda, 1));
    h.add(static_cast<std::uint64_t>(derive_mode));
    layer0.add_to_fingerprint(h);
    predictor.add_to_fingerprint(h);
    return h.value();
  }
};

// ---------------------------------------------------------------------------
// Training

struct LossRecord {
  std::size_t epoch = 0;
  int phase = 1;
  double loss = 0.0;         // erm + lambda * regularizer
  double erm = 0.0;          // mean over rows
  double regularizer = 0.0;  // mean over rows of the per-row regularizer sum
};

/// Visiting order of rows in one epoch; both phases of an epoch share it.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Stream s(seed, 0x70657200ULL + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[s.below(i)]);
  return order;
}

/// Phase 1 loss is the ERM on observed inputs; phase 2 uses derived inputs
/// and adds lambda times the regularizer.
inline LossRecord evaluate_phase_loss(const AnteHocNet& m, const SupervisedData& d, int phase, Loss loss = Loss::squared_error) {
  if (d.rows() == 0) fail(Errc::validation, "empty dataset");
  LossRecord rec;
  rec.phase = phase;
  Mlp::Tape tape;
  for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) {
    Vector x = d.inputs.row(r).transpose();
    if (phase == 2) x = m.derive(x);
    m.predictor.forward(x, tape);
    rec.erm += evaluate_loss(loss, m.predictor, tape, d.targets(r)).loss;
  }
  const double n = static_cast<double>(d.rows());
  rec.erm /= n;
  if (phase == 2) rec.regularizer = m.layer0.regularizer(d.inputs) / n;
  rec.loss = rec.erm + (phase == 2 ? m.lambda * rec.regularizer : 0.0);
  return rec;
}

namespace detail {

inline void check_loss(double loss, std::size_t epoch, int phase, std::size_t row) {
  if (!std::isfinite(loss)) {
    fail(Errc::numerical, "non-finite loss in epoch " + std::to_string(epoch) + ", phase " + std::to_string(phase) +
                              " at row " + std::to_string(row));
  }
}

}  // namespace detail

/// Batch-mean objective and gradients of one optimizer step.
struct StepGradients {
  double loss = 0.0;
  MlpGradients predictor;
  std::vector<MlpGradients> layer0;  // empty in phase 1
};

/// Phase 1: ERM on observed inputs, predictor only.
inline StepGradients phase1_gradients(const AnteHocNet& m, const SupervisedData& d, std::span<const std::size_t> rows,
                                      Loss loss = Loss::squared_error, std::size_t epoch = 0) {
  if (rows.empty()) fail(Errc::validation, "empty batch");
  StepGradients out{0.0, m.predictor.zero_gradients(), {}};
  Mlp::Tape tape;
  for (auto row : rows) {
    const auto r = static_cast<Eigen::Index>(row);
    m.predictor.forward(d.inputs.row(r).transpose(), tape);
    auto lp = evaluate_loss(loss, m.predictor, tape, d.targets(r));
    detail::check_loss(lp.loss, epoch, 1, row);
    out.loss += lp.loss;
    m.predictor.backward(tape, lp.d_output_pre, &out.predictor, nullptr);
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  out.loss *= inv;
  out.predictor *= inv;
  return out;
}

/// Phase 2: per row, ERM on derived inputs plus lambda times the sum of
/// squared layer 0 residuals on observed parents; averaged over the batch.
inline StepGradients phase2_gradients(const AnteHocNet& m, const SupervisedData& d, std::span<const std::size_t> rows,
                                      Loss loss = Loss::squared_error, std::size_t epoch = 0) {
  if (rows.empty()) fail(Errc::validation, "empty batch");
  const auto& fns = m.layer0.functions();
  StepGradients out{0.0, m.predictor.zero_gradients(), {}};
  for (const auto& f : fns) out.layer0.push_back(f.net.zero_gradients());
  Mlp::Tape tape;
  Mlp::Tape reg_tape;
  LayerZero::Tape l0_tape;
  Vector d_input;
  for (auto row : rows) {
    const auto r = static_cast<Eigen::Index>(row);
    Vector x = d.inputs.row(r).transpose();
    m.layer0.derive(x, m.derive_mode, l0_tape);
    m.predictor.forward(l0_tape.derived, tape);
    auto lp = evaluate_loss(loss, m.predictor, tape, d.targets(r));
    double row_loss = lp.loss;
    m.predictor.backward(tape, lp.d_output_pre, &out.predictor, &d_input);
    m.layer0.backward(l0_tape, d_input, m.derive_mode, out.layer0);
    for (std::size_t s = 0; s < fns.size(); ++s) {
      const auto& f = fns[s];
      const double res = x(static_cast<Eigen::Index>(f.position)) - f.net.forward(f.gather(x), reg_tape);
      row_loss += m.lambda * res * res;
      f.net.backward(reg_tape, -2.0 * m.lambda * res * f.net.output_derivative(reg_tape), &out.layer0[s], nullptr);
    }
    detail::check_loss(row_loss, epoch, 2, row);
    out.loss += row_loss;
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  out.loss *= inv;
  out.predictor *= inv;
  for (auto& g : out.layer0) g *= inv;
  return out;
}

/// Holds the optimizer state across epochs. Phase 1 updates the predictor
/// only; phase 2 updates the predictor and layer 0.
class Trainer {
 public:
  Trainer(AnteHocNet& model, TrainConfig cfg) : m_(model), cfg_(cfg), pred_(AdamState::for_net(model.predictor)) {
    m_.validate();
    for (const auto& f : m_.layer0.functions()) l0_.push_back(AdamState::for_net(f.net));
  }

  void phase1_epoch(const SupervisedData& d, std::size_t epoch) {
    auto order = checked_order(d, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      auto g = phase1_gradients(m_, d, std::span(order).subspan(start, end - start), cfg_.loss, epoch);
      adam_step(m_.predictor, g.predictor, pred_, cfg_);
    }
  }

  void phase2_epoch(const SupervisedData& d, std::size_t epoch) {
    auto order = checked_order(d, epoch);
    auto& fns = m_.layer0.functions();
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      auto g = phase2_gradients(m_, d, std::span(order).subspan(start, end - start), cfg_.loss, epoch);
      adam_step(m_.predictor, g.predictor, pred_, cfg_);
      for (std::size_t s = 0; s < fns.size(); ++s) adam_step(fns[s].net, g.layer0[s], l0_[s], cfg_);
    }
  }

  /// Phase 1 then phase 2 in every epoch. The log has one entry per phase,
  /// each the loss over the whole training set after that phase.
  std::vector<LossRecord> train(const SupervisedData& d) {
    std::vector<LossRecord> log;
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      phase1_epoch(d, e);
      log.push_back(evaluate_phase_loss(m_, d, 1, cfg_.loss));
      log.back().epoch = e;
      phase2_epoch(d, e);
      log.push_back(evaluate_phase_loss(m_, d, 2, cfg_.loss));
      log.back().epoch = e;
    }
    return log;
  }

 private:
  std::vector<std::size_t> checked_order(const SupervisedData& d, std::size_t epoch) const {
    if (d.rows() == 0) fail(Errc::validation, "empty training data");
    if (static_cast<std::size_t>(d.inputs.cols()) != m_.input_size()) {
      fail(Errc::dimension_mismatch, "training data width does not match the model");
    }
    if (cfg_.batch_size < 1) fail(Errc::usage, "batch size must be at least 1");
    return epoch_order(d.rows(), cfg_.seed, epoch);
  }

  AnteHocNet& m_;
  TrainConfig cfg_;
  AdamState pred_;
  std::vector<AdamState> l0_;
};

inline void phase1_epoch(AnteHocNet& m, const Dataset& data, const TrainConfig& cfg, std::size_t epoch = 0) {
  Trainer(m, cfg).phase1_epoch(split_inputs(m.graph, data), epoch);
}

inline void phase2_epoch(AnteHocNet& m, const Dataset& data, const TrainConfig& cfg, std::size_t epoch = 0) {
  Trainer(m, cfg).phase2_epoch(split_inputs(m.graph, data), epoch);
}

inline std::vector<LossRecord> train(AnteHocNet& m, const Dataset& data, const TrainConfig& cfg) {
  return Trainer(m, cfg).train(split_inputs(m.graph, data));
}

/// Root mean squared error of the predictor on observed inputs.
inline double prediction_rmse(const AnteHocNet& m, const SupervisedData& d) {
  if (d.rows() == 0) fail(Errc::validation, "empty dataset");
  double s = 0.0;
  for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) {
    double e = m.predict(d.inputs.row(r).transpose()) - d.targets(r);
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(d.rows()));
}

// ---------------------------------------------------------------------------
// Checkpoint
//
//   ahce-checkpoint 1
//   graph <fingerprint hex>
//   lambda <hex float>
//   derive <propagate|observed>
//   predictor
//   <mlp block>
//   layer0 <count>
//   function <variable> <linear|mlp> <parent count> <parent names...>
//   <mlp block>
//   ...
//   end

inline void write_checkpoint(std::ostream& os, const AnteHocNet& m) {
  auto in = m.graph.inputs();
  os << "ahce-checkpoint 1\n";
  os << "graph " << to_hex(m.graph.fingerprint()) << '\n';
  os << "lambda " << detail::hexfloat(m.lambda) << '\n';
  os << "derive " << to_string(m.derive_mode) << '\n';
  os << "predictor\n";
  write_mlp(os, m.predictor);
  os << "layer0 " << m.layer0.functions().size() << '\n';
  for (const auto& f : m.layer0.functions()) {
    os << "function " << m.graph.name(in[f.position]) << ' ' << to_string(f.kind) << ' ' << f.parents.size();
    for (auto p : f.parents) os << ' ' << m.graph.name(in[p]);
    os << '\n';
    write_mlp(os, f.net);
  }
  os << "end\n";
}

/// Loads a checkpoint trained on `g`; a different graph is a hard error.
inline AnteHocNet read_checkpoint(std::istream& in, const CausalGraph& g) {
  detail::expect_token(in, "ahce-checkpoint");
  detail::expect_token(in, "1");
  detail::expect_token(in, "graph");
  std::string fp;
  in >> fp;
  if (fp != to_hex(g.fingerprint())) {
    fail(Errc::fingerprint_mismatch, "checkpoint was trained on a different graph (fingerprint " + fp + ", graph " +
                                         to_hex(g.fingerprint()) + ")");
  }
  AnteHocNet m;
  m.graph = g;
  detail::expect_token(in, "lambda");
  m.lambda = detail::read_double(in, "lambda");
  detail::expect_token(in, "derive");
  std::string mode;
  in >> mode;
  m.derive_mode = parse_derive_mode(mode);
  detail::expect_token(in, "predictor");
  m.predictor = read_mlp(in);
  detail::expect_token(in, "layer0");
  std::size_t count = 0;
  if (!(in >> count) || count > g.size()) fail(Errc::parse, "checkpoint: bad layer 0 count");
  auto pos = input_positions(g);
  auto position_of = [&](const std::string& name) {
    auto p = pos[g.index_of(name)];
    if (p == kNoPosition) fail(Errc::validation, "checkpoint: layer 0 refers to the target '" + name + "'");
    return p;
  };
  std::vector<LateralFunction> fns;
  for (std::size_t s = 0; s < count; ++s) {
    detail::expect_token(in, "function");
    std::string var, kind;
    std::size_t k = 0;
    if (!(in >> var >> kind >> k) || k > g.size()) fail(Errc::parse, "checkpoint: bad function header");
    LateralFunction f;
    f.position = position_of(var);
    f.kind = parse_lateral_kind(kind);
    for (std::size_t j = 0; j < k; ++j) {
      std::string p;
      in >> p;
      f.parents.push_back(position_of(p));
    }
    f.net = read_mlp(in);
    fns.push_back(std::move(f));
  }
  detail::expect_token(in, "end");
  m.layer0 = count == 0 ? LayerZero::none(g) : LayerZero::from_functions(g, std::move(fns));
  m.validate();
  return m;
}

}  // namespace ahce
