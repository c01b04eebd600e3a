#pragma once

// Small fully connected network with scalar output: forward pass, exact
// backpropagation, input-space gradient / Hessian, and Adam.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ahce/error.hpp"
#include "ahce/fingerprint.hpp"
#include "ahce/random.hpp"

namespace ahce {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorCRef = Eigen::Ref<const Vector>;

/// `square` (x^2) is not used for training; it lets tests build networks that
/// are exact quadratic forms.
enum class Activation { identity, tanh, relu, logistic, square };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity:
      return "identity";
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
    case Activation::logistic:
      return "logistic";
    case Activation::square:
      return "square";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "logistic") return Activation::logistic;
  if (s == "square") return Activation::square;
  fail(Errc::parse, "unknown activation '" + s + "'");
}

namespace detail {

inline double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity:
      return z;
    case Activation::tanh:
      return std::tanh(z);
    case Activation::relu:
      return z > 0 ? z : 0.0;
    case Activation::logistic:
      return logistic(z);
    case Activation::square:
      return z * z;
  }
  return z;
}

// Derivative in terms of the pre-activation z and the activation value y.
inline double activate_derivative(Activation a, double z, double y) {
  switch (a) {
    case Activation::identity:
      return 1.0;
    case Activation::tanh:
      return 1.0 - y * y;
    case Activation::relu:
      return z > 0 ? 1.0 : 0.0;
    case Activation::logistic:
      return y * (1.0 - y);
    case Activation::square:
      return 2.0 * z;
  }
  return 1.0;
}

}  // namespace detail

/// Same shapes as the network's parameters.
struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  MlpGradients& operator+=(const MlpGradients& o) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += o.weights[l];
      biases[l] += o.biases[l];
    }
    return *this;
  }
  MlpGradients& operator*=(double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] *= s;
      biases[l] *= s;
    }
    return *this;
  }
  void set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
  }
  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
  }
};

enum class Loss { squared_error, cross_entropy };

class Mlp {
 public:
  Mlp() = default;

  /// Zero-initialized network. sizes = {inputs, hidden..., 1}.
  Mlp(std::vector<std::size_t> sizes, Activation hidden = Activation::tanh, Activation output = Activation::identity)
      : sizes_(std::move(sizes)), hidden_(hidden), output_(output) {
    if (sizes_.size() < 2) fail(Errc::validation, "network needs at least an input and an output layer");
    for (auto s : sizes_) {
      if (s == 0) fail(Errc::validation, "layer sizes must be positive");
    }
    if (sizes_.back() != 1) fail(Errc::validation, "network output must be scalar");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weights_.push_back(Matrix::Zero(static_cast<Eigen::Index>(sizes_[l + 1]), static_cast<Eigen::Index>(sizes_[l])));
      biases_.push_back(Vector::Zero(static_cast<Eigen::Index>(sizes_[l + 1])));
    }
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static Mlp initialized(std::vector<std::size_t> sizes, Activation hidden, Activation output, std::uint64_t seed) {
    Mlp net(std::move(sizes), hidden, output);
    for (std::size_t l = 0; l < net.weights_.size(); ++l) {
      Stream s(seed, l);
      double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes_[l]));
      auto& w = net.weights_[l];
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = s.uniform(-bound, bound);
      }
      for (Eigen::Index i = 0; i < net.biases_[l].size(); ++i) net.biases_[l](i) = s.uniform(-bound, bound);
    }
    return net;
  }

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t layer_count() const { return weights_.size(); }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }

  std::vector<Matrix>& weights() { return weights_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  std::vector<Vector>& biases() { return biases_; }
  const std::vector<Vector>& biases() const { return biases_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    return n;
  }

  MlpGradients zero_gradients() const {
    MlpGradients g;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      g.weights.push_back(Matrix::Zero(weights_[l].rows(), weights_[l].cols()));
      g.biases.push_back(Vector::Zero(biases_[l].size()));
    }
    return g;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
    }
    return true;
  }

  void add_to_fingerprint(Fnv1a& h) const {
    for (auto s : sizes_) h.add(static_cast<std::uint64_t>(s));
    h.add(static_cast<std::uint64_t>(hidden_));
    h.add(static_cast<std::uint64_t>(output_));
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h.add(std::span<const double>(weights_[l].data(), static_cast<std::size_t>(weights_[l].size())));
      h.add(std::span<const double>(biases_[l].data(), static_cast<std::size_t>(biases_[l].size())));
    }
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.sizes_ != b.sizes_ || a.hidden_ != b.hidden_ || a.output_ != b.output_) return false;
    for (std::size_t l = 0; l < a.weights_.size(); ++l) {
      if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
    }
    return true;
  }

  /// Activations recorded by a forward pass; post[0] is the input.
  struct Tape {
    std::vector<Vector> pre;
    std::vector<Vector> post;
    double output_pre() const { return pre.back()(0); }
    double output() const { return post.back()(0); }
  };

  double forward(VectorCRef x) const {
    check_input(x);
    Vector a = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Vector z = weights_[l] * a + biases_[l];
      Activation act = l + 1 == weights_.size() ? output_ : hidden_;
      a = z.unaryExpr([act](double v) { return detail::activate(act, v); });
    }
    return a(0);
  }

  double forward(VectorCRef x, Tape& tape) const {
    check_input(x);
    tape.pre.resize(weights_.size());
    tape.post.resize(weights_.size() + 1);
    tape.post[0] = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      tape.pre[l] = weights_[l] * tape.post[l] + biases_[l];
      Activation act = l + 1 == weights_.size() ? output_ : hidden_;
      tape.post[l + 1] = tape.pre[l].unaryExpr([act](double v) { return detail::activate(act, v); });
    }
    return tape.output();
  }

  /// d(output)/d(output pre-activation) at the recorded point.
  double output_derivative(const Tape& tape) const {
    return detail::activate_derivative(output_, tape.output_pre(), tape.output());
  }

  /// Backpropagates dL/d(output pre-activation). Parameter gradients are
  /// accumulated into `grads`, the input gradient is written to `d_input`;
  /// either may be null.
  void backward(const Tape& tape, double d_output_pre, MlpGradients* grads, Vector* d_input) const {
    Vector delta = Vector::Constant(1, d_output_pre);
    for (std::size_t l = weights_.size(); l-- > 0;) {
      if (grads) {
        grads->weights[l].noalias() += delta * tape.post[l].transpose();
        grads->biases[l] += delta;
      }
      if (l == 0 && !d_input) break;
      Vector up = weights_[l].transpose() * delta;
      if (l == 0) {
        *d_input = std::move(up);
        break;
      }
      const auto& z = tape.pre[l - 1];
      const auto& y = tape.post[l];
      for (Eigen::Index i = 0; i < up.size(); ++i) up(i) *= detail::activate_derivative(hidden_, z(i), y(i));
      delta = std::move(up);
    }
  }

  /// Exact gradient of the output with respect to the input.
  Vector input_gradient(VectorCRef x) const {
    Tape tape;
    forward(x, tape);
    Vector g;
    backward(tape, output_derivative(tape), nullptr, &g);
    return g;
  }

  /// Central differences of the analytic input gradient, symmetrized.
  Matrix input_hessian(VectorCRef x, double h = 1e-4) const {
    const auto n = static_cast<Eigen::Index>(input_size());
    check_input(x);
    Matrix H(n, n);
    Vector probe = x;
    for (Eigen::Index j = 0; j < n; ++j) {
      probe(j) = x(j) + h;
      Vector gp = input_gradient(probe);
      probe(j) = x(j) - h;
      Vector gm = input_gradient(probe);
      probe(j) = x(j);
      H.col(j) = (gp - gm) / (2.0 * h);
    }
    Matrix sym = 0.5 * (H + H.transpose());
    if (!sym.allFinite()) fail(Errc::numerical, "non-finite input Hessian");
    return sym;
  }

  /// g g^T with g the input gradient: the scalar-output J^T J.
  Matrix gauss_newton_hessian(VectorCRef x) const {
    Vector g = input_gradient(x);
    return g * g.transpose();
  }

 private:
  void check_input(VectorCRef x) const {
    if (static_cast<std::size_t>(x.size()) != input_size()) {
      fail(Errc::dimension_mismatch, "network expects " + std::to_string(input_size()) + " inputs, got " +
                                         std::to_string(x.size()));
    }
  }

  std::vector<std::size_t> sizes_;
  Activation hidden_ = Activation::tanh;
  Activation output_ = Activation::identity;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

// ---------------------------------------------------------------------------
// Losses

struct LossPoint {
  double loss;
  double d_output_pre;  // dL / d(output pre-activation)
};

/// Squared error (out - y)^2, or binary cross-entropy on a logistic output
/// computed from the logit for stability.
inline LossPoint evaluate_loss(Loss loss, const Mlp& net, const Mlp::Tape& tape, double y) {
  const double out = tape.output();
  if (loss == Loss::squared_error) {
    double r = out - y;
    return {r * r, 2.0 * r * net.output_derivative(tape)};
  }
  if (net.output_activation() != Activation::logistic) {
    fail(Errc::validation, "cross-entropy loss requires a logistic output");
  }
  const double z = tape.output_pre();
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return {softplus - y * z, out - y};
}

struct BatchGradient {
  double loss = 0.0;  // mean over the batch
  MlpGradients grads;
};

/// Mean batch loss and its exact gradient.
inline BatchGradient param_gradients(const Mlp& net, const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>& inputs,
                                     const Eigen::Ref<const Vector>& targets, Loss loss) {
  if (inputs.rows() == 0) fail(Errc::validation, "empty batch");
  if (inputs.rows() != targets.size()) fail(Errc::dimension_mismatch, "batch inputs and targets differ in length");
  BatchGradient out{0.0, net.zero_gradients()};
  Mlp::Tape tape;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    net.forward(inputs.row(i).transpose(), tape);
    auto lp = evaluate_loss(loss, net, tape, targets(i));
    out.loss += lp.loss;
    net.backward(tape, lp.d_output_pre, &out.grads, nullptr);
  }
  const double inv = 1.0 / static_cast<double>(inputs.rows());
  out.loss *= inv;
  out.grads *= inv;
  if (!std::isfinite(out.loss)) fail(Errc::numerical, "non-finite loss");
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 1;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Loss loss = Loss::squared_error;

  void validate() const {
    if (!(learning_rate > 0)) fail(Errc::usage, "learning rate must be positive");
    if (batch_size < 1) fail(Errc::usage, "batch size must be at least 1");
    if (epochs < 1) fail(Errc::usage, "epochs must be at least 1");
    if (!(weight_decay >= 0)) fail(Errc::usage, "weight decay must be non-negative");
  }
};

struct AdamState {
  MlpGradients m;
  MlpGradients v;
  std::uint64_t step = 0;

  static AdamState for_net(const Mlp& net) { return {net.zero_gradients(), net.zero_gradients(), 0}; }
};

/// One Adam update with decoupled weight decay:
///   theta <- theta - lr * (wd * theta + m_hat / (sqrt(v_hat) + eps)).
inline void adam_step(Mlp& net, const MlpGradients& grads, AdamState& state, const TrainConfig& cfg) {
  if (!grads.all_finite()) fail(Errc::numerical, "non-finite gradient");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    param -= cfg.learning_rate * (cfg.weight_decay * param +
                                  ((m / c1).array() / ((v / c2).array().sqrt() + cfg.epsilon)).matrix());
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    update(net.weights()[l], grads.weights[l], state.m.weights[l], state.v.weights[l]);
    update(net.biases()[l], grads.biases[l], state.m.biases[l], state.v.biases[l]);
  }
}

// ---------------------------------------------------------------------------
// Text checkpoint. Doubles are written as hex floats so a load reproduces the
// parameters bitwise.
//
//   mlp <layers> <size_0> ... <size_L> <hidden act> <output act>
//   <rows of W_0, then b_0, then W_1, ...; one matrix row per line>

namespace detail {

inline std::string hexfloat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double read_double(std::istream& in, const char* what) {
  std::string tok;
  if (!(in >> tok)) fail(Errc::parse, std::string("checkpoint: truncated ") + what);
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) fail(Errc::parse, std::string("checkpoint: bad number in ") + what);
  return v;
}

inline void expect_token(std::istream& in, const std::string& want) {
  std::string tok;
  if (!(in >> tok) || tok != want) fail(Errc::parse, "checkpoint: expected '" + want + "', got '" + tok + "'");
}

}  // namespace detail

inline void write_mlp(std::ostream& os, const Mlp& net) {
  os << "mlp " << net.sizes().size();
  for (auto s : net.sizes()) os << ' ' << s;
  os << ' ' << to_string(net.hidden_activation()) << ' ' << to_string(net.output_activation()) << '\n';
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& w = net.weights()[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) os << (j ? " " : "") << detail::hexfloat(w(i, j));
      os << '\n';
    }
    const auto& b = net.biases()[l];
    for (Eigen::Index i = 0; i < b.size(); ++i) os << (i ? " " : "") << detail::hexfloat(b(i));
    os << '\n';
  }
}

inline Mlp read_mlp(std::istream& in) {
  detail::expect_token(in, "mlp");
  std::size_t layers = 0;
  if (!(in >> layers) || layers < 2 || layers > 64) fail(Errc::parse, "checkpoint: bad layer count");
  std::vector<std::size_t> sizes(layers);
  for (auto& s : sizes) {
    if (!(in >> s)) fail(Errc::parse, "checkpoint: bad layer size");
  }
  std::string hidden, output;
  if (!(in >> hidden >> output)) fail(Errc::parse, "checkpoint: missing activations");
  Mlp net(sizes, parse_activation(hidden), parse_activation(output));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& w = net.weights()[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = detail::read_double(in, "weights");
    }
    auto& b = net.biases()[l];
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = detail::read_double(in, "biases");
  }
  if (!net.all_finite()) fail(Errc::parse, "checkpoint: non-finite parameter");
  return net;
}

}  // namespace ahce
