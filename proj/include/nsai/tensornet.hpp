#pragma once

// Dense feed-forward networks: forward pass, backpropagation, Adam/SGD with
// L1/L2 penalties, masked (frozen) weights and early stopping.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsai/error.hpp"
#include "nsai/random.hpp"

namespace nsai::net {

/// Row-major dense 2-D array.
template <class T>
class grid {
 public:
  grid() = default;
  grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const grid&, const grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using matrix = grid<double>;
using mask = grid<std::uint8_t>;

enum class activation { relu, sigmoid, softmax, linear };

inline std::string_view to_string(activation a) {
  switch (a) {
    case activation::relu: return "relu";
    case activation::sigmoid: return "sigmoid";
    case activation::softmax: return "softmax";
    case activation::linear: return "linear";
  }
  return "?";
}

inline activation activation_from_string(std::string_view s) {
  if (s == "relu") return activation::relu;
  if (s == "sigmoid") return activation::sigmoid;
  if (s == "softmax") return activation::softmax;
  if (s == "linear") return activation::linear;
  throw error("unknown activation '" + std::string(s) + "'");
}

struct layer {
  layer() = default;
  layer(std::size_t inputs, std::size_t outputs, activation act)
      : weights(outputs, inputs, 0.0),
        biases(outputs, 0.0),
        act(act),
        frozen(outputs, inputs, 0),
        knowledge(outputs, inputs, 0) {}

  std::size_t inputs() const { return weights.cols(); }
  std::size_t outputs() const { return weights.rows(); }

  matrix weights;  // [outputs x inputs]
  std::vector<double> biases;
  activation act = activation::linear;
  mask frozen;     // 1 = weight is never updated
  mask knowledge;  // 1 = link derived from a knowledge rule

  friend bool operator==(const layer&, const layer&) = default;
};

struct network {
  std::vector<layer> layers;
  std::vector<std::vector<std::string>> unit_labels;  // one list per layer
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().inputs(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().outputs(); }

  void validate() const {
    if (layers.empty()) throw error("network has no layers");
    if (unit_labels.size() != layers.size())
      throw error("unit_labels must have one entry per layer");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.inputs() == 0 || l.outputs() == 0) throw error("layer with zero width");
      if (l.biases.size() != l.outputs() || l.frozen.rows() != l.outputs() ||
          l.frozen.cols() != l.inputs() || l.knowledge.rows() != l.outputs() ||
          l.knowledge.cols() != l.inputs())
        throw error("layer " + std::to_string(i) + " has inconsistent shapes");
      if (i > 0 && layers[i - 1].outputs() != l.inputs())
        throw error("layer " + std::to_string(i) + " input width mismatch");
      if (unit_labels[i].size() != l.outputs())
        throw error("layer " + std::to_string(i) + " label count mismatch");
      if (l.act == activation::softmax && i + 1 != layers.size())
        throw error("softmax is only supported on the output layer");
    }
    if (input_names.size() != input_dim()) throw error("input_names size mismatch");
    if (output_names.size() != output_dim()) throw error("output_names size mismatch");
  }

  friend bool operator==(const network&, const network&) = default;
};

enum class optimizer_kind { adam, sgd };
enum class loss_kind { cross_entropy, mean_squared_error };

struct train_config {
  double learning_rate = 0.03;
  optimizer_kind optimizer = optimizer_kind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double l1 = 1.0;
  double l2 = 1.0;
  std::size_t patience = 3;
  double min_delta = 0.0;  // improvement means score > best + min_delta
  // On an exactly equal score, a lower validation loss still counts as improvement.
  bool tie_break_on_loss = true;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  loss_kind loss = loss_kind::cross_entropy;
  double validation_fraction = 0.1;

  void validate() const {
    // A zero step size is accepted: it turns training into pure evaluation.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw error("learning_rate must be finite and non-negative");
    if (patience < 1) throw error("patience must be at least 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw error("validation_fraction must lie in (0, 1)");
    if (batch_size < 1) throw error("batch_size must be at least 1");
    if (max_epochs < 1) throw error("max_epochs must be at least 1");
    if (l1 < 0.0 || l2 < 0.0) throw error("regularization must be non-negative");
  }
};

struct train_report {
  std::size_t epochs_run = 0;
  std::vector<double> train_loss_history;
  std::vector<double> validation_score_history;
  bool stopped_early = false;
  std::size_t best_epoch = 0;  // 1-based; 0 if no epoch ran
};

/// Inputs and targets, one sample per row.
struct samples {
  matrix inputs;
  matrix targets;

  std::size_t size() const { return inputs.rows(); }

  samples subset(std::span<const std::size_t> idx) const {
    samples out{matrix(idx.size(), inputs.cols()), matrix(idx.size(), targets.cols())};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(inputs.row(idx[i]).begin(), inputs.cols(), out.inputs.row(i).begin());
      std::copy_n(targets.row(idx[i]).begin(), targets.cols(), out.targets.row(i).begin());
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// construction

/// Uniform initialisation in +-sqrt(6 / (fan_in + fan_out)).
inline network build_mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                         std::size_t output_dim, std::uint64_t seed,
                         activation hidden_act = activation::relu,
                         activation output_act = activation::softmax) {
  if (input_dim == 0 || output_dim == 0) throw error("network dimensions must be >= 1");
  for (auto h : hidden)
    if (h == 0) throw error("hidden layer width must be >= 1");
  if (output_act == activation::softmax && output_dim < 2)
    throw error("softmax output requires at least 2 units");

  rng_type rng(seed);
  network net;
  std::size_t prev = input_dim;
  auto add = [&](std::size_t width, activation act) {
    layer l(prev, width, act);
    const double limit = std::sqrt(6.0 / static_cast<double>(prev + width));
    for (auto& w : l.weights.data()) w = uniform(rng, -limit, limit);
    net.layers.push_back(std::move(l));
    net.unit_labels.emplace_back(width);
    prev = width;
  };
  for (auto h : hidden) add(h, hidden_act);
  add(output_dim, output_act);

  for (std::size_t i = 0; i < input_dim; ++i)
    net.input_names.push_back("x" + std::to_string(i + 1));
  for (std::size_t i = 0; i < output_dim; ++i)
    net.output_names.push_back("y" + std::to_string(i + 1));
  net.unit_labels.back() = net.output_names;
  return net;
}

inline network build_mlp(std::size_t input_dim, std::initializer_list<std::size_t> hidden,
                         std::size_t output_dim, std::uint64_t seed,
                         activation hidden_act = activation::relu,
                         activation output_act = activation::softmax) {
  const std::vector<std::size_t> h(hidden);
  return build_mlp(input_dim, std::span<const std::size_t>(h), output_dim, seed,
                   hidden_act, output_act);
}

// ---------------------------------------------------------------------------
// forward pass

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline void apply_activation(activation act, std::span<const double> z, std::span<double> a) {
  switch (act) {
    case activation::relu:
      for (std::size_t i = 0; i < z.size(); ++i) a[i] = z[i] > 0 ? z[i] : 0.0;
      break;
    case activation::sigmoid:
      for (std::size_t i = 0; i < z.size(); ++i) a[i] = sigmoid(z[i]);
      break;
    case activation::linear:
      std::copy(z.begin(), z.end(), a.begin());
      break;
    case activation::softmax: {
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) sum += (a[i] = std::exp(z[i] - mx));
      for (auto& v : a) v /= sum;
      break;
    }
  }
}

struct trace {
  std::vector<std::vector<double>> pre;   // per layer pre-activations
  std::vector<std::vector<double>> post;  // per layer activations
};

inline void affine(const layer& l, std::span<const double> x, std::span<double> z) {
  for (std::size_t o = 0; o < l.outputs(); ++o) {
    const auto w = l.weights.row(o);
    double s = l.biases[o];
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
    z[o] = s;
  }
}

inline void run(const network& net, std::span<const double> input, trace& t) {
  t.pre.resize(net.layers.size());
  t.post.resize(net.layers.size());
  std::span<const double> x = input;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const auto& l = net.layers[li];
    t.pre[li].resize(l.outputs());
    t.post[li].resize(l.outputs());
    affine(l, x, t.pre[li]);
    apply_activation(l.act, t.pre[li], t.post[li]);
    x = t.post[li];
  }
}

}  // namespace detail

/// Activations of every layer, in order (the input itself is not included).
inline std::vector<std::vector<double>> forward(const network& net,
                                                std::span<const double> input) {
  if (input.size() != net.input_dim())
    throw error("input has " + std::to_string(input.size()) + " values, network expects " +
                std::to_string(net.input_dim()));
  detail::trace t;
  detail::run(net, input, t);
  return std::move(t.post);
}

inline std::vector<double> predict(const network& net, std::span<const double> input) {
  auto acts = forward(net, input);
  return std::move(acts.back());
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// loss and gradients

struct gradients {
  std::vector<matrix> weights;
  std::vector<std::vector<double>> biases;

  explicit gradients(const network& net) {
    for (const auto& l : net.layers) {
      weights.emplace_back(l.outputs(), l.inputs(), 0.0);
      biases.emplace_back(l.outputs(), 0.0);
    }
  }
};

namespace detail {

inline void check_loss_compatible(const network& net, loss_kind loss) {
  if (loss == loss_kind::cross_entropy) {
    const auto act = net.layers.back().act;
    if (act != activation::softmax && act != activation::sigmoid)
      throw error("cross-entropy loss needs a softmax or sigmoid output layer");
  }
}

// Data loss of one sample; writes dL/dz of the output layer into dz.
inline double output_loss(const layer& out, std::span<const double> z,
                          std::span<const double> a, std::span<const double> target,
                          loss_kind loss, std::span<double> dz) {
  const std::size_t m = a.size();
  double value = 0.0;
  if (loss == loss_kind::cross_entropy) {
    if (out.act == activation::softmax) {
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (auto v : z) sum += std::exp(v - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t j = 0; j < m; ++j) {
        if (target[j] != 0.0) value -= target[j] * (z[j] - lse);
        dz[j] = a[j] - target[j];
      }
    } else {  // independent sigmoid units, binary cross-entropy
      for (std::size_t j = 0; j < m; ++j) {
        value += target[j] * softplus(-z[j]) + (1.0 - target[j]) * softplus(z[j]);
        dz[j] = a[j] - target[j];
      }
    }
    return value;
  }

  std::vector<double> da(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double diff = a[j] - target[j];
    value += diff * diff;
    da[j] = 2.0 * diff / static_cast<double>(m);
  }
  value /= static_cast<double>(m);
  switch (out.act) {
    case activation::relu:
      for (std::size_t j = 0; j < m; ++j) dz[j] = z[j] > 0 ? da[j] : 0.0;
      break;
    case activation::sigmoid:
      for (std::size_t j = 0; j < m; ++j) dz[j] = da[j] * a[j] * (1.0 - a[j]);
      break;
    case activation::linear:
      std::copy(da.begin(), da.end(), dz.begin());
      break;
    case activation::softmax: {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += da[j] * a[j];
      for (std::size_t j = 0; j < m; ++j) dz[j] = a[j] * (da[j] - dot);
      break;
    }
  }
  return value;
}

// Accumulates the data-loss gradient of one sample (unscaled) and returns its loss.
inline double backprop(const network& net, std::span<const double> x,
                       std::span<const double> target, loss_kind loss, trace& t,
                       gradients& g) {
  run(net, x, t);
  const std::size_t last = net.layers.size() - 1;
  std::vector<double> dz(net.layers[last].outputs());
  const double value =
      output_loss(net.layers[last], t.pre[last], t.post[last], target, loss, dz);

  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& l = net.layers[li];
    const std::span<const double> in = li == 0 ? x : std::span<const double>(t.post[li - 1]);
    auto& gw = g.weights[li];
    for (std::size_t o = 0; o < l.outputs(); ++o) {
      g.biases[li][o] += dz[o];
      auto row = gw.row(o);
      for (std::size_t i = 0; i < in.size(); ++i) row[i] += dz[o] * in[i];
    }
    if (li == 0) break;

    const auto& below = net.layers[li - 1];
    std::vector<double> prev(l.inputs(), 0.0);
    for (std::size_t o = 0; o < l.outputs(); ++o) {
      const auto w = l.weights.row(o);
      for (std::size_t i = 0; i < prev.size(); ++i) prev[i] += w[i] * dz[o];
    }
    const auto& z = t.pre[li - 1];
    const auto& a = t.post[li - 1];
    for (std::size_t i = 0; i < prev.size(); ++i) {
      switch (below.act) {
        case activation::relu: prev[i] = z[i] > 0 ? prev[i] : 0.0; break;
        case activation::sigmoid: prev[i] *= a[i] * (1.0 - a[i]); break;
        case activation::linear: break;
        case activation::softmax: break;  // rejected by validate()
      }
    }
    dz = std::move(prev);
  }
  return value;
}

inline double penalty(const network& net, double l1, double l2) {
  double s = 0.0;
  for (const auto& l : net.layers)
    for (std::size_t k = 0; k < l.weights.size(); ++k) {
      if (l.frozen.data()[k]) continue;
      const double w = l.weights.data()[k];
      s += l1 * std::abs(w) + l2 * w * w;
    }
  return s;
}

inline double sign(double w) { return w > 0 ? 1.0 : (w < 0 ? -1.0 : 0.0); }

}  // namespace detail

/// Mean data loss plus (l1*sum|w| + l2*sum w^2) / penalty_divisor over
/// unfrozen weights, with its gradient. Biases are not penalised. The divisor
/// defaults to the batch size; training passes the training-set size.
inline std::pair<double, gradients> loss_and_gradient(const network& net,
                                                      const samples& batch,
                                                      loss_kind loss, double l1, double l2,
                                                      std::size_t penalty_divisor = 0) {
  gradients g(net);
  detail::trace t;
  double total = 0.0;
  const std::size_t n = batch.size();
  for (std::size_t s = 0; s < n; ++s)
    total += detail::backprop(net, batch.inputs.row(s), batch.targets.row(s), loss, t, g);

  const double inv = 1.0 / static_cast<double>(n);
  const double pinv = 1.0 / static_cast<double>(penalty_divisor ? penalty_divisor : n);
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const auto& l = net.layers[li];
    auto& gw = g.weights[li].data();
    for (std::size_t k = 0; k < gw.size(); ++k) {
      gw[k] *= inv;
      if (!l.frozen.data()[k]) {
        const double w = l.weights.data()[k];
        gw[k] += (l1 * detail::sign(w) + 2.0 * l2 * w) * pinv;
      }
    }
    for (auto& b : g.biases[li]) b *= inv;
  }
  return {total * inv + detail::penalty(net, l1, l2) * pinv, std::move(g)};
}

inline double total_loss(const network& net, const samples& batch, loss_kind loss,
                         double l1, double l2, std::size_t penalty_divisor = 0) {
  detail::trace t;
  const auto& out = net.layers.back();
  std::vector<double> dz(out.outputs());
  double total = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    detail::run(net, batch.inputs.row(s), t);
    total += detail::output_loss(out, t.pre.back(), t.post.back(), batch.targets.row(s),
                                 loss, dz);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  const double pinv = 1.0 / static_cast<double>(penalty_divisor ? penalty_divisor : batch.size());
  return total * inv + detail::penalty(net, l1, l2) * pinv;
}

inline double data_loss(const network& net, const samples& data, loss_kind loss) {
  return total_loss(net, data, loss, 0.0, 0.0);
}

/// Fraction of rows whose argmax output matches the argmax target. A single
/// output unit is read as a probability thresholded at 0.5.
inline double accuracy(const network& net, const samples& data) {
  if (data.size() == 0) throw error("accuracy of an empty sample set");
  std::size_t hits = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto out = predict(net, data.inputs.row(s));
    const auto t = data.targets.row(s);
    const bool ok = out.size() == 1 ? ((out[0] >= 0.5) == (t[0] >= 0.5))
                                    : argmax(out) == argmax(t);
    hits += ok;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Higher is better: accuracy for classifiers, negated MSE for regressors.
inline double validation_score(const network& net, const samples& data, loss_kind loss) {
  return loss == loss_kind::cross_entropy ? accuracy(net, data)
                                          : -data_loss(net, data, loss_kind::mean_squared_error);
}

struct gradient_check_result {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kink = 0;  // weights where the L1 term is not differentiable
};

/// Compares backprop against central differences for every weight and bias.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline gradient_check_result numerical_gradient_check(network net, const samples& batch,
                                                      loss_kind loss, double l1, double l2,
                                                      double epsilon = 1e-5) {
  if (!(epsilon > 0.0)) throw error("epsilon must be positive");
  net.validate();
  detail::check_loss_compatible(net, loss);
  const auto analytic = loss_and_gradient(net, batch, loss, l1, l2).second;

  gradient_check_result r;
  auto probe = [&](double& param, double a) {
    const double saved = param;
    param = saved + epsilon;
    const double up = total_loss(net, batch, loss, l1, l2);
    param = saved - epsilon;
    const double down = total_loss(net, batch, loss, l1, l2);
    param = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    r.max_relative_error = std::max(r.max_relative_error, std::abs(a - numeric) / denom);
    ++r.checked;
  };

  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& l = net.layers[li];
    for (std::size_t k = 0; k < l.weights.size(); ++k) {
      double& w = l.weights.data()[k];
      if (l1 > 0.0 && !l.frozen.data()[k] && std::abs(w) <= epsilon) {
        ++r.skipped_at_kink;
        continue;
      }
      probe(w, analytic.weights[li].data()[k]);
    }
    for (std::size_t o = 0; o < l.outputs(); ++o) probe(l.biases[o], analytic.biases[li][o]);
  }
  return r;
}

inline gradient_check_result numerical_gradient_check(const network& net, const samples& batch,
                                                      const train_config& cfg,
                                                      double epsilon = 1e-5) {
  return numerical_gradient_check(net, batch, cfg.loss, cfg.l1, cfg.l2, epsilon);
}

// ---------------------------------------------------------------------------
// training

struct train_result {
  network net;
  train_report report;
};

namespace detail {

class optimizer_state {
 public:
  optimizer_state(const network& net, const train_config& cfg)
      : cfg_(cfg), m_(net), v_(net) {}

  void step(network& net, const gradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    auto update = [&](double& p, double grad, double& m, double& v) {
      if (cfg_.optimizer == optimizer_kind::sgd) {
        p -= cfg_.learning_rate * grad;
        return;
      }
      m = cfg_.adam_beta1 * m + (1.0 - cfg_.adam_beta1) * grad;
      v = cfg_.adam_beta2 * v + (1.0 - cfg_.adam_beta2) * grad * grad;
      p -= cfg_.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg_.adam_epsilon);
    };
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      auto& l = net.layers[li];
      auto& w = l.weights.data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (l.frozen.data()[k]) continue;
        update(w[k], g.weights[li].data()[k], m_.weights[li].data()[k],
               v_.weights[li].data()[k]);
      }
      for (std::size_t o = 0; o < l.outputs(); ++o)
        update(l.biases[o], g.biases[li][o], m_.biases[li][o], v_.biases[li][o]);
    }
  }

 private:
  const train_config& cfg_;
  gradients m_;
  gradients v_;
  std::size_t t_ = 0;
};

inline void check_samples(const network& net, const samples& s, std::string_view what) {
  if (s.size() == 0) throw error(std::string(what) + " set is empty");
  if (s.inputs.cols() != net.input_dim())
    throw error(std::string(what) + " inputs have " + std::to_string(s.inputs.cols()) +
                " columns, network expects " + std::to_string(net.input_dim()));
  if (s.targets.cols() != net.output_dim())
    throw error(std::string(what) + " targets have " + std::to_string(s.targets.cols()) +
                " columns, network expects " + std::to_string(net.output_dim()));
  if (s.targets.rows() != s.size()) throw error(std::string(what) + " row count mismatch");
}

}  // namespace detail

/// Mini-batch training with early stopping on `validation`. Returns the
/// weights of the best-scoring epoch.
inline train_result train(network net, const samples& data, const samples& validation,
                          const train_config& cfg) {
  cfg.validate();
  net.validate();
  detail::check_loss_compatible(net, cfg.loss);
  detail::check_samples(net, data, "training");
  detail::check_samples(net, validation, "validation");

  rng_type rng(derive_seed(cfg.seed, "batches"));
  detail::optimizer_state opt(net, cfg);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  train_result result;
  network best = net;
  double best_score = -std::numeric_limits<double>::infinity();
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  auto& rep = result.report;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      ++batch_no;
      const auto end = std::min(order.size(), start + cfg.batch_size);
      const auto batch = data.subset(std::span<const std::size_t>(order).subspan(start, end - start));
      auto [loss, grad] = loss_and_gradient(net, batch, cfg.loss, cfg.l1, cfg.l2, data.size());
      if (!std::isfinite(loss)) throw training_error("non-finite loss", epoch, batch_no);
      opt.step(net, grad);
    }

    const double train_loss = data_loss(net, data, cfg.loss);
    if (!std::isfinite(train_loss)) throw training_error("non-finite loss", epoch, batch_no);
    const double score = validation_score(net, validation, cfg.loss);
    const double val_loss =
        cfg.tie_break_on_loss ? data_loss(net, validation, cfg.loss) : 0.0;
    rep.train_loss_history.push_back(train_loss);
    rep.validation_score_history.push_back(score);
    rep.epochs_run = epoch;

    const bool improved = score > best_score + cfg.min_delta ||
                          (cfg.tie_break_on_loss && score == best_score && val_loss < best_loss);
    if (improved) {
      best_score = score;
      best_loss = val_loss;
      best = net;
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      rep.stopped_early = true;
      break;
    }
  }
  result.net = std::move(best);
  return result;
}

/// Holds out `validation_fraction` of the rows (seeded) for early stopping.
inline train_result train(network net, const samples& data, const train_config& cfg) {
  cfg.validate();
  if (data.size() == 0) throw error("training set is empty");
  if (data.size() < 2) return train(std::move(net), data, data, cfg);

  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng_type rng(derive_seed(cfg.seed, "validation-split"));
  shuffle(std::span<std::size_t>(idx), rng);
  auto n_val = static_cast<std::size_t>(
      std::llround(cfg.validation_fraction * static_cast<double>(data.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, data.size() - 1);

  const std::span<const std::size_t> all(idx);
  return train(std::move(net), data.subset(all.subspan(n_val)), data.subset(all.first(n_val)),
               cfg);
}

// ---------------------------------------------------------------------------
// serialization

using json = nlohmann::json;

inline json to_json(const network& net) {
  json layers = json::array();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    layers.push_back({{"inputs", l.inputs()},
                      {"outputs", l.outputs()},
                      {"activation", to_string(l.act)},
                      {"weights", l.weights.data()},
                      {"biases", l.biases},
                      {"frozen", l.frozen.data()},
                      {"knowledge", l.knowledge.data()},
                      {"labels", net.unit_labels[i]}});
  }
  return {{"format", "nsai-network"},
          {"version", 1},
          {"input_names", net.input_names},
          {"output_names", net.output_names},
          {"layers", std::move(layers)}};
}

inline network network_from_json(const json& j) {
  if (j.value("format", "") != "nsai-network") throw error("not a network document");
  if (j.at("version").get<int>() != 1) throw error("unsupported network version");
  network net;
  net.input_names = j.at("input_names").get<std::vector<std::string>>();
  net.output_names = j.at("output_names").get<std::vector<std::string>>();
  for (const auto& jl : j.at("layers")) {
    layer l(jl.at("inputs").get<std::size_t>(), jl.at("outputs").get<std::size_t>(),
            activation_from_string(jl.at("activation").get<std::string>()));
    auto load = [&](auto& dst, const char* key) {
      auto v = jl.at(key).get<std::remove_reference_t<decltype(dst)>>();
      if (v.size() != dst.size()) throw error(std::string("bad size for '") + key + "'");
      dst = std::move(v);
    };
    load(l.weights.data(), "weights");
    load(l.biases, "biases");
    load(l.frozen.data(), "frozen");
    load(l.knowledge.data(), "knowledge");
    net.unit_labels.push_back(jl.at("labels").get<std::vector<std::string>>());
    net.layers.push_back(std::move(l));
  }
  net.validate();
  return net;
}

}  // namespace nsai::net
