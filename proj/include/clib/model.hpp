// Small ReLU multilayer perceptron with hand-derived gradients, softmax
// cross-entropy, and SGD / Adam optimizers.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "numerics.hpp"

namespace clib {

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// One affine layer: weight is [out x in], bias is [out].
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Parameters of the classifier. ReLU between layers, raw logits at the end.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t num_classes() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
    return n;
  }
  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Same shape as the parameters they differentiate.
struct Gradients {
  std::vector<DenseLayer> layers;

  double squared_norm() const {
    double s = 0.0;
    for (const auto& l : layers) {
      for (double v : l.weight.data) s += v * v;
      for (double v : l.bias) s += v * v;
    }
    return s;
  }
};

struct Batch {
  Matrix features;          // [B x d]
  std::vector<int> labels;  // [B]
};

inline void check_shapes(const MlpParams& params) {
  if (params.layers.empty()) throw std::invalid_argument("MlpParams: no layers");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    if (l.bias.size() != l.out_dim() || l.weight.data.size() != l.weight.rows * l.weight.cols)
      throw std::invalid_argument("MlpParams: malformed layer " + std::to_string(i));
    if (i + 1 < params.layers.size() && l.out_dim() != params.layers[i + 1].in_dim())
      throw std::invalid_argument("MlpParams: layer " + std::to_string(i) + " does not chain");
  }
}

/// Glorot-uniform weights, zero biases. `dims` = {input, hidden..., classes}.
inline MlpParams init_mlp(std::span<const std::size_t> dims, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("init_mlp: need at least input and output dims");
  MlpParams params;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t in = dims[i];
    const std::size_t out = dims[i + 1];
    if (in == 0 || out == 0) throw std::invalid_argument("init_mlp: zero-width layer");
    DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (auto& w : layer.weight.data) w = rng.uniform(-limit, limit);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

inline Gradients zeros_like(const MlpParams& params) {
  Gradients g;
  for (const auto& l : params.layers)
    g.layers.push_back({Matrix(l.out_dim(), l.in_dim()), std::vector<double>(l.out_dim(), 0.0)});
  return g;
}

namespace detail {

// out[b, o] = bias[o] + sum_i in[b, i] * W[o, i]
inline Matrix affine(const DenseLayer& layer, const Matrix& in) {
  Matrix out(in.rows, layer.out_dim());
  const std::size_t in_dim = layer.in_dim();
  for (std::size_t b = 0; b < in.rows; ++b) {
    const double* x = in.data.data() + b * in_dim;
    double* y = out.data.data() + b * out.cols;
    for (std::size_t o = 0; o < out.cols; ++o) {
      const double* w = layer.weight.data.data() + o * in_dim;
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < in_dim; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

inline void relu_inplace(Matrix& m) {
  for (auto& v : m.data) v = v > 0.0 ? v : 0.0;
}

inline double log_sum_exp(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Logits [B x C] for a batch of features [B x d].
inline Matrix forward(const MlpParams& params, const Matrix& features) {
  check_shapes(params);
  if (features.cols != params.input_dim())
    throw std::invalid_argument("forward: feature dim " + std::to_string(features.cols) +
                                " does not match input dim " + std::to_string(params.input_dim()));
  Matrix act = features;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    act = detail::affine(params.layers[i], act);
    if (i + 1 < params.layers.size()) detail::relu_inplace(act);
  }
  return act;
}

inline Matrix forward(const MlpParams& params, std::span<const double> sample) {
  Matrix m(1, sample.size());
  std::copy(sample.begin(), sample.end(), m.data.begin());
  return forward(params, m);
}

/// Per-row softmax cross-entropy.
inline std::vector<double> per_sample_loss(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows != labels.size()) throw std::invalid_argument("loss: logits/labels row mismatch");
  std::vector<double> out(logits.rows);
  for (std::size_t b = 0; b < logits.rows; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      throw std::invalid_argument("loss: label " + std::to_string(y) + " out of range");
    const auto row = logits.row(b);
    out[b] = detail::log_sum_exp(row) - row[static_cast<std::size_t>(y)];
  }
  return out;
}

/// Mean softmax cross-entropy.
inline double loss(const Matrix& logits, std::span<const int> labels) {
  const auto per = per_sample_loss(logits, labels);
  if (per.empty()) throw std::invalid_argument("loss: empty batch");
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

/// Mean cross-entropy over the batch and its exact gradient.
inline LossAndGradients backward(const MlpParams& params, const Batch& batch) {
  check_shapes(params);
  const std::size_t B = batch.features.rows;
  if (B == 0 || batch.labels.size() != B) throw std::invalid_argument("backward: malformed batch");
  if (batch.features.cols != params.input_dim())
    throw std::invalid_argument("backward: feature dim does not match input dim");

  const std::size_t L = params.layers.size();
  // activations[0] = input, activations[i+1] = output of layer i (post-ReLU except last).
  std::vector<Matrix> activations;
  activations.reserve(L + 1);
  activations.push_back(batch.features);
  for (std::size_t i = 0; i < L; ++i) {
    Matrix z = detail::affine(params.layers[i], activations.back());
    if (i + 1 < L) detail::relu_inplace(z);
    activations.push_back(std::move(z));
  }

  const Matrix& logits = activations.back();
  const std::size_t C = logits.cols;
  LossAndGradients out{0.0, zeros_like(params)};

  // delta = (softmax - onehot) / B
  Matrix delta(B, C);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const int y = batch.labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::invalid_argument("backward: label " + std::to_string(y) + " out of range");
    const auto row = logits.row(b);
    const double lse = detail::log_sum_exp(row);
    out.loss += (lse - row[static_cast<std::size_t>(y)]) * inv_b;
    for (std::size_t c = 0; c < C; ++c) delta(b, c) = std::exp(row[c] - lse) * inv_b;
    delta(b, static_cast<std::size_t>(y)) -= inv_b;
  }

  for (std::size_t li = L; li-- > 0;) {
    const auto& layer = params.layers[li];
    const Matrix& input = activations[li];
    auto& g = out.grads.layers[li];
    const std::size_t in_dim = layer.in_dim();
    const std::size_t out_dim = layer.out_dim();
    for (std::size_t b = 0; b < B; ++b) {
      const double* x = input.data.data() + b * in_dim;
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double d = delta(b, o);
        if (d == 0.0) continue;
        g.bias[o] += d;
        double* gw = g.weight.data.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) gw[i] += d * x[i];
      }
    }
    if (li == 0) break;
    // Propagate to the previous layer's post-ReLU output; ReLU' is 1 where output > 0.
    Matrix prev(B, in_dim);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double d = delta(b, o);
        if (d == 0.0) continue;
        const double* w = layer.weight.data.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) prev(b, i) += d * w[i];
      }
      for (std::size_t i = 0; i < in_dim; ++i)
        if (input(b, i) <= 0.0) prev(b, i) = 0.0;
    }
    delta = std::move(prev);
  }
  return out;
}

enum class OptimizerKind { sgd, adam };

/// SGD or bias-corrected Adam; owns the moment accumulators.
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit Optimizer(OptimizerKind kind = OptimizerKind::adam) : kind_(kind) {}

  OptimizerKind kind() const { return kind_; }
  std::uint64_t step_count() const { return t_; }

  void step(MlpParams& params, const Gradients& grads, double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("optimizer_step: lr must be positive");
    if (grads.layers.size() != params.layers.size())
      throw std::invalid_argument("optimizer_step: gradient shape mismatch");
    for (std::size_t i = 0; i < grads.layers.size(); ++i) {
      const auto& g = grads.layers[i];
      if (g.weight.data.size() != params.layers[i].weight.data.size() ||
          g.bias.size() != params.layers[i].bias.size())
        throw std::invalid_argument("optimizer_step: gradient shape mismatch");
      for (double v : g.weight.data)
        if (!std::isfinite(v)) throw std::domain_error("optimizer_step: non-finite gradient");
      for (double v : g.bias)
        if (!std::isfinite(v)) throw std::domain_error("optimizer_step: non-finite gradient");
    }

    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& p = params.layers[i];
        const auto& g = grads.layers[i];
        for (std::size_t k = 0; k < p.weight.data.size(); ++k) p.weight.data[k] -= lr * g.weight.data[k];
        for (std::size_t k = 0; k < p.bias.size(); ++k) p.bias[k] -= lr * g.bias[k];
      }
      return;
    }

    if (first_.layers.empty()) {
      first_ = zeros_like(params);
      second_ = zeros_like(params);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
        const double m_hat = m[k] / c1;
        const double v_hat = v[k] / c2;
        p[k] -= lr * m_hat / (std::sqrt(v_hat) + kEpsilon);
      }
    };
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      update(params.layers[i].weight.data, grads.layers[i].weight.data, first_.layers[i].weight.data,
             second_.layers[i].weight.data);
      update(params.layers[i].bias, grads.layers[i].bias, first_.layers[i].bias, second_.layers[i].bias);
    }
  }

 private:
  OptimizerKind kind_;
  Gradients first_;
  Gradients second_;
  std::uint64_t t_ = 0;
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

inline std::vector<int> predict(const MlpParams& params, const Matrix& features) {
  const Matrix logits = forward(params, features);
  std::vector<int> out(logits.rows);
  for (std::size_t b = 0; b < logits.rows; ++b) out[b] = static_cast<int>(argmax(logits.row(b)));
  return out;
}

/// Fraction of rows whose argmax prediction equals the label.
inline double evaluate_accuracy(const MlpParams& params, const Matrix& features, std::span<const int> labels) {
  if (features.rows == 0) throw std::invalid_argument("evaluate_accuracy: empty slice");
  if (labels.size() != features.rows) throw std::invalid_argument("evaluate_accuracy: label count mismatch");
  const auto pred = predict(params, features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// --- checkpoints -----------------------------------------------------------
//
// Binary layout, all little-endian: u64 layer count, then per layer u64 out,
// u64 in, out*in f64 weights (row-major), out f64 biases.

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(sizeof(T) == 8);
  auto bits = std::bit_cast<std::uint64_t>(value);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

template <typename T>
T read_le(std::istream& is) {
  static_assert(sizeof(T) == 8);
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline void save_params_binary(const MlpParams& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  detail::write_le<std::uint64_t>(os, params.layers.size());
  for (const auto& l : params.layers) {
    detail::write_le<std::uint64_t>(os, l.out_dim());
    detail::write_le<std::uint64_t>(os, l.in_dim());
    for (double w : l.weight.data) detail::write_le(os, w);
    for (double b : l.bias) detail::write_le(os, b);
  }
}

inline MlpParams load_params_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  MlpParams params;
  const auto n = detail::read_le<std::uint64_t>(is);
  if (n > 1024) throw std::runtime_error("checkpoint: implausible layer count");
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto out = detail::read_le<std::uint64_t>(is);
    const auto in = detail::read_le<std::uint64_t>(is);
    if (out == 0 || in == 0 || out > (1u << 20) || in > (1u << 20))
      throw std::runtime_error("checkpoint: implausible layer shape");
    DenseLayer layer{Matrix(out, in), std::vector<double>(out)};
    for (auto& w : layer.weight.data) w = detail::read_le<double>(is);
    for (auto& b : layer.bias) b = detail::read_le<double>(is);
    params.layers.push_back(std::move(layer));
  }
  check_shapes(params);
  return params;
}

inline nlohmann::json params_to_json(const MlpParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers)
    layers.push_back({{"out", l.out_dim()}, {"in", l.in_dim()}, {"weight", l.weight.data}, {"bias", l.bias}});
  return {{"layers", layers}};
}

inline MlpParams params_from_json(const nlohmann::json& j) {
  MlpParams params;
  for (const auto& jl : j.at("layers")) {
    const auto out = jl.at("out").get<std::size_t>();
    const auto in = jl.at("in").get<std::size_t>();
    DenseLayer layer{Matrix(out, in), jl.at("bias").get<std::vector<double>>()};
    layer.weight.data = jl.at("weight").get<std::vector<double>>();
    if (layer.weight.data.size() != out * in || layer.bias.size() != out)
      throw std::runtime_error("params_from_json: layer shape mismatch");
    params.layers.push_back(std::move(layer));
  }
  check_shapes(params);
  return params;
}

}  // namespace clib
