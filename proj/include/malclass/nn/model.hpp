#pragma once

// Parameters, forward pass and reverse-mode gradients for the layer set in
// architecture.hpp. All math is 64-bit; matrix products go through Eigen.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "malclass/common.hpp"
#include "malclass/nn/architecture.hpp"

namespace malclass::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  bool operator==(const Matrix&) const = default;
};

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t size() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

struct ModelParams {
  ArchitectureSpec architecture;
  std::size_t input_dim = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t corpus_version = 0;
  std::vector<Tensor> tensors;  // declared layer order: weights before bias

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
  bool operator==(const ModelParams&) const = default;
};

// Same layout as ModelParams::tensors.
using Gradients = std::vector<std::vector<double>>;

struct LayerTensorShapes {
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::string> names;
};

// Closed-form parameter shapes: dense out x in, conv1d filters x kernel x
// channels, simple_rnn input units x features and recurrent units x units.
inline std::vector<LayerTensorShapes> parameter_shapes(const ArchitectureSpec& arch, std::size_t input_dim) {
  const auto outs = infer_shapes(arch, input_dim);
  std::vector<LayerTensorShapes> result;
  Shape in{input_dim, 1};
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + "." + std::string(layer_kind_name(l.kind));
    LayerTensorShapes s;
    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::softmax_output:
        s.shapes = {{l.size, in.size()}, {l.size}};
        s.names = {prefix + ".weight", prefix + ".bias"};
        break;
      case LayerKind::conv1d:
        s.shapes = {{l.size, l.kernel, in.channels}, {l.size}};
        s.names = {prefix + ".weight", prefix + ".bias"};
        break;
      case LayerKind::simple_rnn: {
        const Shape folded = rnn_fold(in, l.timesteps);
        s.shapes = {{l.size, folded.channels}, {l.size, l.size}, {l.size}};
        s.names = {prefix + ".input_weight", prefix + ".recurrent_weight", prefix + ".bias"};
        break;
      }
      default:
        break;
    }
    result.push_back(std::move(s));
    in = outs[i];
  }
  return result;
}

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// Uniform fan-in initialization; biases start at zero.
inline ModelParams init_params(const ArchitectureSpec& arch, std::size_t input_dim, std::uint64_t seed) {
  validate(arch, input_dim);
  ModelParams p;
  p.architecture = arch;
  p.input_dim = input_dim;
  p.rng_seed = seed;
  const auto layer_shapes = parameter_shapes(arch, input_dim);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const auto& ls = layer_shapes[i];
    for (std::size_t t = 0; t < ls.shapes.size(); ++t) {
      Tensor tensor{ls.names[t], ls.shapes[t], std::vector<double>(element_count(ls.shapes[t]), 0.0)};
      const bool is_bias = ls.shapes[t].size() == 1;
      if (!is_bias) {
        std::size_t fan_in = element_count(ls.shapes[t]) / ls.shapes[t][0];
        double gain = l.activation == Activation::relu ? 6.0 : 3.0;
        if (l.kind == LayerKind::simple_rnn && t == 1) gain = 1.0;  // recurrent matrix stays contractive
        const double limit = std::sqrt(gain / static_cast<double>(fan_in));
        Rng rng(derive_seed(seed, p.tensors.size()));
        for (double& w : tensor.data) w = rng.uniform(-limit, limit);
      }
      p.tensors.push_back(std::move(tensor));
    }
  }
  return p;
}

inline Gradients zero_gradients(const ModelParams& p) {
  Gradients g;
  g.reserve(p.tensors.size());
  for (const auto& t : p.tensors) g.emplace_back(t.size(), 0.0);
  return g;
}

// ---------------------------------------------------------------------------

namespace detail {

inline void activate(Activation a, double* z, std::size_t n) {
  switch (a) {
    case Activation::linear:
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) z[i] = z[i] > 0.0 ? z[i] : 0.0;
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) z[i] = std::tanh(z[i]);
      break;
  }
}

// dz = da * f'(z), written via the activation output.
inline void activation_backward(Activation a, const double* out, double* grad, std::size_t n) {
  switch (a) {
    case Activation::linear:
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) grad[i] = out[i] > 0.0 ? grad[i] : 0.0;
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) grad[i] *= 1.0 - out[i] * out[i];
      break;
  }
}

inline void softmax_rows(double* z, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = z + r * cols;
    const double m = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += (row[c] = std::exp(row[c] - m));
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
}

}  // namespace detail

inline constexpr double kProbabilityFloor = 1e-12;

// Runs one batch forward, keeping what the backward pass needs. A Network
// borrows the parameters; it holds per-batch scratch and is not shareable
// across threads, but any number of Networks may read the same ModelParams.
class Network {
 public:
  explicit Network(const ModelParams& params) : params_(params) {
    validate(params.architecture, params.input_dim);
    const auto& layers = params.architecture.layers;
    in_shapes_.reserve(layers.size());
    Shape cur{params.input_dim, 1};
    const auto outs = infer_shapes(params.architecture, params.input_dim);
    std::size_t tensor = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      in_shapes_.push_back(cur);
      first_tensor_.push_back(tensor);
      switch (layers[i].kind) {
        case LayerKind::dense:
        case LayerKind::softmax_output:
        case LayerKind::conv1d:
          tensor += 2;
          break;
        case LayerKind::simple_rnn:
          tensor += 3;
          break;
        default:
          break;
      }
      cur = outs[i];
    }
    out_shapes_ = outs;
    if (tensor != params.tensors.size()) {
      throw ShapeError("parameter tensor count " + std::to_string(params.tensors.size()) +
                       " does not match architecture (" + std::to_string(tensor) + ")");
    }
    const auto expected = parameter_shapes(params.architecture, params.input_dim);
    std::size_t t = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      for (const auto& shape : expected[i].shapes) {
        if (params.tensors[t].shape != shape || params.tensors[t].size() != element_count(shape)) {
          throw ShapeError("tensor " + params.tensors[t].name + " has the wrong shape for layer " + std::to_string(i));
        }
        ++t;
      }
    }
  }

  // Class probabilities, one row per input row.
  Matrix forward(const Matrix& batch, bool training, std::uint64_t dropout_seed) {
    if (batch.cols != params_.input_dim) {
      throw ShapeError("layer 0 (" + std::string(layer_kind_name(params_.architecture.layers.front().kind)) +
                       "): expected " + std::to_string(params_.input_dim) + " input columns, got " +
                       std::to_string(batch.cols));
    }
    batch_ = batch.rows;
    const auto& layers = params_.architecture.layers;
    // Buffers keep their capacity between calls; a reused Network allocates
    // only on the first batch.
    acts_.resize(layers.size() + 1);
    aux_.resize(layers.size());
    aux_index_.resize(layers.size());
    acts_[0].assign(batch.data.begin(), batch.data.end());
    for (std::size_t i = 0; i < layers.size(); ++i) forward_layer(i, training, dropout_seed);
    Matrix probs;
    probs.rows = batch_;
    probs.cols = layers.back().size;
    probs.data = acts_.back();
    return probs;
  }

  // Backpropagates d(loss)/d(logits) of the softmax layer. Returns the
  // gradient with respect to the network input.
  const ModelParams& params() const { return params_; }

  Matrix backward(const Matrix& grad_logits, Gradients& grads) {
    const auto& layers = params_.architecture.layers;
    if (grads.size() != params_.tensors.size()) grads = zero_gradients(params_);
    grads_.resize(layers.size() + 1);
    grads_.back().assign(grad_logits.data.begin(), grad_logits.data.end());
    for (std::size_t i = layers.size(); i-- > 0;) backward_layer(i, grads, i + 1 == layers.size());
    Matrix out;
    out.rows = batch_;
    out.cols = params_.input_dim;
    out.data = grads_.front();
    return out;
  }

 private:
  const Tensor& tensor(std::size_t layer, std::size_t k) const { return params_.tensors[first_tensor_[layer] + k]; }

  // Reads acts_[i], writes acts_[i + 1].
  void forward_layer(std::size_t i, bool training, std::uint64_t dropout_seed) {
    const auto& l = params_.architecture.layers[i];
    const Shape in = in_shapes_[i];
    const Shape out = out_shapes_[i];
    const auto B = static_cast<Eigen::Index>(batch_);
    const std::vector<double>& x = acts_[i];
    std::vector<double>& y = acts_[i + 1];
    y.assign(batch_ * out.size(), 0.0);

    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::softmax_output: {
        const auto& W = tensor(i, 0);
        const auto& b = tensor(i, 1);
        ConstMatMap X(x.data(), B, static_cast<Eigen::Index>(in.size()));
        ConstMatMap Wm(W.data.data(), static_cast<Eigen::Index>(l.size), static_cast<Eigen::Index>(in.size()));
        MatMap Y(y.data(), B, static_cast<Eigen::Index>(l.size));
        Y.noalias() = X * Wm.transpose();
        Y.rowwise() += ConstVecMap(b.data.data(), static_cast<Eigen::Index>(l.size)).transpose();
        if (l.kind == LayerKind::softmax_output) {
          detail::softmax_rows(y.data(), batch_, l.size);
        } else {
          detail::activate(l.activation, y.data(), y.size());
        }
        break;
      }
      case LayerKind::conv1d: {
        const auto& W = tensor(i, 0);
        const auto& b = tensor(i, 1);
        const auto KC = static_cast<Eigen::Index>(l.kernel * in.channels);
        const auto Lout = static_cast<Eigen::Index>(out.steps);
        ConstMatMap Wm(W.data.data(), static_cast<Eigen::Index>(l.size), KC);
        const auto bias = ConstVecMap(b.data.data(), static_cast<Eigen::Index>(l.size)).transpose();
        for (std::size_t s = 0; s < batch_; ++s) {
          // Window t is the contiguous span x[s, t .. t+kernel, :].
          Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>> windows(
              x.data() + s * in.size(), Lout, KC, Eigen::OuterStride<>(static_cast<Eigen::Index>(in.channels)));
          MatMap Y(y.data() + s * out.size(), Lout, static_cast<Eigen::Index>(l.size));
          Y.noalias() = windows * Wm.transpose();
          Y.rowwise() += bias;
        }
        detail::activate(l.activation, y.data(), y.size());
        break;
      }
      case LayerKind::maxpool1d: {
        auto& arg = aux_index_[i];
        arg.assign(y.size(), 0);
        for (std::size_t s = 0; s < batch_; ++s) {
          const double* xs = x.data() + s * in.size();
          for (std::size_t o = 0; o < out.steps; ++o) {
            for (std::size_t c = 0; c < in.channels; ++c) {
              std::size_t best = (o * l.size) * in.channels + c;
              for (std::size_t j = 1; j < l.size; ++j) {
                const std::size_t idx = (o * l.size + j) * in.channels + c;
                if (xs[idx] > xs[best]) best = idx;
              }
              const std::size_t oi = s * out.size() + o * out.channels + c;
              y[oi] = xs[best];
              arg[oi] = s * in.size() + best;
            }
          }
        }
        break;
      }
      case LayerKind::flatten:
        y = x;
        break;
      case LayerKind::dropout: {
        if (!training || l.rate == 0.0) {
          aux_[i].clear();
          y = x;
          break;
        }
        auto& mask = aux_[i];
        mask.assign(x.size(), 0.0);
        const double scale = 1.0 / (1.0 - l.rate);
        Rng rng(derive_seed(dropout_seed, i));
        for (std::size_t k = 0; k < x.size(); ++k) {
          mask[k] = rng.uniform() >= l.rate ? scale : 0.0;
          y[k] = x[k] * mask[k];
        }
        break;
      }
      case LayerKind::simple_rnn: {
        const Shape fold = rnn_fold(in, l.timesteps);
        const auto T = fold.steps;
        const auto F = static_cast<Eigen::Index>(fold.channels);
        const auto U = static_cast<Eigen::Index>(l.size);
        // Zero-padded, folded input: B x (T*F).
        auto& padded = aux_[i];
        padded.assign(batch_ * fold.size(), 0.0);
        for (std::size_t s = 0; s < batch_; ++s) {
          std::copy(x.begin() + static_cast<std::ptrdiff_t>(s * in.size()),
                    x.begin() + static_cast<std::ptrdiff_t>((s + 1) * in.size()),
                    padded.begin() + static_cast<std::ptrdiff_t>(s * fold.size()));
        }
        ConstMatMap Win(tensor(i, 0).data.data(), U, F);
        ConstMatMap Wrec(tensor(i, 1).data.data(), U, U);
        const auto bias = ConstVecMap(tensor(i, 2).data.data(), U).transpose();
        // hidden_[i] holds h_0..h_T, each B x U.
        auto& hs = hidden_[i];
        hs.assign((T + 1) * batch_ * l.size, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
          Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>> xt(
              padded.data() + t * fold.channels, B, F, Eigen::OuterStride<>(static_cast<Eigen::Index>(fold.size())));
          ConstMatMap hprev(hs.data() + t * batch_ * l.size, B, U);
          MatMap h(hs.data() + (t + 1) * batch_ * l.size, B, U);
          h.noalias() = xt * Win.transpose();
          h.noalias() += hprev * Wrec.transpose();
          h.rowwise() += bias;
          detail::activate(l.activation, h.data(), batch_ * l.size);
        }
        std::copy(hs.end() - static_cast<std::ptrdiff_t>(batch_ * l.size), hs.end(), y.begin());
        break;
      }
    }
  }

  // Reads grads_[i + 1] (modified in place), writes grads_[i].
  void backward_layer(std::size_t i, Gradients& grads, bool is_output) {
    const auto& l = params_.architecture.layers[i];
    const Shape in = in_shapes_[i];
    const Shape out = out_shapes_[i];
    const auto B = static_cast<Eigen::Index>(batch_);
    const std::vector<double>& x = acts_[i];
    const std::vector<double>& y = acts_[i + 1];
    std::vector<double>& grad = grads_[i + 1];
    std::vector<double>& dx = grads_[i];
    dx.assign(batch_ * in.size(), 0.0);

    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::softmax_output: {
        // The softmax layer receives d(loss)/d(logits) directly.
        if (l.kind == LayerKind::softmax_output && !is_output) {
          throw ShapeError("softmax_output must be the final layer");
        }
        if (l.kind == LayerKind::dense) detail::activation_backward(l.activation, y.data(), grad.data(), grad.size());
        const std::size_t t0 = first_tensor_[i];
        const auto& W = params_.tensors[t0];
        const auto O = static_cast<Eigen::Index>(l.size);
        const auto I = static_cast<Eigen::Index>(in.size());
        ConstMatMap dZ(grad.data(), B, O);
        ConstMatMap X(x.data(), B, I);
        ConstMatMap Wm(W.data.data(), O, I);
        MatMap(grads[t0].data(), O, I).noalias() += dZ.transpose() * X;
        VecMap(grads[t0 + 1].data(), O) += dZ.colwise().sum().transpose();
        MatMap(dx.data(), B, I).noalias() = dZ * Wm;
        break;
      }
      case LayerKind::conv1d: {
        detail::activation_backward(l.activation, y.data(), grad.data(), grad.size());
        const std::size_t t0 = first_tensor_[i];
        const auto KC = static_cast<Eigen::Index>(l.kernel * in.channels);
        const auto Lout = static_cast<Eigen::Index>(out.steps);
        const auto F = static_cast<Eigen::Index>(l.size);
        ConstMatMap Wm(params_.tensors[t0].data.data(), F, KC);
        MatMap dW(grads[t0].data(), F, KC);
        VecMap db(grads[t0 + 1].data(), F);
        RowMatrix dwin(Lout, KC);
        for (std::size_t s = 0; s < batch_; ++s) {
          Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>> windows(
              x.data() + s * in.size(), Lout, KC, Eigen::OuterStride<>(static_cast<Eigen::Index>(in.channels)));
          ConstMatMap dZ(grad.data() + s * out.size(), Lout, F);
          dW.noalias() += dZ.transpose() * windows;
          db += dZ.colwise().sum().transpose();
          dwin.noalias() = dZ * Wm;
          double* dxs = dx.data() + s * in.size();
          for (Eigen::Index t = 0; t < Lout; ++t) {
            double* dst = dxs + static_cast<std::size_t>(t) * in.channels;
            for (Eigen::Index k = 0; k < KC; ++k) dst[k] += dwin(t, k);
          }
        }
        break;
      }
      case LayerKind::maxpool1d: {
        const auto& arg = aux_index_[i];
        for (std::size_t k = 0; k < grad.size(); ++k) dx[arg[k]] += grad[k];
        break;
      }
      case LayerKind::flatten:
        dx = grad;
        break;
      case LayerKind::dropout: {
        const auto& mask = aux_[i];
        if (mask.empty()) {
          dx = grad;
        } else {
          for (std::size_t k = 0; k < grad.size(); ++k) dx[k] = grad[k] * mask[k];
        }
        break;
      }
      case LayerKind::simple_rnn: {
        const Shape fold = rnn_fold(in, l.timesteps);
        const auto T = fold.steps;
        const auto F = static_cast<Eigen::Index>(fold.channels);
        const auto U = static_cast<Eigen::Index>(l.size);
        const std::size_t t0 = first_tensor_[i];
        ConstMatMap Win(params_.tensors[t0].data.data(), U, F);
        ConstMatMap Wrec(params_.tensors[t0 + 1].data.data(), U, U);
        MatMap dWin(grads[t0].data(), U, F);
        MatMap dWrec(grads[t0 + 1].data(), U, U);
        VecMap db(grads[t0 + 2].data(), U);
        const auto& padded = aux_[i];
        const auto& hs = hidden_[i];
        std::vector<double> dpadded(batch_ * fold.size(), 0.0);
        RowMatrix dh = ConstMatMap(grad.data(), B, U);
        for (std::size_t t = T; t-- > 0;) {
          const double* h_t = hs.data() + (t + 1) * batch_ * l.size;
          detail::activation_backward(l.activation, h_t, dh.data(), batch_ * l.size);
          Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>> xt(
              padded.data() + t * fold.channels, B, F, Eigen::OuterStride<>(static_cast<Eigen::Index>(fold.size())));
          ConstMatMap hprev(hs.data() + t * batch_ * l.size, B, U);
          dWin.noalias() += dh.transpose() * xt;
          dWrec.noalias() += dh.transpose() * hprev;
          db += dh.colwise().sum().transpose();
          Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>> dxt(
              dpadded.data() + t * fold.channels, B, F, Eigen::OuterStride<>(static_cast<Eigen::Index>(fold.size())));
          dxt.noalias() = dh * Win;
          RowMatrix next = dh * Wrec;
          dh = std::move(next);
        }
        for (std::size_t s = 0; s < batch_; ++s) {
          std::copy(dpadded.begin() + static_cast<std::ptrdiff_t>(s * fold.size()),
                    dpadded.begin() + static_cast<std::ptrdiff_t>(s * fold.size() + in.size()),
                    dx.begin() + static_cast<std::ptrdiff_t>(s * in.size()));
        }
        break;
      }
    }
  }

  const ModelParams& params_;
  std::vector<Shape> in_shapes_;
  std::vector<Shape> out_shapes_;
  std::vector<std::size_t> first_tensor_;
  std::size_t batch_ = 0;
  std::vector<std::vector<double>> acts_;   // acts_[0] is the input, acts_[i + 1] the output of layer i
  std::vector<std::vector<double>> grads_;  // grads_[i] is d(loss)/d(acts_[i])
  std::vector<std::vector<double>> aux_;
  std::vector<std::vector<std::size_t>> aux_index_;
  std::map<std::size_t, std::vector<double>> hidden_;
};

// ---------------------------------------------------------------------------

inline Matrix forward(const ModelParams& params, const Matrix& batch, bool training_mode, std::uint64_t dropout_seed) {
  Network net(params);
  return net.forward(batch, training_mode, dropout_seed);
}

inline Matrix one_hot(const std::vector<ClassLabel>& labels, std::size_t classes = kNumClasses) {
  Matrix m(labels.size(), classes);
  for (std::size_t r = 0; r < labels.size(); ++r) m(r, class_index(labels[r])) = 1.0;
  return m;
}

// Mean categorical cross-entropy with probabilities clamped to [1e-12, 1].
inline double cross_entropy(const Matrix& probs, const Matrix& one_hot_labels) {
  if (probs.rows != one_hot_labels.rows || probs.cols != one_hot_labels.cols) {
    throw ShapeError("cross_entropy: probability/label shape mismatch");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows; ++r) {
    double row_loss = 0.0;
    for (std::size_t c = 0; c < probs.cols; ++c) {
      const double y = one_hot_labels(r, c);
      if (y == 0.0) continue;
      row_loss -= y * std::log(std::clamp(probs(r, c), kProbabilityFloor, 1.0));
    }
    if (!std::isfinite(row_loss)) throw NumericError("non-finite cross-entropy", r);
    total += row_loss;
  }
  return probs.rows ? total / static_cast<double>(probs.rows) : 0.0;
}

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
  Matrix input_grad;
  Matrix probabilities;
};

// Reuses `out`'s buffers and the network's activations across calls.
inline void loss_and_grads(Network& net, const Matrix& batch, const Matrix& one_hot_labels, std::uint64_t dropout_seed,
                           bool training_mode, LossAndGrads& out) {
  const ModelParams& params = net.params();
  const std::size_t classes = params.architecture.layers.back().size;
  if (one_hot_labels.cols != classes || one_hot_labels.rows != batch.rows) {
    throw ShapeError("labels must be one-hot with " + std::to_string(classes) + " classes per row");
  }
  out.probabilities = net.forward(batch, training_mode, dropout_seed);
  out.loss = cross_entropy(out.probabilities, one_hot_labels);
  Matrix dlogits(batch.rows, classes);
  const double inv = 1.0 / static_cast<double>(batch.rows);
  for (std::size_t k = 0; k < dlogits.data.size(); ++k) {
    dlogits.data[k] = (out.probabilities.data[k] - one_hot_labels.data[k]) * inv;
  }
  if (out.grads.size() != params.tensors.size()) {
    out.grads = zero_gradients(params);
  } else {
    for (auto& g : out.grads) std::fill(g.begin(), g.end(), 0.0);
  }
  out.input_grad = net.backward(dlogits, out.grads);
}

inline LossAndGrads loss_and_grads(const ModelParams& params, const Matrix& batch, const Matrix& one_hot_labels,
                                   std::uint64_t dropout_seed, bool training_mode = true) {
  Network net(params);
  LossAndGrads out;
  loss_and_grads(net, batch, one_hot_labels, dropout_seed, training_mode, out);
  return out;
}

}  // namespace malclass::nn
