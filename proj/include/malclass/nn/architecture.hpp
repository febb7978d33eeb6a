#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "malclass/common.hpp"

namespace malclass::nn {

enum class Activation { linear, relu, tanh };
enum class LayerKind { dense, conv1d, maxpool1d, simple_rnn, dropout, flatten, softmax_output };
enum class ArchKind { ann, cnn, rnn };

inline constexpr std::size_t kDefaultRnnTimesteps = 64;

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "linear";
}

inline std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::maxpool1d: return "maxpool1d";
    case LayerKind::simple_rnn: return "simple_rnn";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax_output: return "softmax_output";
  }
  return "dense";
}

inline std::string_view arch_kind_name(ArchKind k) {
  switch (k) {
    case ArchKind::ann: return "ann";
    case ArchKind::cnn: return "cnn";
    case ArchKind::rnn: return "rnn";
  }
  return "ann";
}

inline ArchKind parse_arch_kind(std::string_view s) {
  if (s == "ann") return ArchKind::ann;
  if (s == "cnn") return ArchKind::cnn;
  if (s == "rnn") return ArchKind::rnn;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

inline Activation parse_activation(std::string_view s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline LayerKind parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::dense, LayerKind::conv1d, LayerKind::maxpool1d, LayerKind::simple_rnn,
                 LayerKind::dropout, LayerKind::flatten, LayerKind::softmax_output}) {
    if (layer_kind_name(k) == s) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(s) + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t size = 0;       // units, filters, pool size or classes
  std::size_t kernel = 0;     // conv1d only
  Activation activation = Activation::linear;
  double rate = 0.0;          // dropout only
  std::size_t timesteps = 0;  // simple_rnn: fold a flat input into this many steps; 0 keeps the input shape

  bool operator==(const LayerSpec&) const = default;
};

inline LayerSpec dense(std::size_t units, Activation act) { return {LayerKind::dense, units, 0, act, 0.0, 0}; }
inline LayerSpec conv1d(std::size_t filters, std::size_t kernel, Activation act) {
  return {LayerKind::conv1d, filters, kernel, act, 0.0, 0};
}
inline LayerSpec maxpool1d(std::size_t size) { return {LayerKind::maxpool1d, size, 0, Activation::linear, 0.0, 0}; }
inline LayerSpec simple_rnn(std::size_t units, Activation act, std::size_t timesteps = kDefaultRnnTimesteps) {
  return {LayerKind::simple_rnn, units, 0, act, 0.0, timesteps};
}
inline LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, 0, Activation::linear, rate, 0}; }
inline LayerSpec flatten() { return {LayerKind::flatten, 0, 0, Activation::linear, 0.0, 0}; }
inline LayerSpec softmax_output(std::size_t classes = kNumClasses) {
  return {LayerKind::softmax_output, classes, 0, Activation::linear, 0.0, 0};
}

struct ArchitectureSpec {
  ArchKind kind = ArchKind::ann;
  std::vector<LayerSpec> layers;

  bool operator==(const ArchitectureSpec&) const = default;
};

// Per-sample activation shape: a sequence of `steps` positions with `channels` values each.
struct Shape {
  std::size_t steps = 1;
  std::size_t channels = 1;

  std::size_t size() const { return steps * channels; }
  bool operator==(const Shape&) const = default;
};

// Sequence layout the recurrent layer folds its input into.
inline Shape rnn_fold(const Shape& in, std::size_t timesteps) {
  if (timesteps == 0) return in;
  const std::size_t n = in.size();
  const std::size_t steps = std::min(timesteps, n);
  return {steps, (n + steps - 1) / steps};
}

namespace detail {

inline std::string layer_label(std::size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + std::string(layer_kind_name(l.kind)) + ")";
}

}  // namespace detail

// Output shape of every layer for a (input_dim, 1) input. Throws ShapeError
// naming the first layer that cannot be applied.
inline std::vector<Shape> infer_shapes(const ArchitectureSpec& arch, std::size_t input_dim) {
  if (input_dim == 0) throw ShapeError("input_dim must be at least 1");
  std::vector<Shape> shapes;
  Shape cur{input_dim, 1};
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const std::string where = detail::layer_label(i, l);
    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::softmax_output:
        if (l.size == 0) throw ShapeError(where + ": needs at least one unit");
        cur = {1, l.size};
        break;
      case LayerKind::conv1d:
        if (l.size == 0 || l.kernel == 0) throw ShapeError(where + ": filters and kernel must be positive");
        if (cur.steps < l.kernel) {
          throw ShapeError(where + ": input length " + std::to_string(cur.steps) + " shorter than kernel " +
                           std::to_string(l.kernel));
        }
        cur = {cur.steps - l.kernel + 1, l.size};
        break;
      case LayerKind::maxpool1d:
        if (l.size == 0) throw ShapeError(where + ": pool size must be positive");
        if (cur.steps / l.size == 0) {
          throw ShapeError(where + ": input length " + std::to_string(cur.steps) + " shorter than pool " +
                           std::to_string(l.size));
        }
        cur = {cur.steps / l.size, cur.channels};
        break;
      case LayerKind::simple_rnn:
        if (l.size == 0) throw ShapeError(where + ": needs at least one unit");
        cur = {1, l.size};
        break;
      case LayerKind::dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0)) throw ShapeError(where + ": dropout rate must lie in [0,1)");
        break;
      case LayerKind::flatten:
        cur = {1, cur.size()};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

inline void validate(const ArchitectureSpec& arch, std::size_t input_dim) {
  if (arch.layers.empty() || arch.layers.back().kind != LayerKind::softmax_output) {
    throw ShapeError("architecture must end in a softmax_output layer");
  }
  for (std::size_t i = 0; i + 1 < arch.layers.size(); ++i) {
    if (arch.layers[i].kind == LayerKind::softmax_output) {
      throw ShapeError(detail::layer_label(i, arch.layers[i]) + ": softmax_output must be the last layer");
    }
  }
  infer_shapes(arch, input_dim);
}

inline ArchitectureSpec build_architecture(ArchKind kind, std::size_t input_dim,
                                           std::size_t rnn_timesteps = kDefaultRnnTimesteps) {
  ArchitectureSpec a;
  a.kind = kind;
  switch (kind) {
    case ArchKind::ann:
      a.layers = {dense(512, Activation::tanh), dropout(0.4), dense(256, Activation::tanh), dropout(0.4),
                  dense(128, Activation::tanh), dropout(0.4), dense(64, Activation::tanh),  dropout(0.4),
                  softmax_output(kNumClasses)};
      break;
    case ArchKind::cnn:
      a.layers = {conv1d(64, 3, Activation::relu), maxpool1d(2), conv1d(32, 3, Activation::relu), maxpool1d(2),
                  flatten(), dense(128, Activation::relu), dropout(0.3), dense(64, Activation::relu), dropout(0.3),
                  softmax_output(kNumClasses)};
      break;
    case ArchKind::rnn:
      a.layers = {simple_rnn(128, Activation::relu, rnn_timesteps), dropout(0.5), dense(64, Activation::relu),
                  dropout(0.5), softmax_output(kNumClasses)};
      break;
  }
  validate(a, input_dim);
  return a;
}

// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const LayerSpec& l) {
  nlohmann::ordered_json j;
  j["kind"] = layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::dense:
    case LayerKind::softmax_output:
      j["units"] = l.size;
      j["activation"] = l.kind == LayerKind::softmax_output ? "softmax" : activation_name(l.activation);
      break;
    case LayerKind::conv1d:
      j["filters"] = l.size;
      j["kernel"] = l.kernel;
      j["activation"] = activation_name(l.activation);
      break;
    case LayerKind::maxpool1d:
      j["pool"] = l.size;
      break;
    case LayerKind::simple_rnn:
      j["units"] = l.size;
      j["activation"] = activation_name(l.activation);
      j["timesteps"] = l.timesteps;
      break;
    case LayerKind::dropout:
      j["rate"] = l.rate;
      break;
    case LayerKind::flatten:
      break;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  switch (l.kind) {
    case LayerKind::dense:
      l.size = j.at("units").get<std::size_t>();
      l.activation = parse_activation(j.at("activation").get<std::string>());
      break;
    case LayerKind::softmax_output:
      l.size = j.at("units").get<std::size_t>();
      break;
    case LayerKind::conv1d:
      l.size = j.at("filters").get<std::size_t>();
      l.kernel = j.at("kernel").get<std::size_t>();
      l.activation = parse_activation(j.at("activation").get<std::string>());
      break;
    case LayerKind::maxpool1d:
      l.size = j.at("pool").get<std::size_t>();
      break;
    case LayerKind::simple_rnn:
      l.size = j.at("units").get<std::size_t>();
      l.activation = parse_activation(j.at("activation").get<std::string>());
      l.timesteps = j.value("timesteps", std::size_t{0});
      break;
    case LayerKind::dropout:
      l.rate = j.at("rate").get<double>();
      break;
    case LayerKind::flatten:
      break;
  }
  return l;
}

inline nlohmann::ordered_json to_json(const ArchitectureSpec& a) {
  nlohmann::ordered_json j;
  j["kind"] = arch_kind_name(a.kind);
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : a.layers) j["layers"].push_back(to_json(l));
  return j;
}

inline ArchitectureSpec architecture_from_json(const nlohmann::json& j) {
  ArchitectureSpec a;
  a.kind = parse_arch_kind(j.at("kind").get<std::string>());
  for (const auto& l : j.at("layers")) a.layers.push_back(layer_from_json(l));
  return a;
}

}  // namespace malclass::nn
