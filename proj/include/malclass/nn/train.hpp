#pragma once

// Adam, stratified splitting, the training loop and evaluation.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "malclass/common.hpp"
#include "malclass/ngram.hpp"
#include "malclass/nn/model.hpp"

namespace malclass::nn {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Gradients m;
  Gradients v;
};

// One bias-corrected Adam update. step_count starts at 1.
inline void adam_step(ModelParams& params, const Gradients& grads, std::size_t step_count, const AdamConfig& cfg,
                      AdamState& state) {
  if (step_count < 1) throw DomainError("adam_step: step_count must be at least 1");
  if (state.m.size() != params.tensors.size()) {
    state.m = zero_gradients(params);
    state.v = zero_gradients(params);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& w = params.tensors[t].data;
    auto& m = state.m[t];
    auto& v = state.v[t];
    const auto& g = grads[t];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  AdamConfig adam{};
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation_fraction must lie in (0,1)");
    }
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_loss = 0.0;
  double accuracy = 0.0;
  double val_accuracy = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Per class: round(fraction * n) rows to validation, at least one on each side.
inline Split stratified_split(const std::vector<ClassLabel>& labels, double validation_fraction, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[class_index(labels[i])].push_back(i);
  Split split;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    if (rows.size() < 2) {
      throw SplitError("class " + std::string(label_name(kAllClasses[c])) + " has fewer than 2 samples");
    }
    Rng rng(derive_seed(derive_seed(seed, "split"), c));
    rng.shuffle(rows);
    auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(rows.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, rows.size() - 1);
    split.validation.insert(split.validation.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

inline Matrix rows_of(const Dataset& d, const std::vector<std::size_t>& which) {
  Matrix m(which.size(), d.cols);
  for (std::size_t i = 0; i < which.size(); ++i) std::copy(d.row(which[i]), d.row(which[i]) + d.cols, m.data.begin() + static_cast<std::ptrdiff_t>(i * d.cols));
  return m;
}

inline std::size_t argmax_row(const Matrix& m, std::size_t r) {
  const double* row = m.row(r);
  return static_cast<std::size_t>(std::max_element(row, row + m.cols) - row);
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [true][predicted]

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : confusion)
      for (auto v : row) n += v;
    return n;
  }
};

inline EvalResult evaluate_rows(const ModelParams& params, const Dataset& d, const std::vector<std::size_t>& which,
                                std::size_t chunk = 256) {
  if (d.cols != params.input_dim) {
    throw ShapeError("dataset has " + std::to_string(d.cols) + " columns, model expects " +
                     std::to_string(params.input_dim));
  }
  EvalResult r;
  if (which.empty()) return r;
  Network net(params);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < which.size(); start += chunk) {
    const std::size_t end = std::min(which.size(), start + chunk);
    std::vector<std::size_t> part(which.begin() + static_cast<std::ptrdiff_t>(start),
                                  which.begin() + static_cast<std::ptrdiff_t>(end));
    const Matrix x = rows_of(d, part);
    std::vector<ClassLabel> labels;
    for (auto i : part) labels.push_back(d.labels[i]);
    const Matrix probs = net.forward(x, false, 0);
    loss_sum += cross_entropy(probs, one_hot(labels)) * static_cast<double>(part.size());
    for (std::size_t k = 0; k < part.size(); ++k) {
      const std::size_t pred = argmax_row(probs, k);
      const std::size_t truth = class_index(labels[k]);
      correct += pred == truth;
      ++r.confusion[truth][pred];
    }
  }
  r.loss = loss_sum / static_cast<double>(which.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(which.size());
  return r;
}

inline EvalResult evaluate(const ModelParams& params, const Dataset& d) {
  std::vector<std::size_t> all(d.rows);
  for (std::size_t i = 0; i < d.rows; ++i) all[i] = i;
  return evaluate_rows(params, d, all);
}

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> metrics;
  std::size_t optimizer_steps = 0;
  Split split;
};

// Training metrics are the per-sample mean over the epoch's training-mode
// batches; validation metrics come from an eval-mode pass after the epoch.
inline TrainResult train(const Dataset& d, const ArchitectureSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  std::size_t present = 0;
  for (auto n : d.manifest) present += n > 0;
  if (d.rows < 2 || present < 2) throw SplitError("training needs at least 2 samples of at least 2 classes");

  TrainResult result;
  result.split = stratified_split(d.labels, cfg.validation_fraction, cfg.seed);
  result.params = init_params(spec, d.cols, derive_seed(cfg.seed, "init"));
  result.params.corpus_version = d.corpus_version;
  AdamState adam;
  Network net(result.params);
  LossAndGrads lg;

  std::vector<std::size_t> order = result.split.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      Rng rng(derive_seed(derive_seed(cfg.seed, "shuffle"), epoch));
      rng.shuffle(order);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<ClassLabel> labels;
      for (auto i : rows) labels.push_back(d.labels[i]);
      const std::uint64_t dropout_seed = derive_seed(derive_seed(cfg.seed, epoch), batch_no);
      loss_and_grads(net, rows_of(d, rows), one_hot(labels), dropout_seed, true, lg);
      adam_step(result.params, lg.grads, ++result.optimizer_steps, cfg.adam, adam);
      loss_sum += lg.loss * static_cast<double>(rows.size());
      for (std::size_t k = 0; k < rows.size(); ++k) correct += argmax_row(lg.probabilities, k) == class_index(labels[k]);
    }
    const auto val = evaluate_rows(result.params, d, result.split.validation);
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(order.size());
    m.accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    m.val_loss = val.loss;
    m.val_accuracy = val.accuracy;
    result.metrics.push_back(m);
  }
  return result;
}

inline std::string format_metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,loss,val_loss,accuracy,val_accuracy\n";
  for (const auto& m : metrics) {
    out += std::to_string(m.epoch) + "," + format_double17(m.loss) + "," + format_double17(m.val_loss) + "," +
           format_double17(m.accuracy) + "," + format_double17(m.val_accuracy) + "\n";
  }
  return out;
}

}  // namespace malclass::nn
