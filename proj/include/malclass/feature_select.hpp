#pragma once

// Filter-based scoring and pruning of the merged feature corpus.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "malclass/common.hpp"
#include "malclass/ngram.hpp"

namespace malclass {

struct FrequencyTable {
  std::vector<std::size_t> doc_frequency;
  std::vector<double> mean_tf;
};

inline FrequencyTable frequency_feature_table(const Dataset& d) {
  if (d.rows == 0) throw DomainError("frequency table of an empty dataset");
  FrequencyTable t{std::vector<std::size_t>(d.cols, 0), std::vector<double>(d.cols, 0.0)};
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* row = d.row(r);
    for (std::size_t c = 0; c < d.cols; ++c) {
      if (row[c] > 0.0) ++t.doc_frequency[c];
      t.mean_tf[c] += row[c];
    }
  }
  for (double& m : t.mean_tf) m /= static_cast<double>(d.rows);
  return t;
}

inline std::vector<int> encode_labels(const std::vector<ClassLabel>& labels) {
  std::vector<int> out(labels.size());
  std::transform(labels.begin(), labels.end(), out.begin(),
                 [](ClassLabel l) { return static_cast<int>(class_index(l)); });
  return out;
}

// Equal-width bin over [0, max]; the top edge falls in the last bin.
inline std::size_t bin_of(double value, double max_value, std::size_t bins) {
  if (!(max_value > 0.0) || !(value > 0.0)) return 0;
  const auto b = static_cast<std::size_t>(std::floor(value / max_value * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

// MI in bits between the binned column and the label, from the empirical joint.
inline double mutual_information(std::span<const double> column, std::span<const int> labels, std::size_t bins = 4) {
  if (column.size() != labels.size()) throw DomainError("mutual_information: length mismatch");
  if (column.empty()) throw DomainError("mutual_information: empty input");
  if (bins < 2) throw DomainError("mutual_information: need at least 2 bins");

  const double max_value = *std::max_element(column.begin(), column.end());
  std::vector<int> label_values(labels.begin(), labels.end());
  std::sort(label_values.begin(), label_values.end());
  label_values.erase(std::unique(label_values.begin(), label_values.end()), label_values.end());
  const std::size_t ny = label_values.size();

  std::vector<double> joint(bins * ny, 0.0);
  for (std::size_t i = 0; i < column.size(); ++i) {
    const std::size_t x = bin_of(column[i], max_value, bins);
    const auto y = static_cast<std::size_t>(
        std::lower_bound(label_values.begin(), label_values.end(), labels[i]) - label_values.begin());
    joint[x * ny + y] += 1.0;
  }
  const double n = static_cast<double>(column.size());
  std::vector<double> px(bins, 0.0), py(ny, 0.0);
  for (std::size_t x = 0; x < bins; ++x) {
    for (std::size_t y = 0; y < ny; ++y) {
      px[x] += joint[x * ny + y];
      py[y] += joint[x * ny + y];
    }
  }
  double mi = 0.0;
  for (std::size_t x = 0; x < bins; ++x) {
    for (std::size_t y = 0; y < ny; ++y) {
      const double c = joint[x * ny + y];
      if (c == 0.0) continue;
      // p(x,y)/(p(x)p(y)) == c*n/(cx*cy)
      mi += (c / n) * std::log2(c * n / (px[x] * py[y]));
    }
  }
  return std::max(0.0, mi);
}

// Pearson r; 0 when either input is constant.
inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("pearson_correlation: length mismatch");
  if (x.size() < 2) return 0.0;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct FeatureScore {
  std::size_t feature_id = 0;
  double mi = 0.0;
  double correlation = 0.0;
  std::size_t doc_frequency = 0;

  bool operator==(const FeatureScore&) const = default;
};

inline std::vector<FeatureScore> score_features(const Dataset& d, std::size_t bins = 4) {
  const auto freq = frequency_feature_table(d);
  const auto codes = encode_labels(d.labels);
  std::vector<double> numeric_codes(codes.begin(), codes.end());
  std::vector<FeatureScore> scores(d.cols);
  std::vector<double> col(d.rows);
  for (std::size_t c = 0; c < d.cols; ++c) {
    for (std::size_t r = 0; r < d.rows; ++r) col[r] = d.at(r, c);
    scores[c] = {c, mutual_information(col, codes, bins), pearson_correlation(col, numeric_codes),
                 freq.doc_frequency[c]};
  }
  return scores;
}

struct TopK {
  std::size_t k = 0;
};
struct MinMi {
  double threshold = 0.0;
};
using RefinePolicy = std::variant<TopK, MinMi>;

// Descending MI, then descending doc frequency, then canonical string.
inline std::vector<std::size_t> rank_by_mi(const FeatureCorpus& corpus, const std::vector<FeatureScore>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& sa = scores[a];
    const auto& sb = scores[b];
    if (sa.mi != sb.mi) return sa.mi > sb.mi;
    if (sa.doc_frequency != sb.doc_frequency) return sa.doc_frequency > sb.doc_frequency;
    return corpus.feature(sa.feature_id) < corpus.feature(sb.feature_id);
  });
  return order;
}

namespace detail {

inline std::vector<FeatureScore> scores_by_column(const FeatureCorpus& corpus, const std::vector<FeatureScore>& scores) {
  std::vector<FeatureScore> by_col(corpus.size());
  std::vector<bool> seen(corpus.size(), false);
  for (const auto& s : scores) {
    if (s.feature_id >= corpus.size()) throw DomainError("score for unknown column " + std::to_string(s.feature_id));
    by_col[s.feature_id] = s;
    seen[s.feature_id] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw DomainError("scores do not cover every corpus column");
  }
  return by_col;
}

}  // namespace detail

// Retained features keep their original corpus order.
inline FeatureCorpus refine_feature_set(const FeatureCorpus& corpus, const std::vector<FeatureScore>& scores,
                                        const RefinePolicy& policy) {
  const auto by_col = detail::scores_by_column(corpus, scores);
  std::vector<std::size_t> keep;
  if (const auto* top = std::get_if<TopK>(&policy)) {
    std::size_t k = top->k;
    if (k > corpus.size()) {
      warn("top_k " + std::to_string(k) + " exceeds corpus size " + std::to_string(corpus.size()) + "; clamped");
      k = corpus.size();
    }
    const auto order = rank_by_mi(corpus, by_col);
    keep.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(keep.begin(), keep.end());
  } else {
    const double threshold = std::get<MinMi>(policy).threshold;
    for (std::size_t c = 0; c < corpus.size(); ++c) {
      if (by_col[c].mi >= threshold) keep.push_back(c);
    }
  }
  return corpus.subset(keep, corpus.version() + 1);
}

struct HybridConfig {
  std::size_t min_doc_frequency = 1;   // frequency pre-filter on the dataset rows
  std::size_t top_k = 256;
  double redundancy_threshold = 0.95;  // drop j if |r(j, kept)| exceeds this
  std::size_t bins = 4;
};

struct HybridResult {
  FeatureCorpus corpus;
  std::vector<FeatureScore> scores;  // one per input column
  std::size_t prefiltered = 0;       // columns removed by the frequency pre-filter
  std::size_t redundant = 0;         // columns skipped as redundant
};

// Frequency pre-filter, MI ranking, then a greedy walk down the ranking that
// skips any feature strongly correlated with one already kept, until top_k
// features are kept.
inline HybridResult hybrid_refine(const Dataset& d, const FeatureCorpus& corpus, const HybridConfig& cfg) {
  if (d.cols != corpus.size()) throw ShapeError("hybrid_refine: dataset/corpus column mismatch");
  HybridResult result;
  result.scores = score_features(d, cfg.bins);
  const auto order = rank_by_mi(corpus, result.scores);

  // Standardized columns make each pairwise correlation one dot product.
  auto standardized = [&](std::size_t c) {
    std::vector<double> z = d.column(c);
    const double n = static_cast<double>(d.rows);
    const double mean = std::accumulate(z.begin(), z.end(), 0.0) / n;
    double ss = 0.0;
    for (double& v : z) {
      v -= mean;
      ss += v * v;
    }
    const double norm = std::sqrt(ss);
    for (double& v : z) v = norm > 0.0 ? v / norm : 0.0;
    return z;
  };

  std::vector<std::size_t> keep;
  std::vector<std::vector<double>> kept_z;
  for (std::size_t c : order) {
    if (keep.size() >= cfg.top_k) break;
    if (result.scores[c].doc_frequency < cfg.min_doc_frequency) {
      ++result.prefiltered;
      continue;
    }
    auto z = standardized(c);
    bool redundant = false;
    for (const auto& other : kept_z) {
      double r = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) r += z[i] * other[i];
      if (std::abs(r) > cfg.redundancy_threshold) {
        redundant = true;
        break;
      }
    }
    if (redundant) {
      ++result.redundant;
      continue;
    }
    keep.push_back(c);
    kept_z.push_back(std::move(z));
  }
  std::sort(keep.begin(), keep.end());
  result.corpus = corpus.subset(keep, corpus.version() + 1);
  return result;
}

// CSV `feature,mi_bits,pearson,doc_frequency`.
inline std::string format_scores_csv(const FeatureCorpus& corpus, const std::vector<FeatureScore>& scores) {
  std::string out = "feature,mi_bits,pearson,doc_frequency\n";
  for (const auto& s : scores) {
    out += csv::quote(corpus.feature(s.feature_id)) + "," + format_double(s.mi) + "," +
           format_double(s.correlation) + "," + std::to_string(s.doc_frequency) + "\n";
  }
  return out;
}

}  // namespace malclass
