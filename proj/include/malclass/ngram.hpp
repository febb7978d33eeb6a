#pragma once

// n-gram features, per-class unique corpora, term-frequency vectors.

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "malclass/common.hpp"
#include "malclass/csv.hpp"
#include "malclass/report_ingest.hpp"

namespace malclass {

inline constexpr char kNGramSeparator = ',';

struct NGramFeature {
  std::vector<std::string> parts;

  std::size_t n() const { return parts.size(); }

  std::string canonical() const {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) out.push_back(kNGramSeparator);
      out += parts[i];
    }
    return out;
  }

  static NGramFeature parse(std::string_view canonical) {
    NGramFeature f;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = canonical.find(kNGramSeparator, start);
      f.parts.emplace_back(canonical.substr(start, pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    return f;
  }

  bool operator==(const NGramFeature&) const = default;
};

using NValues = std::set<int>;

inline void check_n(int n) {
  if (n < 1 || n > 3) throw DomainError("n-gram order must be 1, 2 or 3, got " + std::to_string(n));
}

inline std::vector<NGramFeature> build_ngrams(const std::vector<std::string>& tokens, int n) {
  check_n(n);
  std::vector<NGramFeature> out;
  const auto un = static_cast<std::size_t>(n);
  if (tokens.size() < un) return out;
  out.reserve(tokens.size() - un + 1);
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
    out.push_back(NGramFeature{{tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                tokens.begin() + static_cast<std::ptrdiff_t>(i + un)}});
  }
  return out;
}

// Canonical strings of all requested orders, ascending n, window order within n.
inline std::vector<std::string> ngram_canonicals(const std::vector<std::string>& tokens, const NValues& n_values) {
  std::vector<std::string> out;
  for (int n : n_values) {
    check_n(n);
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
      std::string s = tokens[i];
      for (std::size_t k = 1; k < un; ++k) {
        s.push_back(kNGramSeparator);
        s += tokens[i + k];
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class Provenance { original, mutant };

inline std::string_view provenance_name(Provenance p) { return p == Provenance::original ? "original" : "mutant"; }

// Ordered set of unique feature strings; position == column id.
class FeatureCorpus {
 public:
  FeatureCorpus() = default;

  // Returns false when the feature is already present.
  bool add(std::string canonical, Provenance provenance = Provenance::original) {
    if (index_.count(canonical)) return false;
    index_.emplace(canonical, features_.size());
    features_.push_back(std::move(canonical));
    provenance_.push_back(provenance);
    return true;
  }

  std::size_t size() const { return features_.size(); }
  bool empty() const { return features_.empty(); }
  bool contains(std::string_view f) const { return index_.count(std::string(f)) != 0; }

  std::optional<std::size_t> column_of(std::string_view f) const {
    auto it = index_.find(std::string(f));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<std::string>& features() const { return features_; }
  const std::string& feature(std::size_t column) const { return features_.at(column); }
  Provenance provenance(std::size_t column) const { return provenance_.at(column); }
  const std::unordered_map<std::string, std::size_t>& index() const { return index_; }

  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  // New corpus holding the given columns in the given order; provenance kept.
  FeatureCorpus subset(const std::vector<std::size_t>& columns, std::uint64_t new_version) const {
    FeatureCorpus out;
    for (std::size_t c : columns) out.add(features_.at(c), provenance_.at(c));
    out.version_ = new_version;
    return out;
  }

  bool operator==(const FeatureCorpus& o) const {
    return features_ == o.features_ && provenance_ == o.provenance_ && version_ == o.version_;
  }

 private:
  std::vector<std::string> features_;
  std::vector<Provenance> provenance_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t version_ = 1;
};

using ClassCorpora = std::map<ClassLabel, FeatureCorpus>;

inline ClassCorpora build_unique_corpora(const std::vector<ReportTrace>& traces, const NValues& n_values,
                                         const std::vector<ClassLabel>& classes = {kAllClasses.begin(),
                                                                                   kAllClasses.end()}) {
  ClassCorpora out;
  for (ClassLabel c : classes) out[c];
  for (const auto& trace : traces) {
    if (!trace.label) throw DomainError("trace " + trace.sample_id + " is unlabeled");
    auto it = out.find(*trace.label);
    if (it == out.end()) continue;
    for (auto& f : ngram_canonicals(trace.tokens, n_values)) it->second.add(std::move(f));
  }
  for (const auto& [label, corpus] : out) {
    if (corpus.empty()) warn("no n-grams for class " + std::string(label_name(label)));
  }
  return out;
}

// Number of distinct traces of each class that contain each feature.
inline std::vector<std::size_t> document_frequency(const FeatureCorpus& corpus,
                                                   const std::vector<ReportTrace>& traces, ClassLabel label,
                                                   const NValues& n_values) {
  std::vector<std::size_t> df(corpus.size(), 0);
  std::vector<std::size_t> last_seen(corpus.size(), static_cast<std::size_t>(-1));
  for (std::size_t t = 0; t < traces.size(); ++t) {
    if (traces[t].label != label) continue;
    for (const auto& f : ngram_canonicals(traces[t].tokens, n_values)) {
      auto col = corpus.column_of(f);
      if (!col || last_seen[*col] == t) continue;
      last_seen[*col] = t;
      ++df[*col];
    }
  }
  return df;
}

// Orders to consider when counting documents: every order present in the corpus.
inline NValues orders_in(const FeatureCorpus& corpus) {
  NValues ns;
  for (const auto& f : corpus.features()) {
    ns.insert(static_cast<int>(std::count(f.begin(), f.end(), kNGramSeparator)) + 1);
  }
  return ns;
}

inline ClassCorpora frequency_filter(const ClassCorpora& corpora, const std::vector<ReportTrace>& traces,
                                     std::size_t min_doc_count) {
  if (min_doc_count < 1) throw DomainError("min_doc_count must be at least 1");
  ClassCorpora out;
  for (const auto& [label, corpus] : corpora) {
    const auto df = document_frequency(corpus, traces, label, orders_in(corpus));
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < corpus.size(); ++c) {
      if (df[c] >= min_doc_count) keep.push_back(c);
    }
    out[label] = corpus.subset(keep, corpus.version() + 1);
  }
  return out;
}

// Per-class corpora concatenated in class order (benign last), globally deduplicated.
inline FeatureCorpus merge_corpora(const ClassCorpora& corpora) {
  FeatureCorpus merged;
  std::uint64_t version = 0;
  for (const auto& [label, corpus] : corpora) {
    version = std::max(version, corpus.version());
    for (std::size_t c = 0; c < corpus.size(); ++c) merged.add(corpus.feature(c), corpus.provenance(c));
  }
  merged.set_version(version + 1);
  return merged;
}

// entry[j] = count(feature j) / count(in-corpus n-grams); zero vector if none.
inline std::vector<double> compute_tf(const std::vector<std::string>& trace_ngrams, const FeatureCorpus& corpus) {
  std::vector<double> tf(corpus.size(), 0.0);
  std::size_t total = 0;
  for (const auto& g : trace_ngrams) {
    if (auto col = corpus.column_of(g)) {
      tf[*col] += 1.0;
      ++total;
    }
  }
  if (total == 0) return tf;
  const double denom = static_cast<double>(total);
  for (double& v : tf) v /= denom;
  return tf;
}

inline std::vector<double> compute_tf(const std::vector<NGramFeature>& trace_ngrams, const FeatureCorpus& corpus) {
  std::vector<std::string> canon;
  canon.reserve(trace_ngrams.size());
  for (const auto& g : trace_ngrams) canon.push_back(g.canonical());
  return compute_tf(canon, corpus);
}

// ---------------------------------------------------------------------------

struct Dataset {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major rows x cols
  std::vector<ClassLabel> labels;
  std::vector<std::string> sample_ids;
  std::uint64_t corpus_version = 0;
  std::array<std::size_t, kNumClasses> manifest{};

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  const double* row(std::size_t r) const { return values.data() + r * cols; }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = values[r * cols + c];
    return out;
  }

  // Rows at the given positions, in that order.
  Dataset select_rows(const std::vector<std::size_t>& which) const {
    Dataset d;
    d.rows = which.size();
    d.cols = cols;
    d.corpus_version = corpus_version;
    d.values.reserve(d.rows * cols);
    for (std::size_t r : which) {
      d.values.insert(d.values.end(), row(r), row(r) + cols);
      d.labels.push_back(labels[r]);
      if (!sample_ids.empty()) d.sample_ids.push_back(sample_ids[r]);
      ++d.manifest[class_index(labels[r])];
    }
    return d;
  }

  bool operator==(const Dataset&) const = default;
};

inline std::array<std::size_t, kNumClasses> label_histogram(const std::vector<ClassLabel>& labels) {
  std::array<std::size_t, kNumClasses> h{};
  for (auto l : labels) ++h[class_index(l)];
  return h;
}

inline Dataset vectorize_dataset(const std::vector<ReportTrace>& traces, const FeatureCorpus& corpus,
                                 const NValues& n_values) {
  if (corpus.empty()) throw DomainError("cannot vectorize against an empty corpus");
  Dataset d;
  d.rows = traces.size();
  d.cols = corpus.size();
  d.corpus_version = corpus.version();
  d.values.reserve(d.rows * d.cols);
  for (const auto& t : traces) {
    if (!t.label) throw DomainError("trace " + t.sample_id + " is unlabeled");
    auto tf = compute_tf(ngram_canonicals(t.tokens, n_values), corpus);
    d.values.insert(d.values.end(), tf.begin(), tf.end());
    d.labels.push_back(*t.label);
    d.sample_ids.push_back(t.sample_id);
  }
  d.manifest = label_histogram(d.labels);
  return d;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json corpus_to_json(const FeatureCorpus& corpus) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    arr.push_back({{"canonical", corpus.feature(c)}, {"provenance", provenance_name(corpus.provenance(c))}});
  }
  return arr;
}

inline FeatureCorpus corpus_from_json(const nlohmann::json& arr, std::uint64_t version = 1) {
  FeatureCorpus corpus;
  for (const auto& e : arr) {
    const std::string prov = e.value("provenance", std::string("original"));
    if (prov != "original" && prov != "mutant") throw ParseError("unknown provenance '" + prov + "'", 0);
    if (!corpus.add(e.at("canonical").get<std::string>(),
                    prov == "mutant" ? Provenance::mutant : Provenance::original)) {
      throw ParseError("duplicate feature in corpus file: " + e.at("canonical").get<std::string>(), 0);
    }
  }
  corpus.set_version(version);
  return corpus;
}

inline nlohmann::ordered_json manifest_to_json(const std::array<std::size_t, kNumClasses>& manifest) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (ClassLabel c : kAllClasses) j[std::string(label_name(c))] = manifest[class_index(c)];
  return j;
}

// Feature columns then `label`; values written shortest-round-trip.
inline std::string format_dataset_csv(const Dataset& d, const FeatureCorpus& corpus) {
  if (corpus.size() != d.cols) throw ShapeError("dataset/corpus column count mismatch");
  std::string out;
  std::vector<std::string> header(corpus.features());
  header.push_back("label");
  out += csv::join_row(header) + "\n";
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t c = 0; c < d.cols; ++c) {
      out += format_double(d.at(r, c));
      out.push_back(',');
    }
    out += label_name(d.labels[r]);
    out.push_back('\n');
  }
  return out;
}

inline nlohmann::ordered_json dataset_sidecar(const Dataset& d) {
  nlohmann::ordered_json j;
  j["rows"] = d.rows;
  j["cols"] = d.cols;
  j["corpus_version"] = d.corpus_version;
  j["manifest"] = manifest_to_json(d.manifest);
  return j;
}

}  // namespace malclass
