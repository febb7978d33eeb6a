#pragma once

// One generate -> score -> select pass over a class's original unigram
// features, and the corpus augmentation that follows it.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "malclass/common.hpp"
#include "malclass/csv.hpp"
#include "malclass/ngram.hpp"
#include "malclass/report_ingest.hpp"

namespace malclass {

struct Chromosome {
  std::string primary;
  std::string secondary;
  std::optional<std::string> tertiary;
  std::string origin_feature;
  ClassLabel label = ClassLabel::adware;
  bool duplicate = false;  // still equal to an original after every retry

  std::string canonical() const { return ApiToken{primary, secondary, tertiary}.canonical(); }
  bool operator==(const Chromosome&) const = default;
};

// The unmutated chromosome for an original unigram feature.
inline Chromosome chromosome_from(std::string_view canonical, ClassLabel label) {
  auto token = ApiToken::parse(canonical);
  if (!token) throw DomainError("not an API token: " + std::string(canonical));
  return {token->primary, token->secondary, token->tertiary, std::string(canonical), label, false};
}

struct FitnessRecord {
  Chromosome chromosome;
  std::string target;
  std::size_t score = 0;

  bool operator==(const FitnessRecord&) const = default;
};

enum class SelectionOrder { ascending, descending };

inline std::string_view selection_order_name(SelectionOrder o) {
  return o == SelectionOrder::ascending ? "ascending" : "descending";
}

inline SelectionOrder parse_selection_order(std::string_view s) {
  if (s == "ascending") return SelectionOrder::ascending;
  if (s == "descending") return SelectionOrder::descending;
  throw ConfigError("unknown selection_order '" + std::string(s) + "'");
}

struct GAConfig {
  std::size_t population_size = 10'000;
  double mutation_rate = 0.34;
  double crossover_rate = 0.1;
  std::size_t top_k_per_class = 1500;
  std::uint64_t seed = 0;
  SelectionOrder selection_order = SelectionOrder::ascending;
  std::size_t max_retries = 16;
  bool unique_selection = true;  // keep one record per canonical string within a class
  std::map<ClassLabel, std::string> fixed_targets;  // replaces origin_feature as target when set

  void validate() const {
    if (population_size < 1) throw ConfigError("population_size must be at least 1");
    if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw ConfigError("mutation_rate must lie in [0,1]");
    if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0)) throw ConfigError("crossover_rate must lie in [0,1]");
  }
};

// ---------------------------------------------------------------------------

// Sorted distinct characters of the secondary and tertiary parts.
inline std::vector<char> class_alphabet(const std::vector<Chromosome>& originals) {
  std::set<char> chars;
  for (const auto& c : originals) {
    chars.insert(c.secondary.begin(), c.secondary.end());
    if (c.tertiary) chars.insert(c.tertiary->begin(), c.tertiary->end());
  }
  return {chars.begin(), chars.end()};
}

// Each mutable character is independently redrawn from `alphabet` with
// probability `rate`; a redraw may land on the same character.
inline Chromosome mutate(const Chromosome& parent, double rate, std::uint64_t seed, const std::vector<char>& alphabet) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("mutation rate must lie in [0,1]");
  Chromosome child = parent;
  child.duplicate = false;
  if (alphabet.empty() || rate == 0.0) return child;
  Rng rng(seed);
  auto redraw = [&](std::string& part) {
    for (char& ch : part) {
      if (rng.bernoulli(rate)) ch = alphabet[rng.below(alphabet.size())];
    }
  };
  redraw(child.secondary);
  if (child.tertiary) redraw(*child.tertiary);
  return child;
}

// child1 = (a.primary, b.secondary, a.tertiary), child2 = (b.primary, a.secondary, b.tertiary).
// The rule is fixed; the seed parameter exists for interface symmetry with mutate.
inline std::pair<Chromosome, Chromosome> crossover(const Chromosome& a, const Chromosome& b,
                                                   [[maybe_unused]] std::uint64_t seed = 0) {
  if (a.label != b.label) throw DomainError("crossover parents belong to different classes");
  Chromosome c1 = a;
  Chromosome c2 = b;
  c1.secondary = b.secondary;
  c2.secondary = a.secondary;
  c1.duplicate = c2.duplicate = false;
  return {std::move(c1), std::move(c2)};
}

// Positionwise mismatches over the common prefix plus the length difference.
inline std::size_t fitness(std::string_view individual, std::string_view target) {
  const std::size_t n = std::min(individual.size(), target.size());
  std::size_t d = 0;
  for (std::size_t i = 0; i < n; ++i) d += individual[i] != target[i];
  return d + (std::max(individual.size(), target.size()) - n);
}

// Largest-remainder split of `total` proportional to `weights`; ties go to the earlier key.
inline std::map<ClassLabel, std::size_t> proportional_quotas(const std::map<ClassLabel, std::size_t>& weights,
                                                             std::size_t total) {
  std::map<ClassLabel, std::size_t> out;
  std::size_t weight_sum = 0;
  for (const auto& [label, w] : weights) weight_sum += w;
  if (weight_sum == 0) {
    for (const auto& [label, w] : weights) out[label] = 0;
    return out;
  }
  std::vector<std::pair<double, ClassLabel>> rem;
  std::size_t assigned = 0;
  for (const auto& [label, w] : weights) {
    const double exact = static_cast<double>(total) * static_cast<double>(w) / static_cast<double>(weight_sum);
    const auto base = static_cast<std::size_t>(exact);
    out[label] = base;
    assigned += base;
    rem.emplace_back(exact - static_cast<double>(base), label);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[rem[i % rem.size()].second];
  return out;
}

using ClassOriginals = std::map<ClassLabel, std::vector<Chromosome>>;

inline std::map<ClassLabel, std::size_t> population_quotas(const ClassOriginals& originals, std::size_t total) {
  std::map<ClassLabel, std::size_t> weights;
  for (const auto& [label, list] : originals) weights[label] = list.size();
  return proportional_quotas(weights, total);
}

// Individual i of class c uses seed derive(derive(seed, c), i) and, on retry r,
// derive(that, r), so every mutant is independent of generation order.
inline std::vector<Chromosome> generate_population(const ClassOriginals& originals, const GAConfig& cfg) {
  cfg.validate();
  for (const auto& [label, list] : originals) {
    if (list.empty()) throw ConfigError("no original features for class " + std::string(label_name(label)));
  }
  std::unordered_set<std::string> original_set;
  for (const auto& [label, list] : originals)
    for (const auto& c : list) original_set.insert(c.canonical());

  const auto quotas = population_quotas(originals, cfg.population_size);
  std::vector<Chromosome> population;
  population.reserve(cfg.population_size);
  for (const auto& [label, list] : originals) {
    const auto alphabet = class_alphabet(list);
    const std::uint64_t class_seed = derive_seed(cfg.seed, label_name(label));
    for (std::size_t i = 0; i < quotas.at(label); ++i) {
      const std::uint64_t individual_seed = derive_seed(class_seed, i);
      Chromosome child;
      for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        Rng rng(derive_seed(individual_seed, attempt));
        const Chromosome& a = list[rng.below(list.size())];
        Chromosome base = a;
        if (rng.bernoulli(cfg.crossover_rate)) {
          const Chromosome& b = list[rng.below(list.size())];
          base = crossover(a, b).first;
        }
        child = mutate(base, cfg.mutation_rate, rng.next(), alphabet);
        child.duplicate = original_set.count(child.canonical()) != 0;
        if (!child.duplicate) break;
      }
      population.push_back(std::move(child));
    }
  }
  return population;
}

namespace detail {

inline bool record_before(const FitnessRecord& a, const FitnessRecord& b, SelectionOrder order) {
  if (a.score != b.score) return order == SelectionOrder::ascending ? a.score < b.score : a.score > b.score;
  return a.chromosome.canonical() < b.chromosome.canonical();
}

}  // namespace detail

using Selection = std::map<ClassLabel, std::vector<FitnessRecord>>;

inline Selection score_and_select(const std::vector<Chromosome>& mutants, const GAConfig& cfg) {
  Selection by_class;
  for (const auto& m : mutants) {
    auto fixed = cfg.fixed_targets.find(m.label);
    std::string target = fixed != cfg.fixed_targets.end() ? fixed->second : m.origin_feature;
    const std::size_t score = fitness(m.canonical(), target);
    by_class[m.label].push_back({m, std::move(target), score});
  }
  for (auto& [label, records] : by_class) {
    std::stable_sort(records.begin(), records.end(), [&](const FitnessRecord& a, const FitnessRecord& b) {
      return detail::record_before(a, b, cfg.selection_order);
    });
    if (cfg.unique_selection) {
      std::unordered_set<std::string> seen;
      std::vector<FitnessRecord> unique;
      for (auto& r : records) {
        if (unique.size() >= cfg.top_k_per_class) break;
        if (seen.insert(r.chromosome.canonical()).second) unique.push_back(std::move(r));
      }
      records = std::move(unique);
    } else if (records.size() > cfg.top_k_per_class) {
      records.resize(cfg.top_k_per_class);
    }
  }
  return by_class;
}

struct AugmentResult {
  FeatureCorpus corpus;
  std::size_t original_size = 0;
  std::size_t added = 0;
  std::size_t skipped = 0;  // already present in the corpus or earlier in the selection

  double ratio() const { return original_size ? static_cast<double>(added) / static_cast<double>(original_size) : 0.0; }
};

// Appends selected mutants as unigram features in class order.
inline AugmentResult augment_corpus(const FeatureCorpus& corpus, const Selection& selected) {
  AugmentResult r;
  r.corpus = corpus;
  r.original_size = corpus.size();
  for (const auto& [label, records] : selected) {
    for (const auto& rec : records) {
      if (r.corpus.add(rec.chromosome.canonical(), Provenance::mutant)) {
        ++r.added;
      } else {
        ++r.skipped;
      }
    }
  }
  r.corpus.set_version(corpus.version() + 1);
  return r;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string format_selection_csv(const Selection& selected) {
  std::string out = "label,canonical,origin_feature,fitness\n";
  for (const auto& [label, records] : selected) {
    for (const auto& r : records) {
      out += std::string(label_name(label)) + "," + csv::quote(r.chromosome.canonical()) + "," +
             csv::quote(r.chromosome.origin_feature) + "," + std::to_string(r.score) + "\n";
    }
  }
  return out;
}

inline nlohmann::ordered_json ga_config_to_json(const GAConfig& cfg) {
  nlohmann::ordered_json j;
  j["population_size"] = cfg.population_size;
  j["mutation_rate"] = cfg.mutation_rate;
  j["crossover_rate"] = cfg.crossover_rate;
  j["top_k_per_class"] = cfg.top_k_per_class;
  j["seed"] = cfg.seed;
  j["selection_order"] = selection_order_name(cfg.selection_order);
  j["max_retries"] = cfg.max_retries;
  j["unique_selection"] = cfg.unique_selection;
  nlohmann::ordered_json targets = nlohmann::ordered_json::object();
  for (const auto& [label, t] : cfg.fixed_targets) targets[std::string(label_name(label))] = t;
  j["fixed_targets"] = targets;
  return j;
}

inline GAConfig ga_config_from_json(const nlohmann::json& j) {
  GAConfig cfg;
  cfg.population_size = j.value("population_size", cfg.population_size);
  cfg.mutation_rate = j.value("mutation_rate", cfg.mutation_rate);
  cfg.crossover_rate = j.value("crossover_rate", cfg.crossover_rate);
  cfg.top_k_per_class = j.value("top_k_per_class", cfg.top_k_per_class);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.selection_order = parse_selection_order(j.value("selection_order", std::string("ascending")));
  cfg.max_retries = j.value("max_retries", cfg.max_retries);
  cfg.unique_selection = j.value("unique_selection", cfg.unique_selection);
  if (j.contains("fixed_targets")) {
    for (const auto& [name, target] : j.at("fixed_targets").items()) {
      auto label = parse_label(name);
      if (!label) throw ConfigError("unknown class in fixed_targets: " + name);
      cfg.fixed_targets[*label] = target.get<std::string>();
    }
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::ordered_json ga_manifest(const GAConfig& cfg, const std::map<ClassLabel, std::size_t>& quotas,
                                          const Selection& selected, const AugmentResult& aug,
                                          std::size_t duplicates_flagged) {
  nlohmann::ordered_json j;
  j["config"] = ga_config_to_json(cfg);
  nlohmann::ordered_json q = nlohmann::ordered_json::object();
  nlohmann::ordered_json s = nlohmann::ordered_json::object();
  for (const auto& [label, n] : quotas) q[std::string(label_name(label))] = n;
  for (const auto& [label, recs] : selected) s[std::string(label_name(label))] = recs.size();
  j["quotas"] = q;
  j["selected"] = s;
  j["duplicates_flagged"] = duplicates_flagged;
  j["original_corpus_size"] = aug.original_size;
  j["added"] = aug.added;
  j["skipped"] = aug.skipped;
  j["augmentation_ratio"] = aug.ratio();
  return j;
}

}  // namespace malclass
