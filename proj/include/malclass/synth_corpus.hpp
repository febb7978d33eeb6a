#pragma once

// Seeded synthetic report corpora with injectable concept drift.
//
// Each class draws its API tokens i.i.d. from a weighted pool. Drift replaces
// the lowest-weight part of every pool with tokens the original corpus never
// contained, on a schedule set by the drift mode.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "malclass/common.hpp"
#include "malclass/csv.hpp"
#include "malclass/report_ingest.hpp"

namespace malclass {

struct WeightedToken {
  std::string canonical;
  double weight = 1.0;

  bool operator==(const WeightedToken&) const = default;
};

struct ClassProfile {
  ClassLabel label = ClassLabel::benign;
  std::vector<WeightedToken> token_pool;
  std::size_t min_length = 1;
  std::size_t max_length = 1;

  bool operator==(const ClassProfile&) const = default;
};

enum class DriftMode { none, sudden, incremental, recurring };

// How a replaced token is renamed.
//   renamed: "drift<k>_<origPrimary>_na", unreachable from the original token.
//   mutated: original primary kept, one secondary character swapped for
//            another character of the class alphabet.
enum class NoveltyStyle { renamed, mutated };

struct DriftScenario {
  DriftMode mode = DriftMode::none;
  double magnitude = 0.0;
  std::size_t switch_point = 1;  // sudden
  double delta = 0.1;            // incremental, fraction per time step
  std::size_t period = 1;        // recurring
  NoveltyStyle novelty = NoveltyStyle::renamed;
};

inline std::string_view drift_mode_name(DriftMode m) {
  switch (m) {
    case DriftMode::none: return "none";
    case DriftMode::sudden: return "sudden";
    case DriftMode::incremental: return "incremental";
    case DriftMode::recurring: return "recurring";
  }
  return "none";
}

inline DriftMode parse_drift_mode(std::string_view s) {
  if (s == "none") return DriftMode::none;
  if (s == "sudden") return DriftMode::sudden;
  if (s == "incremental") return DriftMode::incremental;
  if (s == "recurring") return DriftMode::recurring;
  throw ConfigError("unknown drift mode '" + std::string(s) + "'");
}

inline void validate(const ClassProfile& p) {
  if (p.token_pool.empty()) {
    throw ConfigError("profile for " + std::string(label_name(p.label)) + " has an empty token pool");
  }
  for (const auto& t : p.token_pool) {
    if (!(t.weight > 0.0) || !std::isfinite(t.weight)) {
      throw ConfigError("token weight must be positive and finite: " + t.canonical);
    }
    if (!ApiToken::parse(t.canonical)) throw ConfigError("not a canonical API token: " + t.canonical);
  }
  if (p.min_length == 0 || p.min_length > p.max_length) {
    throw ConfigError("invalid trace length range for " + std::string(label_name(p.label)));
  }
}

inline void validate(const DriftScenario& s) {
  if (!(s.magnitude >= 0.0 && s.magnitude <= 1.0)) throw ConfigError("drift magnitude must lie in [0,1]");
  if (s.switch_point == 0 || s.period == 0 || !(s.delta > 0.0)) {
    throw ConfigError("drift schedule parameters must be positive");
  }
}

namespace detail {

inline std::uint64_t class_seed(std::uint64_t seed, ClassLabel label) {
  return derive_seed(seed, label_name(label));
}

// Sorted distinct characters of every secondary and tertiary part in the
// pool, skipping the "na" placeholder.
inline std::vector<char> pool_alphabet(const std::vector<WeightedToken>& pool) {
  std::set<char> chars;
  for (const auto& t : pool) {
    auto tok = ApiToken::parse(t.canonical);
    if (!tok) continue;
    if (tok->secondary != "na") chars.insert(tok->secondary.begin(), tok->secondary.end());
    if (tok->tertiary && *tok->tertiary != "na") chars.insert(tok->tertiary->begin(), tok->tertiary->end());
  }
  return {chars.begin(), chars.end()};
}

inline std::size_t replacement_count(const DriftScenario& s, std::size_t time_step, std::size_t pool_size) {
  const double full = s.magnitude * static_cast<double>(pool_size);
  switch (s.mode) {
    case DriftMode::none:
      return 0;
    case DriftMode::sudden:
      return time_step >= s.switch_point ? static_cast<std::size_t>(std::ceil(full)) : 0;
    case DriftMode::incremental: {
      const double progress = std::min(1.0, static_cast<double>(time_step) * s.delta);
      return static_cast<std::size_t>(std::ceil(full * progress));
    }
    case DriftMode::recurring:
      return (time_step / s.period) % 2 == 1 ? static_cast<std::size_t>(std::ceil(full)) : 0;
  }
  return 0;
}

}  // namespace detail

// Number of pool entries apply_drift replaces at this time step.
inline std::size_t drift_replacement_count(const DriftScenario& scenario, std::size_t time_step,
                                           std::size_t pool_size) {
  return std::min(pool_size, detail::replacement_count(scenario, time_step, pool_size));
}

inline std::vector<ClassProfile> apply_drift(const std::vector<ClassProfile>& profiles,
                                             const DriftScenario& scenario, std::size_t time_step,
                                             std::uint64_t seed) {
  validate(scenario);
  std::vector<ClassProfile> out = profiles;
  for (auto& profile : out) {
    const std::size_t k = drift_replacement_count(scenario, time_step, profile.token_pool.size());
    if (k == 0) continue;

    // Lowest weight first, ties by canonical string.
    std::vector<std::size_t> order(profile.token_pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& ta = profile.token_pool[a];
      const auto& tb = profile.token_pool[b];
      if (ta.weight != tb.weight) return ta.weight < tb.weight;
      return ta.canonical < tb.canonical;
    });

    std::set<std::string> taken;
    for (const auto& t : profile.token_pool) taken.insert(t.canonical);
    const std::vector<char> alphabet = detail::pool_alphabet(profile.token_pool);
    Rng rng(detail::class_seed(seed, profile.label));
    std::uint64_t serial = 1000 + rng.below(9000);

    for (std::size_t r = 0; r < k; ++r) {
      auto& slot = profile.token_pool[order[r]];
      const ApiToken original = *ApiToken::parse(slot.canonical);
      std::string fresh;
      if (scenario.novelty == NoveltyStyle::mutated && alphabet.size() > 1) {
        for (int attempt = 0; attempt < 64 && fresh.empty(); ++attempt) {
          ApiToken t = original;
          const std::size_t pos = rng.below(t.secondary.size());
          char c = alphabet[rng.below(alphabet.size())];
          if (c == t.secondary[pos]) continue;
          t.secondary[pos] = c;
          if (!taken.count(t.canonical())) fresh = t.canonical();
        }
      }
      while (fresh.empty()) {
        std::string candidate = "drift" + std::to_string(serial++) + "_" + original.primary + "_na";
        if (!taken.count(candidate)) fresh = std::move(candidate);
      }
      taken.insert(fresh);
      slot.canonical = std::move(fresh);
    }
  }
  return out;
}

// sample ids are "<prefix><label>-<index>" with a zero-padded index.
inline std::vector<ReportTrace> generate_corpus(const std::vector<ClassProfile>& profiles,
                                                const std::map<ClassLabel, std::size_t>& counts,
                                                std::uint64_t seed, std::string_view id_prefix = "") {
  std::vector<ReportTrace> traces;
  for (const auto& [label, count] : counts) {
    auto it = std::find_if(profiles.begin(), profiles.end(),
                           [&](const ClassProfile& p) { return p.label == label; });
    if (it == profiles.end()) {
      throw ConfigError("no profile for requested class " + std::string(label_name(label)));
    }
    validate(*it);
    const ClassProfile& profile = *it;

    std::vector<double> cumulative;
    cumulative.reserve(profile.token_pool.size());
    double total = 0.0;
    for (const auto& t : profile.token_pool) cumulative.push_back(total += t.weight);

    Rng rng(detail::class_seed(seed, label));
    for (std::size_t i = 0; i < count; ++i) {
      ReportTrace trace;
      std::string index = std::to_string(i);
      trace.sample_id = std::string(id_prefix) + std::string(label_name(label)) + "-" +
                        std::string(index.size() < 5 ? 5 - index.size() : 0, '0') + index;
      trace.label = label;
      const std::size_t span = profile.max_length - profile.min_length + 1;
      const std::size_t length = profile.min_length + rng.below(span);
      trace.tokens.reserve(length);
      for (std::size_t j = 0; j < length; ++j) {
        const double u = rng.uniform() * total;
        auto pos = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
        pos = std::min<std::ptrdiff_t>(pos, static_cast<std::ptrdiff_t>(cumulative.size()) - 1);
        trace.tokens.push_back(profile.token_pool[static_cast<std::size_t>(pos)].canonical);
      }
      traces.push_back(std::move(trace));
    }
  }
  return traces;
}

// ---------------------------------------------------------------------------
// Desk-scale defaults

// Per-class sample totals of the reference dataset (adware..benign).
inline constexpr std::array<std::size_t, kNumClasses> kReferenceClassTotals = {
    1986, 674, 2497, 946, 3568, 1357, 2392, 8634};

// Scales the reference class mix to `total` samples with largest-remainder
// rounding, so the counts sum exactly to total.
inline std::map<ClassLabel, std::size_t> proportional_counts(std::size_t total) {
  std::size_t ref_sum = 0;
  for (auto v : kReferenceClassTotals) ref_sum += v;
  std::map<ClassLabel, std::size_t> counts;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double exact = static_cast<double>(total) * static_cast<double>(kReferenceClassTotals[c]) /
                         static_cast<double>(ref_sum);
    const auto base = static_cast<std::size_t>(std::floor(exact));
    counts[kAllClasses[c]] = base;
    assigned += base;
    remainders.emplace_back(exact - static_cast<double>(base), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
    counts[kAllClasses[remainders[i % remainders.size()].second]] += 1;
  }
  return counts;
}

struct DefaultProfileOptions {
  std::size_t shared_tokens = 12;
  std::size_t specific_tokens = 12;
  double shared_weight = 3.0;
  double specific_weight = 1.0;
  std::size_t min_length = 20;
  std::size_t max_length = 60;
};

// Every class shares the same high-weight system-call tokens and owns a set of
// lower-weight tokens whose secondary parts use a class-private alphabet.
inline std::vector<ClassProfile> default_profiles(const DefaultProfileOptions& opt = {}) {
  static const std::vector<std::string> shared = {
      "NtAllocateVirtualMemory_na", "NtClose_na",       "NtFreeVirtualMemory_na",
      "NtQueryInformationProcess_na", "NtOpenKey_na",   "NtQueryValueKey_na",
      "GetSystemTimeAsFileTime_na", "NtProtectVirtualMemory_na", "NtCreateFile_na",
      "NtReadFile_na",              "NtWriteFile_na",   "GetTickCount_na",
      "NtDelayExecution_na",        "NtOpenProcess_na", "NtMapViewOfSection_na",
      "NtUnmapViewOfSection_na",
  };
  static const std::vector<std::string> primaries = {
      "RegOpenKeyExW", "RegSetValueExA",  "CreateProcessInternalW", "InternetOpenUrlA",
      "CopyFileW",     "NtCreateSection", "CryptEncrypt",           "SetWindowsHookExA",
      "URLDownloadToFileW", "FindFirstFileExW", "send",            "connect",
      "DeleteFileW",   "CreateServiceA",  "WriteProcessMemory",     "NtCreateThreadEx",
  };
  // Per-class four-letter alphabets keep the class-specific tokens unique.
  static const std::array<std::string, kNumClasses> alphabets = {
      "adwq", "bkzo", "dlpx", "syvi", "trjh", "wmcf", "vrgu", "bejk"};

  std::vector<ClassProfile> profiles;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ClassProfile p;
    p.label = kAllClasses[c];
    p.min_length = opt.min_length;
    p.max_length = opt.max_length;
    for (std::size_t i = 0; i < opt.shared_tokens; ++i) {
      p.token_pool.push_back({shared[i % shared.size()], opt.shared_weight});
    }
    const std::string& abc = alphabets[c];
    for (std::size_t i = 0; i < opt.specific_tokens; ++i) {
      // 64 distinct three-letter strings per alphabet; 5 is a unit mod 64.
      const std::size_t v = (i * 5 + c * 3) % 64;
      const std::string secondary{abc[v % 4], abc[(v / 4) % 4], abc[v / 16]};
      p.token_pool.push_back({primaries[(i + c) % primaries.size()] + "_" + secondary, opt.specific_weight});
    }
    // Collapse any accidental duplicates; weight accumulates.
    std::vector<WeightedToken> unique;
    for (auto& t : p.token_pool) {
      auto it = std::find_if(unique.begin(), unique.end(),
                             [&](const WeightedToken& u) { return u.canonical == t.canonical; });
      if (it == unique.end()) unique.push_back(t);
      else it->weight += t.weight;
    }
    p.token_pool = std::move(unique);
    profiles.push_back(std::move(p));
  }
  return profiles;
}

// ---------------------------------------------------------------------------
// JSON config and on-disk output

inline ClassProfile profile_from_json(const nlohmann::json& j) {
  ClassProfile p;
  auto label = parse_label(j.at("label").get<std::string>());
  if (!label) throw ConfigError("unknown class label in profile: " + j.at("label").dump());
  p.label = *label;
  for (const auto& t : j.at("token_pool")) {
    p.token_pool.push_back({t.at("canonical").get<std::string>(), t.value("weight", 1.0)});
  }
  const auto& range = j.at("trace_length_range");
  p.min_length = range.at(0).get<std::size_t>();
  p.max_length = range.at(1).get<std::size_t>();
  validate(p);
  return p;
}

inline nlohmann::json profile_to_json(const ClassProfile& p) {
  nlohmann::json pool = nlohmann::json::array();
  for (const auto& t : p.token_pool) pool.push_back({{"canonical", t.canonical}, {"weight", t.weight}});
  return {{"label", std::string(label_name(p.label))},
          {"token_pool", pool},
          {"trace_length_range", {p.min_length, p.max_length}}};
}

inline DriftScenario scenario_from_json(const nlohmann::json& j) {
  DriftScenario s;
  s.mode = parse_drift_mode(j.value("mode", std::string("none")));
  s.magnitude = j.value("magnitude", 0.0);
  s.switch_point = j.value("switch_point", std::size_t{1});
  s.delta = j.value("delta", 0.1);
  s.period = j.value("period", std::size_t{1});
  const std::string novelty = j.value("novelty", std::string("renamed"));
  if (novelty == "renamed") s.novelty = NoveltyStyle::renamed;
  else if (novelty == "mutated") s.novelty = NoveltyStyle::mutated;
  else throw ConfigError("unknown drift novelty style '" + novelty + "'");
  validate(s);
  return s;
}

// One report JSON per trace plus labels.csv, ingestible by ingest_directory.
inline void write_corpus_directory(const std::filesystem::path& dir, const std::vector<ReportTrace>& traces) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& t : traces) {
    csv::write_file((dir / (t.sample_id + ".json")).string(), format_report(t));
  }
  csv::write_file((dir / "labels.csv").string(), format_label_csv(traces));
}

}  // namespace malclass
