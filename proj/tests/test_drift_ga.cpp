#include <gtest/gtest.h>

#include <numeric>

#include "malclass/drift_ga.hpp"
#include "support/oracles.hpp"

using namespace malclass;

namespace {

const std::vector<char> kAlphabet = {'a', 'b', 'c', 'd'};

Chromosome chrom(const std::string& canonical, ClassLabel l = ClassLabel::worm) { return chromosome_from(canonical, l); }

std::string random_string(Rng& rng, std::size_t len, std::string_view chars) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(chars[rng.below(chars.size())]);
  return s;
}

}  // namespace

TEST(Mutate, RateZeroIsIdentity) {
  const auto p = chrom("LdrLoadDll_urlmon_urlmon.dll");
  EXPECT_EQ(mutate(p, 0.0, 5, kAlphabet).canonical(), p.canonical());
}

TEST(Mutate, RateOneResamplesEveryMutableCharacter) {
  const auto p = chrom("LdrLoadDll_urlmon_urlmon.dll");
  const auto m = mutate(p, 1.0, 5, {'x', 'y'});
  EXPECT_EQ(m.primary, "LdrLoadDll");
  EXPECT_EQ(m.secondary.size(), 6u);
  EXPECT_EQ(m.tertiary->size(), 10u);
  for (char c : m.secondary + *m.tertiary) EXPECT_TRUE(c == 'x' || c == 'y');
  EXPECT_EQ(m.origin_feature, p.canonical());
  EXPECT_EQ(m.label, p.label);
}

TEST(Mutate, ChangedFractionMatchesBinomialExpectation) {
  const auto p = chrom("Api_abcd_dcba");
  std::size_t changed = 0, total = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto m = mutate(p, 0.5, s, kAlphabet);
    const std::string before = p.secondary + *p.tertiary;
    const std::string after = m.secondary + *m.tertiary;
    for (std::size_t i = 0; i < before.size(); ++i) changed += before[i] != after[i];
    total += before.size();
  }
  const double frac = static_cast<double>(changed) / static_cast<double>(total);
  const double correction = 1.0 - 1.0 / static_cast<double>(kAlphabet.size());
  EXPECT_GE(frac, 0.47 * correction);
  EXPECT_LE(frac, 0.53 * correction);
}

TEST(Mutate, RejectsBadRate) { EXPECT_THROW(mutate(chrom("A_b"), 1.5, 0, kAlphabet), DomainError); }

TEST(Crossover, SwapsSecondaries) {
  const auto a = chrom("P1_S1_T1");
  const auto b = chrom("P2_S2_T2");
  const auto [c1, c2] = crossover(a, b, 3);
  EXPECT_EQ(c1.canonical(), "P1_S2_T1");
  EXPECT_EQ(c2.canonical(), "P2_S1_T2");
  EXPECT_EQ(c1.origin_feature, a.canonical());
  EXPECT_EQ(c2.origin_feature, b.canonical());
}

TEST(Crossover, SelfCrossoverIsIdentityAndAbsentTertiaryStaysAbsent) {
  const auto a = chrom("P1_S1");
  const auto [c1, c2] = crossover(a, a);
  EXPECT_EQ(c1, a);
  EXPECT_EQ(c2, a);
  const auto [d1, d2] = crossover(a, chrom("P2_S2_T2"));
  EXPECT_EQ(d1.canonical(), "P1_S2");
  EXPECT_EQ(d2.canonical(), "P2_S1_T2");
}

TEST(Crossover, CrossClassIsDomainError) {
  EXPECT_THROW(crossover(chrom("A_b", ClassLabel::worm), chrom("A_b", ClassLabel::virus)), DomainError);
}

TEST(Crossover, PrimariesPreservedOverRandomPairs) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto a = chrom("P" + random_string(rng, 4, "xyz") + "_" + random_string(rng, 3, "ab"));
    const auto b = chrom("Q" + random_string(rng, 4, "xyz") + "_" + random_string(rng, 3, "ab") + "_t");
    const auto [c1, c2] = crossover(a, b);
    EXPECT_EQ(c1.primary, a.primary);
    EXPECT_EQ(c2.primary, b.primary);
  }
}

TEST(Fitness, Examples) {
  EXPECT_EQ(fitness("abc", "abc"), 0u);
  EXPECT_EQ(fitness("abc", "abd"), 1u);
  EXPECT_EQ(fitness("abc", "ab"), 1u);
  EXPECT_EQ(fitness("", "abcd"), 4u);
}

TEST(Fitness, EqualLengthMatchesHammingAndIsSymmetric) {
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const auto len = rng.below(20);
    const auto a = random_string(rng, len, "abc_");
    const auto b = random_string(rng, len, "abc_");
    EXPECT_EQ(fitness(a, b), static_cast<std::size_t>(oracle::hamming(a, b)));
    const auto c = random_string(rng, rng.below(20), "abc");
    EXPECT_EQ(fitness(a, c), fitness(c, a));
  }
}

TEST(Quotas, LargestRemainder) {
  const auto q = proportional_quotas({{ClassLabel::adware, 1}, {ClassLabel::worm, 1}, {ClassLabel::virus, 1}}, 10);
  EXPECT_EQ(q.at(ClassLabel::adware), 4u);
  EXPECT_EQ(q.at(ClassLabel::worm), 3u);
  EXPECT_EQ(q.at(ClassLabel::virus), 3u);
}

TEST(GeneratePopulation, SingleClassContract) {
  ClassOriginals originals = {{ClassLabel::worm, {chrom("A_ab"), chrom("B_ba_cc")}}};
  GAConfig cfg;
  cfg.population_size = 10;
  cfg.mutation_rate = 1.0;
  const auto pop = generate_population(originals, cfg);
  ASSERT_EQ(pop.size(), 10u);
  for (const auto& m : pop) {
    EXPECT_TRUE(m.primary == "A" || m.primary == "B");
    EXPECT_TRUE(m.duplicate || (m.canonical() != "A_ab" && m.canonical() != "B_ba_cc"));
  }
}

TEST(GeneratePopulation, QuotasAcrossSevenClasses) {
  ClassOriginals originals;
  std::map<ClassLabel, std::size_t> sizes;
  Rng rng(3);
  for (ClassLabel l : kMalwareClasses) {
    const std::size_t n = 3 + rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      originals[l].push_back(chrom("Api" + std::to_string(i) + "_" + random_string(rng, 5, "pqrs"), l));
    }
    sizes[l] = n;
  }
  GAConfig cfg;
  cfg.population_size = 10000;
  const auto pop = generate_population(originals, cfg);
  ASSERT_EQ(pop.size(), 10000u);
  std::map<ClassLabel, std::size_t> counts;
  for (const auto& m : pop) ++counts[m.label];
  const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0, [](double s, const auto& kv) { return s + kv.second; });
  for (const auto& [l, n] : sizes) {
    const double exact = 10000.0 * static_cast<double>(n) / total;
    EXPECT_LE(std::abs(static_cast<double>(counts[l]) - exact), 1.0);
  }
}

TEST(GeneratePopulation, DeterministicAndPrimaryPreserving) {
  ClassOriginals originals = {{ClassLabel::trojan, {chrom("A_ab", ClassLabel::trojan), chrom("B_cd_e", ClassLabel::trojan)}},
                              {ClassLabel::virus, {chrom("C_xy", ClassLabel::virus)}}};
  GAConfig cfg;
  cfg.population_size = 500;
  cfg.crossover_rate = 0.5;
  cfg.seed = 77;
  const auto a = generate_population(originals, cfg);
  EXPECT_EQ(a, generate_population(originals, cfg));
  std::map<std::string, std::string> primary_of;
  for (const auto& [l, list] : originals)
    for (const auto& c : list) primary_of[c.canonical()] = c.primary;
  for (const auto& m : a) EXPECT_EQ(m.primary, primary_of.at(m.origin_feature));
}

TEST(GeneratePopulation, TinyAlphabetFlagsDuplicates) {
  ClassOriginals originals = {{ClassLabel::worm, {chrom("A_a")}}};
  GAConfig cfg;
  cfg.population_size = 5;
  cfg.max_retries = 2;
  const auto pop = generate_population(originals, cfg);
  for (const auto& m : pop) EXPECT_TRUE(m.duplicate);
}

TEST(GeneratePopulation, EmptyClassIsConfigError) {
  ClassOriginals originals = {{ClassLabel::worm, {}}};
  EXPECT_THROW(generate_population(originals, GAConfig{}), ConfigError);
}

TEST(ScoreAndSelect, AscendingTopTwo) {
  // Scores 3, 1, 2 against their origins.
  std::vector<Chromosome> mutants = {chrom("A_xxx"), chrom("A_axx"), chrom("A_aax")};
  for (auto& m : mutants) m.origin_feature = "A_aaa";
  GAConfig cfg;
  cfg.top_k_per_class = 2;
  const auto sel = score_and_select(mutants, cfg);
  ASSERT_EQ(sel.at(ClassLabel::worm).size(), 2u);
  EXPECT_EQ(sel.at(ClassLabel::worm)[0].score, 1u);
  EXPECT_EQ(sel.at(ClassLabel::worm)[1].score, 2u);
  cfg.selection_order = SelectionOrder::descending;
  EXPECT_EQ(score_and_select(mutants, cfg).at(ClassLabel::worm)[0].score, 3u);
  cfg.top_k_per_class = 0;
  EXPECT_TRUE(score_and_select(mutants, cfg).at(ClassLabel::worm).empty());
}

TEST(ScoreAndSelect, FixedTargetOverridesOrigin) {
  GAConfig cfg;
  cfg.fixed_targets[ClassLabel::worm] = "A_zzz";
  const auto sel = score_and_select({chrom("A_zzy")}, cfg);
  EXPECT_EQ(sel.at(ClassLabel::worm)[0].target, "A_zzz");
  EXPECT_EQ(sel.at(ClassLabel::worm)[0].score, 1u);
}

TEST(ScoreAndSelect, MatchesSortOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<Chromosome> mutants;
    for (int i = 0; i < 1000; ++i) {
      auto c = chrom("P" + std::to_string(rng.below(3)) + "_" + random_string(rng, 3, "ab"), kAllClasses[rng.below(3)]);
      c.origin_feature = c.primary + "_" + random_string(rng, 1 + rng.below(4), "ab");
      mutants.push_back(c);
    }
    for (bool unique : {false, true}) {
      GAConfig cfg;
      cfg.top_k_per_class = 50;
      cfg.unique_selection = unique;
      const auto sel = score_and_select(mutants, cfg);
      for (ClassLabel l : {kAllClasses[0], kAllClasses[1], kAllClasses[2]}) {
        std::vector<std::tuple<std::size_t, std::string, std::size_t>> all;  // score, canonical, input index
        for (std::size_t i = 0; i < mutants.size(); ++i) {
          if (mutants[i].label != l) continue;
          all.emplace_back(oracle::padded_mismatches(mutants[i].canonical(), mutants[i].origin_feature),
                           mutants[i].canonical(), i);
        }
        std::sort(all.begin(), all.end());
        std::vector<std::string> expected;
        std::set<std::string> seen;
        for (const auto& [score, canon, idx] : all) {
          if (unique && !seen.insert(canon).second) continue;
          if (expected.size() == 50) break;
          expected.push_back(canon);
        }
        std::vector<std::string> got;
        for (const auto& r : sel.at(l)) got.push_back(r.chromosome.canonical());
        EXPECT_EQ(got, expected);
      }
    }
  }
}

TEST(Augment, EmptySelectionBumpsVersionOnly) {
  FeatureCorpus c;
  c.add("A_b");
  const auto r = augment_corpus(c, {});
  EXPECT_EQ(r.corpus.features(), c.features());
  EXPECT_EQ(r.corpus.version(), c.version() + 1);
  EXPECT_EQ(r.added, 0u);
  EXPECT_EQ(r.ratio(), 0.0);
}

TEST(Augment, SkipsDuplicatesAndKeepsPrefix) {
  FeatureCorpus c;
  c.add("A_b");
  c.add("A_b,C_d");
  Selection sel;
  sel[ClassLabel::worm] = {{chrom("A_b"), "A_b", 0}, {chrom("A_c"), "A_b", 1}};
  sel[ClassLabel::virus] = {{chrom("A_c", ClassLabel::virus), "A_b", 1}};
  const auto r = augment_corpus(c, sel);
  EXPECT_EQ(r.added, 1u);
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_EQ(r.corpus.features(), (std::vector<std::string>{"A_b", "A_b,C_d", "A_c"}));
  EXPECT_EQ(r.corpus.provenance(2), Provenance::mutant);
  EXPECT_DOUBLE_EQ(r.ratio(), 0.5);
}

TEST(Augment, PaperScaleRatio) {
  FeatureCorpus c;
  for (int i = 0; i < 1'000'000; ++i) c.add("F" + std::to_string(i) + "_na");
  Selection sel;
  for (std::size_t k = 0; k < kMalwareClasses.size(); ++k) {
    for (int i = 0; i < 1500; ++i) {
      sel[kMalwareClasses[k]].push_back({chrom("M" + std::to_string(k) + "x" + std::to_string(i) + "_na"), "", 1});
    }
  }
  const auto r = augment_corpus(c, sel);
  EXPECT_EQ(r.added, 10500u);
  EXPECT_NEAR(r.ratio(), 0.0105, 1e-12);
}

TEST(Reports, SelectionCsvAndConfigJson) {
  Selection sel;
  sel[ClassLabel::worm] = {{chrom("A_c"), "A_b", 1}};
  sel[ClassLabel::worm][0].chromosome.origin_feature = "A_b";
  EXPECT_EQ(format_selection_csv(sel), "label,canonical,origin_feature,fitness\nworm,A_c,A_b,1\n");
  GAConfig cfg;
  cfg.top_k_per_class = 7;
  cfg.fixed_targets[ClassLabel::virus] = "X_y";
  cfg.selection_order = SelectionOrder::descending;
  const auto back = ga_config_from_json(nlohmann::json::parse(ga_config_to_json(cfg).dump()));
  EXPECT_EQ(back.top_k_per_class, 7u);
  EXPECT_EQ(back.fixed_targets.at(ClassLabel::virus), "X_y");
  EXPECT_EQ(back.selection_order, SelectionOrder::descending);
  EXPECT_THROW(ga_config_from_json(nlohmann::json::parse(R"({"mutation_rate":2})")), ConfigError);
}
