// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Thresholds are fixed here, not taken from the command line.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>

#include "malclass/pipeline.hpp"
#include "support/oracles.hpp"

using namespace malclass;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string random_string(Rng& rng, std::size_t len, std::string_view alphabet) {
  std::string s(len, ' ');
  for (char& c : s) c = alphabet[rng.below(alphabet.size())];
  return s;
}

// ---------------------------------------------------------------------------
// Shared experiment runs

ExperimentConfig desk_config() {
  ExperimentConfig cfg;
  cfg.seed = 2024;
  cfg.synthetic->samples = 2000;
  cfg.synthetic->drift = {DriftMode::sudden, 0.5, 1, 0.1, 1, NoveltyStyle::mutated};
  cfg.architectures = {nn::ArchKind::ann, nn::ArchKind::cnn, nn::ArchKind::rnn};
  cfg.train.epochs = 20;
  cfg.selection.top_k = 128;
  cfg.ga.population_size = 30'000;
  cfg.ga.top_k_per_class = 120;
  return cfg;
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.seed = 77;
  cfg.synthetic->samples = 400;
  cfg.architectures = {nn::ArchKind::ann, nn::ArchKind::cnn, nn::ArchKind::rnn};
  cfg.train.epochs = 3;
  cfg.selection.top_k = 48;
  cfg.ga.population_size = 4000;
  cfg.ga.top_k_per_class = 40;
  return cfg;
}

struct DeskRun {
  ProtocolResult result;
  double seconds = 0.0;
};

DeskRun& desk_run() {
  static DeskRun run = [] {
    DeskRun r;
    const auto t = Clock::now();
    r.result = run_protocol(desk_config());
    r.seconds = seconds_since(t);
    return r;
  }();
  return run;
}

double val_acc(const ExperimentReport& r, std::string_view arch) {
  return r.model(arch)->final_metrics().val_accuracy;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "timings.json") continue;
    out[fs::relative(e.path(), root).string()] = csv::read_file(e.path().string());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome fitness_oracle() {
  Rng rng(1);
  const auto t = Clock::now();
  std::size_t mismatches = 0;
  for (int i = 0; i < 10'000; ++i) {
    const std::size_t len = 1 + rng.below(40);
    const auto a = random_string(rng, len, "abcdefgh_.");
    const auto b = random_string(rng, len, "abcdefgh_.");
    mismatches += fitness(a, b) != static_cast<std::size_t>(oracle::hamming(a, b));
  }
  const double s = seconds_since(t);
  return {mismatches == 0 && s < 1.0,
          "10000 equal-length pairs, " + std::to_string(mismatches) + " mismatches, " + fmt(s, 3) + " s (< 1 s)"};
}

Outcome primary_preservation() {
  const auto t = Clock::now();
  ClassOriginals originals;
  for (const auto& p : default_profiles()) {
    if (!is_malware(p.label)) continue;
    for (const auto& tok : p.token_pool) {
      if (tok.weight == 1.0) originals[p.label].push_back(chromosome_from(tok.canonical, p.label));
    }
  }
  GAConfig cfg;
  cfg.population_size = 100'000;
  cfg.crossover_rate = 0.5;
  cfg.seed = 9;
  const auto population = generate_population(originals, cfg);
  std::size_t altered = 0;
  for (const auto& m : population) altered += m.primary != chromosome_from(m.origin_feature, m.label).primary;

  Rng rng(3);
  std::size_t crossover_altered = 0;
  for (int i = 0; i < 10'000; ++i) {
    const auto& list = originals.at(kMalwareClasses[rng.below(kMalwareClasses.size())]);
    const auto& a = list[rng.below(list.size())];
    const auto& b = list[rng.below(list.size())];
    const auto [c1, c2] = crossover(a, b);
    crossover_altered += (c1.primary != a.primary) + (c2.primary != b.primary);
  }
  const double s = seconds_since(t);
  return {population.size() == 100'000 && altered == 0 && crossover_altered == 0 && s < 10.0,
          std::to_string(population.size()) + " mutants, " + std::to_string(altered) + " altered primaries, " +
              std::to_string(crossover_altered) + " altered crossover primaries, " + fmt(s, 3) + " s (< 10 s)"};
}

Outcome selection_oracle() {
  std::size_t disagreements = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<Chromosome> mutants;
    for (int i = 0; i < 1000; ++i) {
      const ClassLabel label = kMalwareClasses[rng.below(3)];
      const std::string origin = "Api" + std::to_string(rng.below(4)) + "_" + random_string(rng, 3 + rng.below(3), "abc");
      auto m = chromosome_from(origin, label);
      m.secondary = random_string(rng, 1 + rng.below(6), "abc");
      mutants.push_back(m);
    }
    GAConfig cfg;
    cfg.top_k_per_class = 1 + rng.below(400);
    cfg.selection_order = seed % 2 ? SelectionOrder::descending : SelectionOrder::ascending;
    cfg.unique_selection = seed % 4 < 2;
    const auto selected = score_and_select(mutants, cfg);

    std::map<ClassLabel, std::vector<std::pair<long, std::string>>> expected;
    for (const auto& m : mutants) {
      const long d = static_cast<long>(oracle::padded_mismatches(m.canonical(), m.origin_feature));
      expected[m.label].push_back({cfg.selection_order == SelectionOrder::ascending ? d : -d, m.canonical()});
    }
    for (auto& [label, rows] : expected) {
      std::sort(rows.begin(), rows.end());
      if (cfg.unique_selection) {
        // First occurrence wins; a canonical reached from several origins can carry several scores.
        std::set<std::string> seen;
        std::erase_if(rows, [&](const auto& row) { return !seen.insert(row.second).second; });
      }
      if (rows.size() > cfg.top_k_per_class) rows.resize(cfg.top_k_per_class);
      const auto& got = selected.at(label);
      if (got.size() != rows.size()) {
        ++disagreements;
        continue;
      }
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const long score = static_cast<long>(got[i].score);
        const long keyed = cfg.selection_order == SelectionOrder::ascending ? score : -score;
        disagreements += keyed != rows[i].first || got[i].chromosome.canonical() != rows[i].second;
      }
    }
  }
  return {disagreements == 0, "1000 mutants x 20 seeds, " + std::to_string(disagreements) + " disagreements"};
}

Outcome ngram_oracle() {
  Rng rng(4);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> trace(rng.below(80));
    for (auto& t : trace) t = "C" + std::to_string(rng.below(12)) + "_na";
    for (int n = 1; n <= 3; ++n) {
      const auto got = build_ngrams(trace, n);
      const auto want = oracle::ngrams(trace, n);
      if (got.size() != want.size()) {
        ++mismatches;
        continue;
      }
      for (std::size_t i = 0; i < got.size(); ++i) mismatches += got[i].canonical() != want[i];
    }
  }
  return {mismatches == 0, "1000 traces x n in {1,2,3}, " + std::to_string(mismatches) + " mismatches"};
}

Outcome tf_normalization() {
  std::vector<std::pair<std::string, const Dataset*>> datasets;
  const auto& r = desk_run().result;
  datasets.push_back({"a", &r.baseline.features.dataset});
  datasets.push_back({"b-on-a-axis", &r.stale.dataset});
  if (r.drift) datasets.push_back({"b-augmented", &r.drift->dataset});
  const auto small = run_protocol(small_config());
  datasets.push_back({"small-a", &small.baseline.features.dataset});
  datasets.push_back({"small-b-on-a-axis", &small.stale.dataset});
  datasets.push_back({"small-b-augmented", &small.drift->dataset});

  double worst = 0.0;
  std::size_t rows = 0, nonzero = 0;
  for (const auto& [name, d] : datasets) {
    for (std::size_t i = 0; i < d->rows; ++i) {
      const double s = std::accumulate(d->row(i), d->row(i) + d->cols, 0.0);
      ++rows;
      if (s == 0.0) continue;
      ++nonzero;
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  return {worst <= 1e-12, std::to_string(datasets.size()) + " datasets, " + std::to_string(nonzero) + "/" +
                              std::to_string(rows) + " non-zero rows, max |sum - 1| = " + fmt(worst, 3) +
                              " (<= 1e-12)"};
}

Outcome mi_pearson_oracles() {
  Rng rng(6);
  double worst_mi = 0.0, worst_r = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(200), codes(200);
    std::vector<int> y(200);
    for (int i = 0; i < 200; ++i) {
      y[i] = static_cast<int>(rng.below(8));
      codes[i] = y[i];
      x[i] = rng.bernoulli(0.3) ? 0.0 : rng.uniform() + 0.1 * y[i];
    }
    worst_mi = std::max(worst_mi, std::abs(mutual_information(x, y, 4) - oracle::mutual_information(x, y, 4)));
    worst_r = std::max(worst_r, std::abs(pearson_correlation(x, codes) - oracle::pearson(x, codes)));
  }
  return {worst_mi <= 1e-9 && worst_r <= 1e-12, "200 trials of 200 samples, max MI error " + fmt(worst_mi, 3) +
                                                    " (<= 1e-9), max r error " + fmt(worst_r, 3) + " (<= 1e-12)"};
}

Outcome gradient_checks() {
  using namespace malclass::nn;
  const auto t = Clock::now();
  auto matrix = [](std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix m(r, c);
    Rng rng(seed);
    for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
  };
  std::vector<ClassLabel> labels;
  for (std::size_t i = 0; i < 4; ++i) labels.push_back(kAllClasses[(i * 3) % kNumClasses]);
  const auto y = one_hot(labels);
  const auto x = matrix(4, 12, 12);

  struct Case {
    std::string name;
    ArchitectureSpec arch;
    bool training;
  };
  const std::vector<Case> cases = {
      {"dense", {ArchKind::ann, {dense(5, Activation::tanh), softmax_output(8)}}, false},
      {"conv1d", {ArchKind::cnn, {conv1d(3, 3, Activation::relu), flatten(), softmax_output(8)}}, false},
      {"maxpool1d", {ArchKind::cnn, {conv1d(3, 3, Activation::tanh), maxpool1d(2), flatten(), softmax_output(8)}}, false},
      {"simple_rnn", {ArchKind::rnn, {simple_rnn(6, Activation::relu, 4), softmax_output(8)}}, false},
      {"dropout(eval)", {ArchKind::ann, {dense(5, Activation::tanh), dropout(0.5), softmax_output(8)}}, false},
      {"softmax+ce", {ArchKind::ann, {softmax_output(8)}}, false},
      {"ann", build_architecture(ArchKind::ann, 12), false},
      {"ann(train)", build_architecture(ArchKind::ann, 12), true},
      {"cnn", build_architecture(ArchKind::cnn, 12), false},
      {"cnn(train)", build_architecture(ArchKind::cnn, 12), true},
      {"rnn", build_architecture(ArchKind::rnn, 12), false},
      {"rnn(train)", build_architecture(ArchKind::rnn, 12), true},
  };
  double worst = 0.0;
  std::string worst_where;
  std::size_t checked = 0;
  for (const auto& c : cases) {
    auto p = init_params(c.arch, 12, 11);
    Rng rng(5);
    for (auto& tensor : p.tensors)
      if (tensor.shape.size() == 1)
        for (double& v : tensor.data) v = rng.uniform(-0.1, 0.1);
    const auto r = oracle::check_gradients(p, x, y, c.training, 99, 64, 1e-5);
    checked += r.checked;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_where = c.name + " " + r.worst;
    }
  }
  const double s = seconds_since(t);
  return {worst < 1e-4 && s < 60.0, std::to_string(cases.size()) + " cases, " + std::to_string(checked) +
                                        " entries, max relative error " + fmt(worst, 3) + " at " + worst_where +
                                        " (< 1e-4), " + fmt(s, 3) + " s (< 60 s)"};
}

Outcome architecture_fidelity() {
  using namespace malclass::nn;
  struct Row {
    std::string kind;
    std::size_t size;
    std::size_t kernel;
    std::string activation;
    double rate;
  };
  // Layer / details rows of the three architecture tables.
  const std::map<ArchKind, std::vector<Row>> tables = {
      {ArchKind::cnn,
       {{"conv1d", 64, 3, "relu", 0.0},
        {"maxpool1d", 2, 0, "linear", 0.0},
        {"conv1d", 32, 3, "relu", 0.0},
        {"maxpool1d", 2, 0, "linear", 0.0},
        {"flatten", 0, 0, "linear", 0.0},
        {"dense", 128, 0, "relu", 0.0},
        {"dropout", 0, 0, "linear", 0.3},
        {"dense", 64, 0, "relu", 0.0},
        {"dropout", 0, 0, "linear", 0.3},
        {"softmax_output", 8, 0, "linear", 0.0}}},
      {ArchKind::rnn,
       {{"simple_rnn", 128, 0, "relu", 0.0},
        {"dropout", 0, 0, "linear", 0.5},
        {"dense", 64, 0, "relu", 0.0},
        {"dropout", 0, 0, "linear", 0.5},
        {"softmax_output", 8, 0, "linear", 0.0}}},
      {ArchKind::ann,
       {{"dense", 512, 0, "tanh", 0.0},
        {"dropout", 0, 0, "linear", 0.4},
        {"dense", 256, 0, "tanh", 0.0},
        {"dropout", 0, 0, "linear", 0.4},
        {"dense", 128, 0, "tanh", 0.0},
        {"dropout", 0, 0, "linear", 0.4},
        {"dense", 64, 0, "tanh", 0.0},
        {"dropout", 0, 0, "linear", 0.4},
        {"softmax_output", 8, 0, "linear", 0.0}}},
  };
  std::size_t rows = 0, bad = 0;
  for (const auto& [kind, expected] : tables) {
    const auto a = build_architecture(kind, 88972);
    if (a.layers.size() != expected.size()) {
      bad += 1;
      continue;
    }
    for (std::size_t i = 0; i < expected.size(); ++i, ++rows) {
      const auto& l = a.layers[i];
      const auto& e = expected[i];
      bad += layer_kind_name(l.kind) != e.kind || l.size != e.size || l.kernel != e.kernel ||
             activation_name(l.activation) != e.activation || l.rate != e.rate;
    }
  }
  return {bad == 0 && rows == 24, std::to_string(rows) + " table rows compared, " + std::to_string(bad) + " mismatches"};
}

Outcome baseline_experiment() {
  const auto& run = desk_run();
  const auto& base = run.result.baseline.report;
  const double ann = val_acc(base, "ann");
  const double cnn = val_acc(base, "cnn");
  const double rnn = val_acc(base, "rnn");
  const auto& d = base.datasets.front();
  return {ann >= 0.95 && cnn >= 0.95 && run.seconds < 600.0,
          std::to_string(d.rows) + " samples, " + std::to_string(desk_config().train.epochs) +
              " epochs: ann " + fmt(ann) + ", cnn " + fmt(cnn) + " (>= 0.95); rnn " + fmt(rnn) +
              " (reported); full protocol " + fmt(run.seconds, 3) + " s (< 600 s)"};
}

Outcome drift_degradation() {
  const auto& r = desk_run().result;
  const double ann = val_acc(r.baseline.report, "ann") - val_acc(r.stale.report, "ann");
  const double cnn = val_acc(r.baseline.report, "cnn") - val_acc(r.stale.report, "cnn");
  return {ann >= 0.05 && cnn >= 0.05, "sudden drift 0.5: ann drop " + fmt(ann) + ", cnn drop " + fmt(cnn) +
                                          " (>= 0.05); rnn stale " + fmt(val_acc(r.stale.report, "rnn"))};
}

Outcome drift_handling() {
  const auto& r = desk_run().result;
  std::string detail;
  bool pass = true;
  for (const char* arch : {"ann", "cnn"}) {
    const double stale = val_acc(r.stale.report, arch);
    const double aug = val_acc(r.drift->report, arch);
    pass = pass && aug >= stale;
    detail += std::string(arch) + " augmented " + fmt(aug) + " vs stale " + fmt(stale) + "; ";
  }
  detail += "rnn augmented " + fmt(val_acc(r.drift->report, "rnn")) + "; ";

  auto cfg = small_config();
  cfg.ga.top_k_per_class = 0;
  const auto control = run_protocol(cfg);
  bool equal = control.drift->augmentation.added == 0;
  for (std::size_t i = 0; i < control.drift->report.models.size(); ++i) {
    equal = equal && control.drift->report.models[i].epochs == control.drift->control.models[i].epochs;
  }
  detail += std::string("top_k=0 control ") + (equal ? "identical" : "differs") + " to no-augmentation retrain";
  return {pass && equal, detail};
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "malclass_acceptance_determinism";
  fs::remove_all(root);
  std::size_t files = 0;
  bool same = true;
  std::vector<std::string> differing;
  std::array<std::map<std::string, std::string>, 2> trees;
  for (int i = 0; i < 2; ++i) {
    auto cfg = small_config();
    cfg.out = root / std::to_string(i);
    run_protocol(cfg);
    write_corpus_directory(*cfg.out / "synthetic-a", load_corpora(cfg).a);
    trees[i] = tree_contents(*cfg.out);
  }
  files = trees[0].size();
  for (const auto& [path, bytes] : trees[0]) {
    auto it = trees[1].find(path);
    if (it == trees[1].end() || it->second != bytes) differing.push_back(path);
  }
  same = differing.empty() && trees[0].size() == trees[1].size();
  std::set<std::string> stages;
  for (const auto& [path, bytes] : trees[0]) stages.insert(path.substr(0, path.find('/')));
  fs::remove_all(root);
  std::string stage_list;
  for (const auto& s : stages) stage_list += (stage_list.empty() ? "" : ",") + s;
  return {same && files > 0, std::to_string(files) + " files across {" + stage_list + "}, " +
                                 std::to_string(differing.size()) + " differ between two runs"};
}

Outcome augmentation_ratio() {
  FeatureCorpus corpus;
  for (std::size_t i = 0; i < 100'000; ++i) corpus.add("Feature" + std::to_string(i) + "_na");
  Selection sel;
  for (std::size_t i = 0; i < 1050; ++i) {
    const ClassLabel label = kMalwareClasses[i % kMalwareClasses.size()];
    auto c = chromosome_from("Mutant" + std::to_string(i) + "_abc", label);
    sel[label].push_back({c, c.origin_feature, 0});
  }
  const auto aug = augment_corpus(corpus, sel);
  const double pct = aug.ratio() * 100.0;
  return {aug.added == 1050 && std::abs(pct - 1.05) <= 0.005,
          std::to_string(aug.added) + " mutants over " + std::to_string(aug.original_size) + " features: ratio " +
              fmt(pct, 6) + "% (1.05% +- 0.005)"};
}

}  // namespace

// With arguments, runs only the listed criterion numbers.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"fitness equals positionwise mismatch oracle", fitness_oracle},
      {"mutation and crossover preserve primaries", primary_preservation},
      {"selection equals sort-then-truncate oracle", selection_oracle},
      {"n-grams equal sliding-window oracle", ngram_oracle},
      {"TF rows sum to one", tf_normalization},
      {"MI and correlation oracles", mi_pearson_oracles},
      {"gradient checks", gradient_checks},
      {"architecture tables", architecture_fidelity},
      {"baseline synthetic experiment", baseline_experiment},
      {"drift degrades stale models", drift_degradation},
      {"GA augmentation recovers accuracy", drift_handling},
      {"determinism", determinism},
      {"augmentation ratio", augmentation_ratio},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, fn] : criteria) {
    ++index;
    if (!only.empty() && !only.count(index)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << index << "] " << name << ": " << o.detail << std::endl;
  }
  const std::size_t ran = only.empty() ? criteria.size() : only.size();
  std::cout << (failed ? std::to_string(failed) + " of " : "all ") << ran
            << (failed ? " criteria failed" : " criteria passed") << std::endl;
  return failed ? 1 : 0;
}
