// Command-line front end for the malware classification pipeline.
//
// Every subcommand reads one JSON experiment config and runs the pipeline up
// to its stage, persisting artifacts under the output directory. Exit codes:
// 0 success, 2 config error, 3 phase failure, 4 gate failure under --check.

#include <CLI11.hpp>

#include <iostream>

#include "malclass/pipeline.hpp"

using namespace malclass;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPhase = 3;
constexpr int kExitGate = 4;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool check = false;
  std::string input;
  std::string format = "markdown";
};

ExperimentConfig resolve(const Options& o) {
  auto cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out = o.out;
  if (!cfg.out) cfg.out = "out";
  return cfg;
}

void print_table(const ExperimentReport& r) { std::cout << format_report_markdown(r) << "\n"; }

class Gate {
 public:
  void expect(bool ok, const std::string& line) {
    std::cout << (ok ? "PASS " : "FAIL ") << line << "\n";
    failed_ = failed_ || !ok;
  }
  int exit_code() const { return failed_ ? kExitGate : kExitOk; }

 private:
  bool failed_ = false;
};

// Thresholds for models whose accuracy is gated; rnn is reported only.
bool gated(const std::string& arch) { return arch == "ann" || arch == "cnn"; }

void check_baseline(Gate& g, const ExperimentReport& base) {
  for (const auto& m : base.models) {
    if (!gated(m.architecture)) continue;
    const double v = m.final_metrics().val_accuracy;
    g.expect(v >= 0.95, "baseline " + m.architecture + " val_accuracy " + format_double(v) + " >= 0.95");
  }
}

void check_stale(Gate& g, const ExperimentReport& base, const ExperimentReport& stale) {
  for (const auto& m : stale.models) {
    if (!gated(m.architecture)) continue;
    const double drop = base.model(m.architecture)->final_metrics().val_accuracy - m.final_metrics().val_accuracy;
    g.expect(drop >= 0.05, "stale " + m.architecture + " val_accuracy drop " + format_double(drop) + " >= 0.05");
  }
}

void check_drift(Gate& g, const ExperimentReport& stale, const ExperimentReport& handled) {
  for (const auto& m : handled.models) {
    if (!gated(m.architecture)) continue;
    const double s = stale.model(m.architecture)->final_metrics().val_accuracy;
    const double a = m.final_metrics().val_accuracy;
    g.expect(a >= s, "augmented " + m.architecture + " val_accuracy " + format_double(a) + " >= stale " +
                         format_double(s));
  }
}

void write_all(const std::vector<const ExperimentReport*>& reports, const ExperimentConfig& cfg) {
  const auto dir = *cfg.out / "reports";
  for (const auto* r : reports) emit_report(*r, dir, {ReportFormat::json, ReportFormat::csv, ReportFormat::markdown});
  ArtifactStore(cfg.out).put_plain("reports", "config.json", config_to_json(cfg).dump(2) + "\n");
}

int cmd_synth(const Options& o) {
  const auto cfg = resolve(o);
  if (!cfg.synthetic) throw ConfigError("synth needs a synthetic corpus config");
  std::map<std::string, double> timings;
  const auto pair = run_phase("synth", timings, [&] { return load_corpora(cfg); });
  for (const auto& [name, traces] : {std::pair{"a", &pair.a}, std::pair{"b", &pair.b}}) {
    const auto dir = *cfg.out / "corpora" / (std::string("synthetic-") + name);
    write_corpus_directory(dir, *traces);
    std::cout << name << ": " << traces->size() << " reports in " << dir.string() << "\n";
  }
  return kExitOk;
}

int cmd_ingest(const Options& o) {
  const auto cfg = resolve(o);
  std::map<std::string, double> timings;
  const auto pair = run_phase("ingest", timings, [&] { return load_corpora(cfg); });
  ArtifactStore store(cfg.out);
  for (const auto& [name, traces] : {std::pair{"a", &pair.a}, std::pair{"b", &pair.b}}) {
    std::vector<ClassLabel> labels;
    nlohmann::ordered_json samples = nlohmann::ordered_json::array();
    for (const auto& t : *traces) {
      labels.push_back(*t.label);
      samples.push_back({{"sample_id", t.sample_id}, {"label", label_name(*t.label)}, {"tokens", t.tokens.size()}});
    }
    nlohmann::ordered_json j;
    j["manifest"] = manifest_to_json(label_histogram(labels));
    j["samples"] = samples;
    const auto path = store.put("corpora", std::string("ingest-") + name, "json", j.dump(2) + "\n");
    std::cout << name << ": " << traces->size() << " labeled traces -> " << path << "\n";
  }
  return kExitOk;
}

int cmd_features(const Options& o, bool select) {
  const auto cfg = resolve(o);
  ArtifactStore store(cfg.out);
  std::map<std::string, double> timings;
  const auto pair = run_phase("ingest", timings, [&] { return load_corpora(cfg); });
  if (!select) {
    const auto merged = run_phase("ngram", timings, [&] {
      auto unique = build_unique_corpora(pair.a, cfg.n_values);
      auto filtered = frequency_filter(unique, pair.a, cfg.min_doc_count);
      for (const auto& [label, c] : filtered) {
        store.put("corpora", std::string("class-") + std::string(label_name(label)), "json", corpus_to_json(c).dump() + "\n");
      }
      return merge_corpora(filtered);
    });
    const auto path = store.put("corpora", "merged", "json", corpus_to_json(merged).dump() + "\n");
    std::cout << "merged corpus: " << merged.size() << " features -> " << path << "\n";
    return kExitOk;
  }
  const auto f = build_features(cfg, pair.a, timings, store);
  std::cout << "merged " << f.merged.size() << " features, selected " << f.selected.corpus.size() << " ("
            << f.selected.prefiltered << " below frequency floor, " << f.selected.redundant << " redundant)\n";
  for (const auto& p : store.written()) std::cout << "  " << p << "\n";
  return kExitOk;
}

int cmd_train(const Options& o) {
  const auto cfg = resolve(o);
  ArtifactStore store(cfg.out);
  const auto base = run_baseline(cfg, store);
  write_all({&base.report}, cfg);
  print_table(base.report);
  if (!o.check) return kExitOk;
  Gate g;
  check_baseline(g, base.report);
  return g.exit_code();
}

int cmd_evaluate(const Options& o) {
  const auto cfg = resolve(o);
  ArtifactStore store(cfg.out);
  const auto base = run_baseline(cfg, store);
  const auto stale = run_stale(cfg, base, store);
  write_all({&base.report, &stale.report}, cfg);
  print_table(base.report);
  print_table(stale.report);
  if (!o.check) return kExitOk;
  Gate g;
  check_baseline(g, base.report);
  check_stale(g, base.report, stale.report);
  return g.exit_code();
}

int cmd_drift_run(const Options& o) {
  auto cfg = resolve(o);
  cfg.drift_handling = true;
  ArtifactStore store(cfg.out);
  const auto r = run_protocol(cfg, store);
  for (const auto* rep : r.reports()) print_table(*rep);
  std::cout << "augmentation ratio: " << format_double(r.drift->augmentation.ratio()) << " ("
            << r.drift->augmentation.added << " mutants over " << r.drift->augmentation.original_size
            << " features)\n";
  if (!o.check) return kExitOk;
  Gate g;
  check_baseline(g, r.baseline.report);
  check_stale(g, r.baseline.report, r.stale.report);
  check_drift(g, r.stale.report, r.drift->report);
  return g.exit_code();
}

int cmd_report(const Options& o) {
  if (o.input.empty()) throw ConfigError("report needs --input <report.json>");
  ExperimentReport r;
  try {
    r = report_from_json(nlohmann::json::parse(csv::read_file(o.input)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + o.input + ": " + e.what());
  }
  ReportFormat f;
  if (o.format == "json") f = ReportFormat::json;
  else if (o.format == "csv") f = ReportFormat::csv;
  else if (o.format == "markdown" || o.format == "md") f = ReportFormat::markdown;
  else throw ConfigError("unknown format '" + o.format + "'");
  if (o.out.empty()) {
    std::cout << render_report(r, f);
  } else {
    for (const auto& p : emit_report(r, o.out, {f})) std::cout << p.string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Malware family classification with n-gram features and GA-based drift handling"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override the global seed");
    sub->add_option("--out", o.out, "output directory (default: config value or ./out)");
    sub->add_flag("--check", o.check, "exit 4 unless the stage's acceptance thresholds hold");
  };

  std::function<int()> action;
  auto sub = [&](const char* name, const char* help, std::function<int()> fn) {
    auto* s = app.add_subcommand(name, help);
    add_common(s);
    s->callback([&action, fn] { action = fn; });
    return s;
  };
  sub("synth", "generate synthetic corpora A and B as report directories", [&] { return cmd_synth(o); });
  sub("ingest", "ingest corpora and write per-sample manifests", [&] { return cmd_ingest(o); });
  sub("corpus", "build per-class n-gram corpora and the merged corpus", [&] { return cmd_features(o, false); });
  sub("select", "score and select features, vectorize corpus A", [&] { return cmd_features(o, true); });
  sub("train", "baseline: train every configured architecture on corpus A", [&] { return cmd_train(o); });
  sub("evaluate", "baseline plus stale evaluation on corpus B", [&] { return cmd_evaluate(o); });
  sub("drift-run", "full protocol: baseline, stale, GA-augmented retrain", [&] { return cmd_drift_run(o); });
  auto* report = sub("report", "render a saved report JSON", [&] { return cmd_report(o); });
  report->add_option("--input", o.input, "report JSON file")->check(CLI::ExistingFile);
  report->add_option("--format", o.format, "json, csv or markdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  try {
    return action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kExitPhase;
  } catch (const std::exception& e) {
    std::cerr << "unexpected failure: " << e.what() << "\n";
    return kExitPhase;
  }
}
