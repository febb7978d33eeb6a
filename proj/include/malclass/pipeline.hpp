#pragma once

// End-to-end orchestration: corpora A and B, the baseline / stale / drift
// handled protocol, artifact persistence and report emission.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "malclass/common.hpp"
#include "malclass/csv.hpp"
#include "malclass/drift_ga.hpp"
#include "malclass/feature_select.hpp"
#include "malclass/ngram.hpp"
#include "malclass/nn/architecture.hpp"
#include "malclass/nn/serialize.hpp"
#include "malclass/nn/train.hpp"
#include "malclass/report_ingest.hpp"
#include "malclass/synth_corpus.hpp"

namespace malclass {

class PhaseError : public Error {
 public:
  PhaseError(std::string phase, const std::string& msg)
      : Error("phase " + phase + " failed: " + msg), phase_(std::move(phase)) {}
  const std::string& phase() const { return phase_; }

 private:
  std::string phase_;
};

// ---------------------------------------------------------------------------
// Configuration

enum class Direction { paper, reversed };

struct DirectorySource {
  std::filesystem::path reports;
  std::filesystem::path labels;
};

struct SyntheticSource {
  std::size_t samples = 2000;
  std::vector<ClassProfile> profiles = default_profiles();
  DriftScenario drift{DriftMode::sudden, 0.5, 1, 0.1, 1, NoveltyStyle::mutated};
  std::size_t time_step = 1;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::optional<SyntheticSource> synthetic = SyntheticSource{};
  std::optional<DirectorySource> dir_a;
  std::optional<DirectorySource> dir_b;
  Direction direction = Direction::paper;
  NValues n_values = {1, 2, 3};
  std::size_t min_doc_count = 2;
  HybridConfig selection{2, 128, 0.95, 4};
  std::vector<nn::ArchKind> architectures = {nn::ArchKind::ann, nn::ArchKind::cnn, nn::ArchKind::rnn};
  std::size_t rnn_timesteps = nn::kDefaultRnnTimesteps;
  nn::TrainConfig train{};
  GAConfig ga{30'000, 0.34, 0.1, 150, 0, SelectionOrder::ascending, 16, true, {}};
  bool drift_handling = true;
  std::optional<std::filesystem::path> out;

  void validate() const {
    if (!synthetic && !(dir_a && dir_b)) throw ConfigError("config needs a synthetic corpus or both directories");
    for (const auto* d : {&dir_a, &dir_b}) {
      if (!*d) continue;
      if (!std::filesystem::is_directory((*d)->reports)) {
        throw ConfigError("report directory does not exist: " + (*d)->reports.string());
      }
      if (!std::filesystem::is_regular_file((*d)->labels)) {
        throw ConfigError("label file does not exist: " + (*d)->labels.string());
      }
    }
    if (n_values.empty()) throw ConfigError("n_values is empty");
    for (int n : n_values)
      if (n < 1 || n > 3) throw ConfigError("n_values entries must lie in 1..3");
    if (min_doc_count < 1) throw ConfigError("min_doc_count must be at least 1");
    if (architectures.empty()) throw ConfigError("no architectures requested");
    if (rnn_timesteps < 1) throw ConfigError("rnn_timesteps must be at least 1");
    if (synthetic) {
      if (synthetic->samples < 2 * kNumClasses) throw ConfigError("synthetic corpus needs at least 16 samples");
      for (const auto& p : synthetic->profiles) malclass::validate(p);
      malclass::validate(synthetic->drift);
    }
    train.validate();
    ga.validate();
  }
};

inline std::string_view direction_name(Direction d) { return d == Direction::paper ? "paper" : "reversed"; }

inline ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  try {
    ExperimentConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base.empty() ? path : base / path;
    };
    if (j.contains("corpus")) {
      const auto& c = j.at("corpus");
      const std::string kind = c.value("kind", std::string("synthetic"));
      if (kind == "synthetic") {
        SyntheticSource s;
        s.samples = c.value("samples", s.samples);
        if (c.contains("profiles")) {
          s.profiles.clear();
          for (const auto& p : c.at("profiles")) s.profiles.push_back(profile_from_json(p));
        }
        if (c.contains("drift")) s.drift = scenario_from_json(c.at("drift"));
        s.time_step = c.value("time_step", s.time_step);
        cfg.synthetic = s;
      } else if (kind == "directory") {
        cfg.synthetic.reset();
        auto dir = [&](const char* key) {
          const auto& d = c.at(key);
          return DirectorySource{resolve(d.at("reports").get<std::string>()),
                                 resolve(d.at("labels").get<std::string>())};
        };
        cfg.dir_a = dir("a");
        cfg.dir_b = dir("b");
      } else {
        throw ConfigError("unknown corpus kind '" + kind + "'");
      }
    }
    const std::string direction = j.value("direction", std::string("paper"));
    if (direction == "paper") cfg.direction = Direction::paper;
    else if (direction == "reversed") cfg.direction = Direction::reversed;
    else throw ConfigError("unknown direction '" + direction + "'");
    if (j.contains("n_values")) cfg.n_values = j.at("n_values").get<NValues>();
    cfg.min_doc_count = j.value("min_doc_count", cfg.min_doc_count);
    if (j.contains("selection")) {
      const auto& s = j.at("selection");
      cfg.selection.min_doc_frequency = s.value("min_doc_frequency", cfg.selection.min_doc_frequency);
      cfg.selection.top_k = s.value("top_k", cfg.selection.top_k);
      cfg.selection.redundancy_threshold = s.value("redundancy_threshold", cfg.selection.redundancy_threshold);
      cfg.selection.bins = s.value("bins", cfg.selection.bins);
    }
    if (j.contains("architectures")) {
      cfg.architectures.clear();
      for (const auto& a : j.at("architectures")) cfg.architectures.push_back(nn::parse_arch_kind(a.get<std::string>()));
    }
    cfg.rnn_timesteps = j.value("rnn_timesteps", cfg.rnn_timesteps);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.adam.learning_rate = t.value("learning_rate", cfg.train.adam.learning_rate);
      cfg.train.validation_fraction = t.value("validation_fraction", cfg.train.validation_fraction);
      cfg.train.shuffle = t.value("shuffle", cfg.train.shuffle);
    }
    if (j.contains("ga")) {
      nlohmann::json g = ga_config_to_json(cfg.ga);
      g.update(j.at("ga"));
      cfg.ga = ga_config_from_json(g);
    }
    cfg.drift_handling = j.value("drift_handling", cfg.drift_handling);
    if (j.contains("out")) cfg.out = resolve(j.at("out").get<std::string>());
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j, path.parent_path());
}

// Everything that determines results; the output directory is excluded.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  nlohmann::ordered_json c;
  if (cfg.synthetic) {
    c["kind"] = "synthetic";
    c["samples"] = cfg.synthetic->samples;
    c["profiles"] = nlohmann::ordered_json::array();
    for (const auto& p : cfg.synthetic->profiles) c["profiles"].push_back(nlohmann::ordered_json::parse(profile_to_json(p).dump()));
    const auto& d = cfg.synthetic->drift;
    c["drift"] = {{"mode", drift_mode_name(d.mode)},
                  {"magnitude", d.magnitude},
                  {"switch_point", d.switch_point},
                  {"delta", d.delta},
                  {"period", d.period},
                  {"novelty", d.novelty == NoveltyStyle::mutated ? "mutated" : "renamed"}};
    c["time_step"] = cfg.synthetic->time_step;
  } else {
    c["kind"] = "directory";
    c["a"] = {{"reports", cfg.dir_a->reports.string()}, {"labels", cfg.dir_a->labels.string()}};
    c["b"] = {{"reports", cfg.dir_b->reports.string()}, {"labels", cfg.dir_b->labels.string()}};
  }
  j["corpus"] = c;
  j["direction"] = direction_name(cfg.direction);
  j["n_values"] = cfg.n_values;
  j["min_doc_count"] = cfg.min_doc_count;
  j["selection"] = {{"min_doc_frequency", cfg.selection.min_doc_frequency},
                    {"top_k", cfg.selection.top_k},
                    {"redundancy_threshold", cfg.selection.redundancy_threshold},
                    {"bins", cfg.selection.bins}};
  j["architectures"] = nlohmann::ordered_json::array();
  for (auto a : cfg.architectures) j["architectures"].push_back(nn::arch_kind_name(a));
  j["rnn_timesteps"] = cfg.rnn_timesteps;
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.adam.learning_rate},
                {"validation_fraction", cfg.train.validation_fraction},
                {"shuffle", cfg.train.shuffle}};
  j["ga"] = ga_config_to_json(cfg.ga);
  j["drift_handling"] = cfg.drift_handling;
  return j;
}

// ---------------------------------------------------------------------------
// Artifacts

// Writes under `<root>/<kind>/<stem>-<hash16>.<ext>`; a no-op without a root.
class ArtifactStore {
 public:
  ArtifactStore() = default;
  explicit ArtifactStore(std::optional<std::filesystem::path> root) : root_(std::move(root)) {}

  bool enabled() const { return root_.has_value(); }
  const std::optional<std::filesystem::path>& root() const { return root_; }

  // Returns the path relative to the root, or "" when disabled.
  std::string put(std::string_view kind, std::string_view stem, std::string_view ext, std::string_view content) {
    if (!root_) return {};
    const std::string name = std::string(stem) + "-" + hex64(fnv1a64(content)) + "." + std::string(ext);
    const auto dir = *root_ / kind;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    csv::write_file((dir / name).string(), content);
    const std::string rel = std::string(kind) + "/" + name;
    written_.push_back(rel);
    return rel;
  }

  // Fixed-name file, used for outputs that must be found without a hash.
  void put_plain(std::string_view kind, std::string_view name, std::string_view content) {
    if (!root_) return;
    const auto dir = *root_ / kind;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    csv::write_file((dir / name).string(), content);
  }

  const std::vector<std::string>& written() const { return written_; }

 private:
  std::optional<std::filesystem::path> root_;
  std::vector<std::string> written_;
};

// Runs `fn`, rethrowing library errors tagged with the phase name.
template <typename F>
auto run_phase(std::string_view phase, std::map<std::string, double>& timings, F&& fn) {
  const auto start = std::chrono::steady_clock::now();
  auto record = [&] {
    timings[std::string(phase)] +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record();
    } else {
      auto r = fn();
      record();
      return r;
    }
  } catch (const PhaseError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw PhaseError(std::string(phase), e.what());
  } catch (const nlohmann::json::exception& e) {
    throw PhaseError(std::string(phase), e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

struct ModelReport {
  std::string architecture;
  std::uint64_t corpus_version = 0;
  std::vector<nn::EpochMetrics> epochs;  // final metrics are epochs.back()

  const nn::EpochMetrics& final_metrics() const { return epochs.back(); }
  bool operator==(const ModelReport&) const = default;
};

struct DatasetReport {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t corpus_version = 0;
  std::array<std::size_t, kNumClasses> manifest{};

  bool operator==(const DatasetReport&) const = default;
};

struct ExperimentReport {
  std::string experiment;
  std::vector<DatasetReport> datasets;
  std::vector<ModelReport> models;
  nlohmann::ordered_json details = nlohmann::ordered_json::object();
  std::map<std::string, double> timings;  // seconds, kept out of the canonical JSON

  const ModelReport* model(std::string_view arch) const {
    for (const auto& m : models)
      if (m.architecture == arch) return &m;
    return nullptr;
  }
};

inline DatasetReport dataset_report(std::string name, const Dataset& d) {
  return {std::move(name), d.rows, d.cols, d.corpus_version, d.manifest};
}

inline nlohmann::ordered_json metrics_to_json(const nn::EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["val_loss"] = m.val_loss;
  j["accuracy"] = m.accuracy;
  j["val_accuracy"] = m.val_accuracy;
  return j;
}

inline nn::EpochMetrics metrics_from_json(const nlohmann::json& j) {
  return {j.at("epoch").get<std::size_t>(), j.at("loss").get<double>(), j.at("val_loss").get<double>(),
          j.at("accuracy").get<double>(), j.at("val_accuracy").get<double>()};
}

inline nlohmann::ordered_json report_to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["experiment"] = r.experiment;
  j["datasets"] = nlohmann::ordered_json::array();
  for (const auto& d : r.datasets) {
    j["datasets"].push_back({{"name", d.name},
                             {"rows", d.rows},
                             {"cols", d.cols},
                             {"corpus_version", d.corpus_version},
                             {"manifest", manifest_to_json(d.manifest)}});
  }
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& m : r.models) {
    nlohmann::ordered_json e;
    e["architecture"] = m.architecture;
    e["corpus_version"] = m.corpus_version;
    e["final"] = m.epochs.empty() ? nlohmann::ordered_json() : metrics_to_json(m.final_metrics());
    e["epochs"] = nlohmann::ordered_json::array();
    for (const auto& em : m.epochs) e["epochs"].push_back(metrics_to_json(em));
    j["models"].push_back(e);
  }
  j["details"] = r.details;
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  try {
    ExperimentReport r;
    r.experiment = j.at("experiment").get<std::string>();
    for (const auto& d : j.at("datasets")) {
      DatasetReport dr{d.at("name").get<std::string>(), d.at("rows").get<std::size_t>(),
                       d.at("cols").get<std::size_t>(), d.at("corpus_version").get<std::uint64_t>(), {}};
      for (ClassLabel c : kAllClasses) dr.manifest[class_index(c)] = d.at("manifest").value(std::string(label_name(c)), std::size_t{0});
      r.datasets.push_back(dr);
    }
    for (const auto& m : j.at("models")) {
      ModelReport mr;
      mr.architecture = m.at("architecture").get<std::string>();
      mr.corpus_version = m.at("corpus_version").get<std::uint64_t>();
      for (const auto& e : m.at("epochs")) mr.epochs.push_back(metrics_from_json(e));
      if (mr.epochs.empty()) throw ParseError("model " + mr.architecture + " has no metrics", 0);
      r.models.push_back(std::move(mr));
    }
    if (j.contains("details")) r.details = j.at("details");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad report: ") + e.what(), 0);
  }
}

// One row per model per epoch.
inline std::string format_report_csv(const ExperimentReport& r) {
  std::string out = "experiment,architecture,corpus_version,epoch,loss,val_loss,accuracy,val_accuracy\n";
  for (const auto& m : r.models) {
    for (const auto& e : m.epochs) {
      out += csv::join_row({r.experiment, m.architecture, std::to_string(m.corpus_version), std::to_string(e.epoch),
                            format_double17(e.loss), format_double17(e.val_loss), format_double17(e.accuracy),
                            format_double17(e.val_accuracy)}) +
             "\n";
    }
  }
  return out;
}

inline std::string format_report_markdown(const ExperimentReport& r) {
  auto fixed4 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  std::string out = "### " + r.experiment + "\n\n";
  out += "| DL Tech. | Epoch | Loss | Val Loss | Accuracy | Validation Accuracy |\n";
  out += "|---|---:|---:|---:|---:|---:|\n";
  for (const auto& m : r.models) {
    std::string name = m.architecture;
    for (char& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    const auto& f = m.final_metrics();
    out += "| " + name + " | " + std::to_string(f.epoch) + " | " + fixed4(f.loss) + " | " + fixed4(f.val_loss) +
           " | " + fixed4(f.accuracy) + " | " + fixed4(f.val_accuracy) + " |\n";
  }
  return out;
}

enum class ReportFormat { json, csv, markdown };

inline std::string render_report(const ExperimentReport& r, ReportFormat f) {
  switch (f) {
    case ReportFormat::json: return report_to_json(r).dump(2) + "\n";
    case ReportFormat::csv: return format_report_csv(r);
    case ReportFormat::markdown: return format_report_markdown(r);
  }
  return {};
}

// Writes `<dir>/<experiment>.{json,csv,md}` for the requested formats.
inline std::vector<std::filesystem::path> emit_report(const ExperimentReport& r, const std::filesystem::path& dir,
                                                      const std::vector<ReportFormat>& formats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> paths;
  for (auto f : formats) {
    const char* ext = f == ReportFormat::json ? "json" : f == ReportFormat::csv ? "csv" : "md";
    const auto path = dir / (r.experiment + "." + ext);
    csv::write_file(path.string(), render_report(r, f));
    paths.push_back(path);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Phases

struct CorpusPair {
  std::vector<ReportTrace> a;  // training corpus
  std::vector<ReportTrace> b;  // drift target
};

namespace detail {

inline std::vector<ReportTrace> labeled_only(std::vector<ReportTrace> traces) {
  std::erase_if(traces, [](const ReportTrace& t) {
    if (!t.label) warn("skipping unlabeled sample " + t.sample_id);
    return !t.label;
  });
  return traces;
}

inline std::vector<ReportTrace> ingest_source(const DirectorySource& src) {
  auto result = ingest_directory(src.reports, read_label_csv(src.labels));
  for (const auto& e : result.errors) warn("skipped " + e.path + ": " + e.message);
  return labeled_only(std::move(result.traces));
}

}  // namespace detail

// Without drift, A and B are two independent draws from the same profiles.
inline CorpusPair load_corpora(const ExperimentConfig& cfg) {
  CorpusPair pair;
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    const auto counts = proportional_counts(s.samples);
    auto original = generate_corpus(s.profiles, counts, derive_seed(cfg.seed, "corpus-original"), "o-");
    const auto drifted_profiles = apply_drift(s.profiles, s.drift, s.time_step, derive_seed(cfg.seed, "drift"));
    auto drifted = generate_corpus(drifted_profiles, counts, derive_seed(cfg.seed, "corpus-drifted"), "d-");
    pair.a = std::move(original);
    pair.b = std::move(drifted);
  } else {
    pair.a = detail::ingest_source(*cfg.dir_a);
    pair.b = detail::ingest_source(*cfg.dir_b);
  }
  if (cfg.direction == Direction::reversed) std::swap(pair.a, pair.b);
  return pair;
}

struct FeatureStage {
  ClassCorpora unique;
  ClassCorpora filtered;
  FeatureCorpus merged;
  HybridResult selected;
  Dataset dataset;  // corpus A on the selected axis
};

inline FeatureStage build_features(const ExperimentConfig& cfg, const std::vector<ReportTrace>& traces,
                                   std::map<std::string, double>& timings, ArtifactStore& store) {
  FeatureStage f;
  run_phase("ngram", timings, [&] {
    f.unique = build_unique_corpora(traces, cfg.n_values);
    f.filtered = frequency_filter(f.unique, traces, cfg.min_doc_count);
    f.merged = merge_corpora(f.filtered);
    store.put("corpora", "merged", "json", corpus_to_json(f.merged).dump() + "\n");
  });
  run_phase("select", timings, [&] {
    const Dataset full = vectorize_dataset(traces, f.merged, cfg.n_values);
    f.selected = hybrid_refine(full, f.merged, cfg.selection);
    store.put("corpora", "selected", "json", corpus_to_json(f.selected.corpus).dump() + "\n");
    store.put("corpora", "scores", "csv", format_scores_csv(f.merged, f.selected.scores));
  });
  run_phase("vectorize", timings, [&] {
    f.dataset = vectorize_dataset(traces, f.selected.corpus, cfg.n_values);
    store.put("datasets", "a-selected", "csv", format_dataset_csv(f.dataset, f.selected.corpus));
    store.put("datasets", "a-selected", "json", dataset_sidecar(f.dataset).dump(2) + "\n");
  });
  return f;
}

struct BaselineRun {
  CorpusPair corpora;
  FeatureStage features;
  std::map<std::string, nn::TrainResult> models;
  ExperimentReport report;
};

namespace detail {

inline nn::TrainConfig seeded(const ExperimentConfig& cfg, std::string_view salt) {
  nn::TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seed, salt);
  return t;
}

inline ModelReport model_report(std::string arch, const nn::TrainResult& r) {
  return {std::move(arch), r.params.corpus_version, r.metrics};
}

inline void save_model_artifacts(ArtifactStore& store, std::string_view tag, const nn::TrainResult& r) {
  const auto arch = std::string(nn::arch_kind_name(r.params.architecture.kind));
  store.put("models", std::string(tag) + "-" + arch, "json", nn::model_header(r.params).dump(2) + "\n");
  store.put("models", std::string(tag) + "-" + arch, "bin", nn::encode_parameters(r.params));
  store.put("models", std::string(tag) + "-" + arch + "-metrics", "csv", nn::format_metrics_csv(r.metrics));
}

// Every training run on the same corpus shares one seed, so runs that differ
// only in the feature axis see the same split, shuffles and dropout masks.
inline std::map<std::string, nn::TrainResult> train_all(const ExperimentConfig& cfg, const Dataset& d,
                                                        std::string_view corpus, std::string_view tag,
                                                        std::map<std::string, double>& timings,
                                                        ArtifactStore& store) {
  std::map<std::string, nn::TrainResult> out;
  const auto train_cfg = seeded(cfg, std::string("train-") + std::string(corpus));
  for (auto kind : cfg.architectures) {
    const std::string arch(nn::arch_kind_name(kind));
    run_phase("train-" + std::string(tag) + "-" + arch, timings, [&] {
      const auto spec = nn::build_architecture(kind, d.cols, cfg.rnn_timesteps);
      auto r = nn::train(d, spec, train_cfg);
      save_model_artifacts(store, tag, r);
      out.emplace(arch, std::move(r));
    });
  }
  return out;
}

}  // namespace detail

// Ingest, feature construction, selection and training on corpus A.
inline BaselineRun run_baseline(const ExperimentConfig& cfg, ArtifactStore& store) {
  cfg.validate();
  BaselineRun run;
  run.report.experiment = "baseline";
  run.corpora = run_phase("ingest", run.report.timings, [&] { return load_corpora(cfg); });
  run.features = build_features(cfg, run.corpora.a, run.report.timings, store);
  run.models = detail::train_all(cfg, run.features.dataset, "a", "a", run.report.timings, store);

  run.report.datasets.push_back(dataset_report("a", run.features.dataset));
  for (auto kind : cfg.architectures) {
    const std::string arch(nn::arch_kind_name(kind));
    run.report.models.push_back(detail::model_report(arch, run.models.at(arch)));
  }
  const auto& sel = run.features.selected;
  run.report.details["merged_features"] = run.features.merged.size();
  run.report.details["selected_features"] = sel.corpus.size();
  run.report.details["prefiltered"] = sel.prefiltered;
  run.report.details["redundant"] = sel.redundant;
  return run;
}

inline BaselineRun run_baseline(const ExperimentConfig& cfg) {
  ArtifactStore store(cfg.out);
  return run_baseline(cfg, store);
}

namespace detail {

// Evaluates on B's train/validation rows using the same split a retrain on B would use.
inline ModelReport evaluate_stale(const ExperimentConfig& cfg, const std::string& arch, const nn::ModelParams& params,
                                  const Dataset& b) {
  if (params.corpus_version != b.corpus_version) {
    throw DomainError("model " + arch + " was trained on corpus version " + std::to_string(params.corpus_version) +
                      " but the dataset was vectorized against version " + std::to_string(b.corpus_version));
  }
  const auto split = nn::stratified_split(b.labels, cfg.train.validation_fraction, seeded(cfg, "train-b").seed);
  const auto tr = nn::evaluate_rows(params, b, split.train);
  const auto va = nn::evaluate_rows(params, b, split.validation);
  return {arch, params.corpus_version, {nn::EpochMetrics{0, tr.loss, va.loss, tr.accuracy, va.accuracy}}};
}

inline nlohmann::ordered_json delta_json(const ExperimentReport& from, const ExperimentReport& to) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& m : to.models) {
    if (const auto* f = from.model(m.architecture)) {
      j[m.architecture] = m.final_metrics().val_accuracy - f->final_metrics().val_accuracy;
    }
  }
  return j;
}

}  // namespace detail

struct StaleRun {
  Dataset dataset;  // corpus B on A's selected axis
  ExperimentReport report;
};

// Corpus B on A's axis, evaluated by the A models without retraining.
inline StaleRun run_stale(const ExperimentConfig& cfg, const BaselineRun& baseline, ArtifactStore& store) {
  StaleRun run;
  run.report.experiment = "stale";
  run_phase("stale", run.report.timings, [&] {
    run.dataset = vectorize_dataset(baseline.corpora.b, baseline.features.selected.corpus, cfg.n_values);
    store.put("datasets", "b-on-a-axis", "csv", format_dataset_csv(run.dataset, baseline.features.selected.corpus));
    for (auto kind : cfg.architectures) {
      const std::string arch(nn::arch_kind_name(kind));
      run.report.models.push_back(detail::evaluate_stale(cfg, arch, baseline.models.at(arch).params, run.dataset));
    }
  });
  run.report.datasets.push_back(dataset_report("b-on-a-axis", run.dataset));
  run.report.details["val_accuracy_delta_vs_baseline"] = detail::delta_json(baseline.report, run.report);
  return run;
}

struct DriftRun {
  ClassOriginals originals;
  Selection selected;
  AugmentResult augmentation;
  Dataset dataset;             // corpus B on the augmented axis
  ExperimentReport report;     // GA-augmented retrain on B
  ExperimentReport control;    // retrain on B, A's axis, no augmentation
};

// Malware-class unigrams of the selected corpus that occur in that class's
// filtered corpus. Tokens whose mutable parts are all placeholders carry
// nothing to mutate and are left out.
inline ClassOriginals ga_originals(const FeatureStage& f) {
  ClassOriginals out;
  for (ClassLabel label : kMalwareClasses) {
    auto it = f.filtered.find(label);
    if (it == f.filtered.end()) continue;
    std::vector<Chromosome> list;
    for (const auto& feat : f.selected.corpus.features()) {
      if (feat.find(kNGramSeparator) != std::string::npos || !it->second.contains(feat)) continue;
      auto token = ApiToken::parse(feat);
      if (!token) continue;
      const bool placeholder = token->secondary == "na" && (!token->tertiary || *token->tertiary == "na");
      if (placeholder) continue;
      list.push_back(chromosome_from(feat, label));
    }
    if (!list.empty()) out.emplace(label, std::move(list));
  }
  return out;
}

inline DriftRun run_with_drift_handling(const ExperimentConfig& cfg, const BaselineRun& baseline,
                                        const StaleRun& stale, ArtifactStore& store) {
  DriftRun run;
  run.report.experiment = "drift_handled";
  run.control.experiment = "retrain_no_augmentation";
  auto& timings = run.report.timings;

  GAConfig ga = cfg.ga;
  ga.seed = derive_seed(cfg.seed, "ga");
  std::size_t duplicates = 0;
  std::map<ClassLabel, std::size_t> quotas;
  run_phase("ga", timings, [&] {
    run.originals = ga_originals(baseline.features);
    if (run.originals.empty() || ga.top_k_per_class == 0) {
      run.augmentation = augment_corpus(baseline.features.selected.corpus, {});
    } else {
      quotas = population_quotas(run.originals, ga.population_size);
      const auto population = generate_population(run.originals, ga);
      for (const auto& c : population) duplicates += c.duplicate;
      run.selected = score_and_select(population, ga);
      run.augmentation = augment_corpus(baseline.features.selected.corpus, run.selected);
    }
    store.put("ga", "selection", "csv", format_selection_csv(run.selected));
    store.put("ga", "manifest", "json", ga_manifest(ga, quotas, run.selected, run.augmentation, duplicates).dump(2) + "\n");
    store.put("corpora", "augmented", "json", corpus_to_json(run.augmentation.corpus).dump() + "\n");
  });
  run_phase("vectorize-b", timings, [&] {
    run.dataset = vectorize_dataset(baseline.corpora.b, run.augmentation.corpus, cfg.n_values);
    store.put("datasets", "b-augmented", "csv", format_dataset_csv(run.dataset, run.augmentation.corpus));
  });
  const auto augmented = detail::train_all(cfg, run.dataset, "b", "b-augmented", timings, store);
  const auto control = detail::train_all(cfg, stale.dataset, "b", "b-control", run.control.timings, store);

  for (auto kind : cfg.architectures) {
    const std::string arch(nn::arch_kind_name(kind));
    run.report.models.push_back(detail::model_report(arch, augmented.at(arch)));
    run.control.models.push_back(detail::model_report(arch, control.at(arch)));
  }
  run.report.datasets.push_back(dataset_report("b-augmented", run.dataset));
  run.control.datasets.push_back(dataset_report("b-on-a-axis", stale.dataset));

  auto& d = run.report.details;
  d["ga_originals"] = [&] {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [label, list] : run.originals) j[std::string(label_name(label))] = list.size();
    return j;
  }();
  d["duplicates_flagged"] = duplicates;
  d["original_corpus_size"] = run.augmentation.original_size;
  d["mutants_added"] = run.augmentation.added;
  d["mutants_skipped"] = run.augmentation.skipped;
  d["augmentation_ratio"] = run.augmentation.ratio();
  d["val_accuracy_delta_vs_stale"] = detail::delta_json(stale.report, run.report);
  d["val_accuracy_delta_vs_control"] = detail::delta_json(run.control, run.report);
  return run;
}

// ---------------------------------------------------------------------------
// Full protocol

struct ProtocolResult {
  BaselineRun baseline;
  StaleRun stale;
  std::optional<DriftRun> drift;

  std::vector<const ExperimentReport*> reports() const {
    std::vector<const ExperimentReport*> out = {&baseline.report, &stale.report};
    if (drift) {
      out.push_back(&drift->report);
      out.push_back(&drift->control);
    }
    return out;
  }
};

inline nlohmann::ordered_json timings_json(const ProtocolResult& r) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto* rep : r.reports()) {
    nlohmann::ordered_json t = nlohmann::ordered_json::object();
    for (const auto& [k, v] : rep->timings) t[k] = v;
    j[rep->experiment] = t;
  }
  return j;
}

// Writes every report in all formats plus the combined markdown table and the
// timing sidecar under `<out>/reports`.
inline void write_reports(const ProtocolResult& r, const ExperimentConfig& cfg, ArtifactStore& store) {
  if (!store.enabled()) return;
  const auto dir = *store.root() / "reports";
  std::string combined;
  for (const auto* rep : r.reports()) {
    emit_report(*rep, dir, {ReportFormat::json, ReportFormat::csv, ReportFormat::markdown});
    combined += format_report_markdown(*rep) + "\n";
  }
  store.put_plain("reports", "summary.md", combined);
  store.put_plain("reports", "config.json", config_to_json(cfg).dump(2) + "\n");
  store.put_plain("reports", "timings.json", timings_json(r).dump(2) + "\n");
}

inline ProtocolResult run_protocol(const ExperimentConfig& cfg, ArtifactStore& store) {
  ProtocolResult r;
  r.baseline = run_baseline(cfg, store);
  r.stale = run_stale(cfg, r.baseline, store);
  if (cfg.drift_handling) r.drift = run_with_drift_handling(cfg, r.baseline, r.stale, store);
  write_reports(r, cfg, store);
  return r;
}

inline ProtocolResult run_protocol(const ExperimentConfig& cfg) {
  ArtifactStore store(cfg.out);
  return run_protocol(cfg, store);
}

}  // namespace malclass
