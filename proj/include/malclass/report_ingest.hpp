#pragma once

// Sandbox behavior report parsing (Cuckoo-style JSON) and API token
// composition.
//
// Accepted report subset:
//
//   { "behavior": { "processes": [ { "calls": [
//       { "category": "system", "api": "LdrLoadDll",
//         "arguments": {"module_name": "urlmon"} | [{"name":..,"value":..}],
//         "return": "urlmon.dll" } ] } ] } }
//
// "apiname" and "return_value" are accepted as alternate spellings. Unknown
// fields are ignored.

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "malclass/common.hpp"
#include "malclass/csv.hpp"

namespace malclass {

struct ApiCallRecord {
  std::string category;
  std::string api_name;
  std::vector<std::pair<std::string, std::string>> arguments;
  std::string return_value;
  std::size_t sequence_index = 0;

  bool operator==(const ApiCallRecord&) const = default;
};

// primary_secondary[_tertiary]; no part contains '_'.
struct ApiToken {
  std::string primary;
  std::string secondary;
  std::optional<std::string> tertiary;

  std::string canonical() const {
    std::string out = primary + "_" + secondary;
    if (tertiary) out += "_" + *tertiary;
    return out;
  }

  // Inverse of canonical(). Returns nullopt unless there are 2 or 3 parts.
  static std::optional<ApiToken> parse(std::string_view canonical) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = canonical.find('_', start);
      parts.emplace_back(canonical.substr(start, pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    if (parts.size() < 2 || parts.size() > 3) return std::nullopt;
    ApiToken t{parts[0], parts[1], std::nullopt};
    if (parts.size() == 3) t.tertiary = parts[2];
    return t;
  }

  bool operator==(const ApiToken&) const = default;
};

struct ReportTrace {
  std::string sample_id;
  std::optional<ClassLabel> label;
  std::vector<std::string> tokens;  // canonical ApiToken strings, call order

  bool operator==(const ReportTrace&) const = default;
};

// Argument keys whose values feed the secondary/tertiary token parts, in
// no particular priority: the first matching argument in call order wins.
inline constexpr std::array<std::string_view, 6> kSalientArgumentKeys = {
    "module_name", "module", "filepath", "basename", "regkey", "function"};

inline constexpr std::size_t kDefaultTokenCap = 10'000;

namespace detail {

using Json = nlohmann::ordered_json;

inline std::string json_to_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return {};
  return v.dump();
}

inline std::string_view path_basename(std::string_view value) {
  const std::size_t pos = value.find_last_of("/\\");
  return pos == std::string_view::npos ? value : value.substr(pos + 1);
}

}  // namespace detail

// Whitespace removed, '_' -> '-', ',' -> ';'. Case preserved.
inline std::string sanitize_part(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') continue;
    if (c == '_') {
      out.push_back('-');
    } else if (c == ',') {
      out.push_back(';');
    } else {
      out.push_back(c);
    }
  }
  return out;
}

inline bool is_salient_key(std::string_view key) {
  return std::find(kSalientArgumentKeys.begin(), kSalientArgumentKeys.end(), key) !=
         kSalientArgumentKeys.end();
}

inline std::vector<ApiCallRecord> parse_report(std::string_view raw_bytes) {
  detail::Json doc;
  try {
    doc = detail::Json::parse(raw_bytes.begin(), raw_bytes.end());
  } catch (const detail::Json::parse_error& e) {
    // nlohmann counts bytes read; report the 0-based offset of the offending byte.
    throw ParseError("malformed report JSON: " + std::string(e.what()), e.byte > 0 ? e.byte - 1 : 0);
  }
  if (!doc.is_object() || !doc.contains("behavior") || !doc["behavior"].is_object()) {
    throw EmptyReportError("report has no behavior section");
  }
  const auto& behavior = doc["behavior"];
  if (!behavior.contains("processes") || !behavior["processes"].is_array()) {
    throw EmptyReportError("report behavior section has no processes list");
  }

  std::vector<ApiCallRecord> records;
  for (const auto& process : behavior["processes"]) {
    if (!process.is_object() || !process.contains("calls") || !process["calls"].is_array()) {
      continue;
    }
    for (const auto& call : process["calls"]) {
      if (!call.is_object()) continue;
      ApiCallRecord rec;
      if (auto it = call.find("category"); it != call.end()) rec.category = detail::json_to_text(*it);
      if (auto it = call.find("api"); it != call.end()) {
        rec.api_name = detail::json_to_text(*it);
      } else if (auto alt = call.find("apiname"); alt != call.end()) {
        rec.api_name = detail::json_to_text(*alt);
      }
      if (auto it = call.find("return"); it != call.end()) {
        rec.return_value = detail::json_to_text(*it);
      } else if (auto alt = call.find("return_value"); alt != call.end()) {
        rec.return_value = detail::json_to_text(*alt);
      }
      if (auto it = call.find("arguments"); it != call.end()) {
        if (it->is_object()) {
          for (auto arg = it->begin(); arg != it->end(); ++arg) {
            rec.arguments.emplace_back(arg.key(), detail::json_to_text(arg.value()));
          }
        } else if (it->is_array()) {
          for (const auto& arg : *it) {
            if (!arg.is_object()) continue;
            std::string name = arg.contains("name") ? detail::json_to_text(arg["name"]) : "";
            std::string value = arg.contains("value") ? detail::json_to_text(arg["value"]) : "";
            rec.arguments.emplace_back(std::move(name), std::move(value));
          }
        }
      }
      if (rec.api_name.empty()) continue;
      rec.sequence_index = records.size();
      records.push_back(std::move(rec));
    }
  }
  return records;
}

inline ApiToken tokenize_call(const ApiCallRecord& record) {
  ApiToken token;
  token.primary = sanitize_part(record.api_name);
  if (token.primary.empty()) token.primary = "unknown";
  if (token.primary == "na") token.primary = "na-api";

  std::vector<std::string> salient;
  for (const auto& [key, value] : record.arguments) {
    if (!is_salient_key(key)) continue;
    std::string part = sanitize_part(detail::path_basename(value));
    if (!part.empty()) salient.push_back(std::move(part));
    if (salient.size() == 2) break;
  }

  token.secondary = salient.empty() ? std::string("na") : salient[0];
  std::string ret = sanitize_part(detail::path_basename(record.return_value));
  if (!ret.empty()) {
    token.tertiary = std::move(ret);
  } else if (salient.size() > 1) {
    token.tertiary = salient[1];
  }
  return token;
}

inline std::vector<std::string> tokenize_records(const std::vector<ApiCallRecord>& records,
                                                 std::size_t token_cap = kDefaultTokenCap) {
  std::vector<std::string> tokens;
  tokens.reserve(std::min(records.size(), token_cap));
  for (const auto& rec : records) {
    if (tokens.size() >= token_cap) break;
    tokens.push_back(tokenize_call(rec).canonical());
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Directory ingestion

using LabelMap = std::map<std::string, ClassLabel>;

// CSV with header `sample_id,label`.
inline LabelMap parse_label_csv(std::string_view text) {
  const auto rows = csv::parse(text);
  if (rows.empty()) return {};
  const auto& header = rows.front();
  if (header.size() < 2 || header[0] != "sample_id" || header[1] != "label") {
    throw ParseError("labels CSV must start with header sample_id,label", 0);
  }
  LabelMap out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() < 2) throw ParseError("labels CSV row " + std::to_string(i) + " is short", 0);
    auto label = parse_label(row[1]);
    if (!label) throw ParseError("unknown class label '" + row[1] + "'", 0);
    out[row[0]] = *label;
  }
  return out;
}

inline LabelMap read_label_csv(const std::filesystem::path& path) {
  return parse_label_csv(csv::read_file(path.string()));
}

inline std::string format_label_csv(const std::vector<ReportTrace>& traces) {
  std::string out = "sample_id,label\n";
  for (const auto& t : traces) {
    if (!t.label) continue;
    out += csv::quote(t.sample_id) + "," + std::string(label_name(*t.label)) + "\n";
  }
  return out;
}

struct FileError {
  std::string path;
  std::string message;
};

struct IngestResult {
  std::vector<ReportTrace> traces;
  std::vector<FileError> errors;
  std::vector<std::string> warnings;
};

struct IngestOptions {
  std::size_t token_cap = kDefaultTokenCap;
};

inline IngestResult ingest_directory(const std::filesystem::path& path, const LabelMap& labeling,
                                     const IngestOptions& options = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(path, ec)) throw IngestError("not a directory: " + path.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });

  IngestResult result;
  if (files.empty()) {
    result.warnings.push_back("no report files in " + path.string());
    warn(result.warnings.back());
    return result;
  }

  for (const auto& file : files) {
    try {
      const std::string bytes = csv::read_file(file.string());
      ReportTrace trace;
      trace.sample_id = file.stem().string();
      trace.tokens = tokenize_records(parse_report(bytes), options.token_cap);
      if (auto it = labeling.find(trace.sample_id); it != labeling.end()) trace.label = it->second;
      result.traces.push_back(std::move(trace));
    } catch (const Error& e) {
      result.errors.push_back({file.string(), e.what()});
    }
  }
  if (result.traces.empty()) {
    throw IngestError("all " + std::to_string(files.size()) + " report files in " + path.string() +
                      " failed to parse; first error: " + result.errors.front().message);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report writing, the inverse used by the synthetic generator. Every token
// becomes one call whose arguments reproduce it through tokenize_call.

inline nlohmann::ordered_json call_for_token(const ApiToken& token) {
  nlohmann::ordered_json call;
  call["category"] = "synthetic";
  call["api"] = token.primary;
  nlohmann::ordered_json args = nlohmann::ordered_json::object();
  if (token.secondary != "na") args["module_name"] = token.secondary;
  if (token.secondary == "na" && token.tertiary) {
    // "na" secondary with a tertiary cannot come from arguments alone.
    args["module_name"] = "na";
  }
  call["arguments"] = args;
  call["return"] = token.tertiary.value_or("");
  return call;
}

inline std::string format_report(const ReportTrace& trace) {
  nlohmann::ordered_json calls = nlohmann::ordered_json::array();
  for (const auto& canonical : trace.tokens) {
    auto token = ApiToken::parse(canonical);
    if (!token) throw DomainError("not a canonical API token: " + canonical);
    calls.push_back(call_for_token(*token));
  }
  nlohmann::ordered_json doc;
  doc["info"] = {{"id", trace.sample_id}};
  doc["behavior"] = {{"processes", nlohmann::ordered_json::array({{{"process_name", "sample.exe"},
                                                                    {"calls", calls}}})}};
  return doc.dump();
}

}  // namespace malclass
