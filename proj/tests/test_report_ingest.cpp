#include <gtest/gtest.h>

#include <filesystem>

#include "malclass/report_ingest.hpp"

using namespace malclass;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& name) { return csv::read_file(std::string(MALCLASS_FIXTURES) + "/" + name); }

ApiCallRecord call(std::string api, std::vector<std::pair<std::string, std::string>> args, std::string ret) {
  return {"system", std::move(api), std::move(args), std::move(ret), 0};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  void write(const std::string& file, const std::string& text) const { csv::write_file((path / file).string(), text); }
};

const char* kOneCall = R"({"behavior":{"processes":[{"calls":[{"category":"system","api":"LdrLoadDll",
  "arguments":{"module_name":"urlmon"},"return":"urlmon.dll"}]}]}})";

}  // namespace

TEST(ParseReport, SingleCall) {
  const auto recs = parse_report(kOneCall);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0], (ApiCallRecord{"system", "LdrLoadDll", {{"module_name", "urlmon"}}, "urlmon.dll", 0}));
}

TEST(ParseReport, ZeroCallsIsEmptyNotError) {
  EXPECT_TRUE(parse_report(R"({"behavior":{"processes":[]}})").empty());
  EXPECT_TRUE(parse_report(R"({"behavior":{"processes":[{"calls":[]}]}})").empty());
}

TEST(ParseReport, ThreeProcessFixture) {
  const auto recs = parse_report(fixture("three_process.json"));
  ASSERT_EQ(recs.size(), 7u);  // 2 + 1 + 4
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(recs[i].sequence_index, i);
  EXPECT_EQ(recs[0].api_name, "LdrLoadDll");
  EXPECT_EQ(recs[2].api_name, "LdrGetProcedureAddress");  // "apiname" spelling
  EXPECT_EQ(recs[2].arguments.size(), 2u);                 // array-of-{name,value} arguments
  EXPECT_EQ(recs[3].category, "file");
  EXPECT_EQ(recs[6].return_value, "");  // missing field defaults to empty
  // Argument order follows the file, not key order.
  EXPECT_EQ(recs[0].arguments[0].first, "flags");
  EXPECT_EQ(recs[0].arguments[1].first, "module_name");
}

TEST(ParseReport, MalformedJsonReportsOffset) {
  try {
    parse_report(R"({"behavior": {"processes": [}})");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset(), 28u);
  }
}

TEST(ParseReport, MissingBehaviorIsEmptyReport) {
  EXPECT_THROW(parse_report(R"({"info":{}})"), EmptyReportError);
  EXPECT_THROW(parse_report(R"({"behavior":{}})"), EmptyReportError);
  EXPECT_THROW(parse_report("[1,2]"), EmptyReportError);
}

TEST(TokenizeCall, UnigramExample) {
  EXPECT_EQ(tokenize_call(call("LdrLoadDll", {{"module_name", "urlmon"}}, "urlmon.dll")).canonical(),
            "LdrLoadDll_urlmon_urlmon.dll");
}

TEST(TokenizeCall, NoArgumentsGivesNa) {
  EXPECT_EQ(tokenize_call(call("NtAllocateVirtualMemory", {}, "")).canonical(), "NtAllocateVirtualMemory_na");
}

TEST(TokenizeCall, SecondSalientArgumentBecomesTertiary) {
  EXPECT_EQ(tokenize_call(call("LdrGetProcedureAddress", {{"module", "ole32"}, {"function", "OleUninitialize"}}, ""))
                .canonical(),
            "LdrGetProcedureAddress_ole32_OleUninitialize");
}

TEST(TokenizeCall, PathsReduceToBasenameAndSanitize) {
  const auto t = tokenize_call(call("Nt_Create File", {{"handle", "4"}, {"filepath", "C:\\tmp\\my file_1.exe"}}, ""));
  EXPECT_EQ(t.primary, "Nt-CreateFile");
  EXPECT_EQ(t.secondary, "myfile-1.exe");
  EXPECT_FALSE(t.tertiary.has_value());
  EXPECT_EQ(tokenize_call(call("A", {{"regkey", "HKLM/Soft,ware"}}, "/x/y/ok_1")).canonical(), "A_Soft;ware_ok-1");
}

TEST(TokenizeCall, FixtureTokens) {
  const auto tokens = tokenize_records(parse_report(fixture("three_process.json")));
  const std::vector<std::string> expected = {
      "LdrLoadDll_urlmon_urlmon.dll",   "NtAllocateVirtualMemory_na", "LdrGetProcedureAddress_ole32_OleUninitialize",
      "NtCreateFile_drop-er.exe",       "RegOpenKeyExW_Run_0",        "connect_na",
      "GetTickCount_na"};
  EXPECT_EQ(tokens, expected);
}

TEST(TokenizeCall, RoundTripAndTotality) {
  Rng rng(3);
  const std::string chars = "ab_ ,/\\.x";
  auto random_text = [&](std::size_t max_len) {
    std::string s;
    const auto n = rng.below(max_len + 1);
    for (std::uint64_t i = 0; i < n; ++i) s.push_back(chars[rng.below(chars.size())]);
    return s;
  };
  const std::vector<std::string> keys = {"module_name", "x", "filepath", "regkey", "module", "flags"};
  for (int i = 0; i < 2000; ++i) {
    ApiCallRecord r;
    r.api_name = "Api" + random_text(5);
    const auto nargs = rng.below(4);
    for (std::uint64_t k = 0; k < nargs; ++k) r.arguments.emplace_back(keys[rng.below(keys.size())], random_text(6));
    r.return_value = random_text(4);
    const ApiToken t = tokenize_call(r);
    const auto parsed = ApiToken::parse(t.canonical());
    ASSERT_TRUE(parsed.has_value()) << t.canonical();
    EXPECT_EQ(*parsed, t);
    EXPECT_NE(t.primary, "na");
  }
}

TEST(TokenizeRecords, CapTruncates) {
  std::vector<ApiCallRecord> recs(5, call("A", {}, ""));
  EXPECT_EQ(tokenize_records(recs, 3).size(), 3u);
}

TEST(LabelCsv, ParsesAndRejects) {
  const auto m = parse_label_csv("sample_id,label\nb,worm\na,benign\n");
  EXPECT_EQ(m.at("a"), ClassLabel::benign);
  EXPECT_EQ(m.at("b"), ClassLabel::worm);
  EXPECT_THROW(parse_label_csv("id,label\na,worm\n"), ParseError);
  EXPECT_THROW(parse_label_csv("sample_id,label\na,ransomware\n"), ParseError);
}

TEST(IngestDirectory, LabeledAndOrdered) {
  TempDir dir("malclass_ingest_ok");
  dir.write("c.json", kOneCall);
  dir.write("a.json", kOneCall);
  dir.write("b.json", R"({"behavior":{"processes":[]}})");
  dir.write("notes.txt", "ignored");
  const auto r = ingest_directory(dir.path, {{"a", ClassLabel::adware}, {"b", ClassLabel::benign}, {"c", ClassLabel::worm}});
  ASSERT_EQ(r.traces.size(), 3u);
  EXPECT_EQ(r.traces[0].sample_id, "a");
  EXPECT_EQ(r.traces[1].sample_id, "b");
  EXPECT_EQ(r.traces[2].sample_id, "c");
  EXPECT_EQ(r.traces[2].label, ClassLabel::worm);
  EXPECT_TRUE(r.traces[1].tokens.empty());
  EXPECT_TRUE(r.errors.empty());
}

TEST(IngestDirectory, PartialFailureIsCollected) {
  TempDir dir("malclass_ingest_partial");
  dir.write("a.json", kOneCall);
  dir.write("b.json", "{not json");
  dir.write("c.json", kOneCall);
  const auto r = ingest_directory(dir.path, {});
  EXPECT_EQ(r.traces.size(), 2u);
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_NE(r.errors[0].path.find("b.json"), std::string::npos);
  EXPECT_FALSE(r.traces[0].label.has_value());
}

TEST(IngestDirectory, AllFailedIsFatal) {
  TempDir dir("malclass_ingest_fail");
  dir.write("a.json", "{");
  dir.write("b.json", R"({"nothing":1})");
  EXPECT_THROW(ingest_directory(dir.path, {}), IngestError);
}

TEST(IngestDirectory, EmptyDirectoryWarns) {
  TempDir dir("malclass_ingest_empty");
  std::vector<std::string> seen;
  ScopedWarningSink sink([&](std::string_view m) { seen.emplace_back(m); });
  const auto r = ingest_directory(dir.path, {});
  EXPECT_TRUE(r.traces.empty());
  EXPECT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(seen.size(), 1u);
}

TEST(IngestDirectory, Deterministic) {
  TempDir dir("malclass_ingest_det");
  dir.write("x.json", fixture("three_process.json"));
  dir.write("y.json", kOneCall);
  EXPECT_EQ(ingest_directory(dir.path, {}).traces, ingest_directory(dir.path, {}).traces);
}

TEST(FormatReport, RoundTripsThroughTokenizer) {
  ReportTrace t{"s1", ClassLabel::trojan,
                {"LdrLoadDll_urlmon_urlmon.dll", "NtClose_na", "X_na_ret", "A_b", "Api_mod_0"}};
  EXPECT_EQ(tokenize_records(parse_report(format_report(t))), t.tokens);
}
