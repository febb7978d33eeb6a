#pragma once

// Model files: `<stem>.json` header plus `<stem>.bin`, the parameters as
// little-endian f64 in declared tensor order.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "malclass/common.hpp"
#include "malclass/csv.hpp"
#include "malclass/nn/architecture.hpp"
#include "malclass/nn/model.hpp"

namespace malclass::nn {

inline nlohmann::ordered_json model_header(const ModelParams& p) {
  nlohmann::ordered_json j;
  j["architecture"] = to_json(p.architecture);
  j["input_dim"] = p.input_dim;
  j["seed"] = p.rng_seed;
  j["corpus_version"] = p.corpus_version;
  j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : p.tensors) {
    nlohmann::ordered_json e;
    e["name"] = t.name;
    e["shape"] = t.shape;
    j["tensors"].push_back(e);
  }
  j["parameter_count"] = p.parameter_count();
  return j;
}

inline std::string encode_parameters(const ModelParams& p) {
  std::string out;
  out.reserve(p.parameter_count() * 8);
  for (const auto& t : p.tensors) {
    for (double v : t.data) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
  }
  return out;
}

inline ModelParams decode_model(const nlohmann::json& header, std::string_view blob) {
  ModelParams p;
  p.architecture = architecture_from_json(header.at("architecture"));
  p.input_dim = header.at("input_dim").get<std::size_t>();
  p.rng_seed = header.at("seed").get<std::uint64_t>();
  p.corpus_version = header.at("corpus_version").get<std::uint64_t>();
  validate(p.architecture, p.input_dim);

  // Shapes are recomputed from the architecture; the header copy is informational.
  const ModelParams fresh = init_params(p.architecture, p.input_dim, 0);
  if (blob.size() != fresh.parameter_count() * 8) {
    throw IoError("parameter blob has " + std::to_string(blob.size()) + " bytes, expected " +
                  std::to_string(fresh.parameter_count() * 8));
  }
  p.tensors = fresh.tensors;
  std::size_t pos = 0;
  for (auto& t : p.tensors) {
    for (double& v : t.data) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t{static_cast<unsigned char>(blob[pos + b])} << (8 * b);
      v = std::bit_cast<double>(bits);
      pos += 8;
    }
  }
  return p;
}

inline void save_model(const ModelParams& p, const std::filesystem::path& stem) {
  csv::write_file(stem.string() + ".json", model_header(p).dump(2) + "\n");
  csv::write_file(stem.string() + ".bin", encode_parameters(p));
}

inline ModelParams load_model(const std::filesystem::path& stem) {
  const std::string header = csv::read_file(stem.string() + ".json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model header: ") + e.what(), e.byte);
  }
  return decode_model(j, csv::read_file(stem.string() + ".bin"));
}

}  // namespace malclass::nn
