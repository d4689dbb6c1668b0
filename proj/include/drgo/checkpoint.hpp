#pragma once

// Checkpoint layout:
//   8 bytes   magic "DRGOCKPT"
//   8 bytes   little-endian uint64 header length H
//   H bytes   JSON header {"version":1,"dtype":"f64","arrays":[{"name","shape":[r,c],"offset"}...]}
//   payload   concatenated little-endian float64 arrays; offsets are in elements

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "drgo/error.hpp"
#include "drgo/matrix.hpp"
#include "json.hpp"

namespace drgo {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using NamedArrays = std::map<std::string, Matrix>;

inline void save_checkpoint(const std::filesystem::path& path, const NamedArrays& arrays,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header;
  header["version"] = 1;
  header["dtype"] = "f64";
  header["meta"] = meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : arrays) {
    header["arrays"].push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    offset += m.size();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write("DRGOCKPT", 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : arrays)
    out.write(reinterpret_cast<const char*>(m.data().data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

struct Checkpoint {
  NamedArrays arrays;
  nlohmann::json meta;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, "DRGOCKPT", 8) != 0)
    throw DataError("'" + path.string() + "' is not a checkpoint file");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw DataError("checkpoint header truncated");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("checkpoint header truncated");
  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("dtype", "") != "f64") throw DataError("checkpoint dtype is not f64");
  ck.meta = header.value("meta", nlohmann::json::object());
  const auto payload_start = in.tellg();
  for (const auto& a : header.at("arrays")) {
    const auto rows = a.at("shape")[0].get<std::size_t>();
    const auto cols = a.at("shape")[1].get<std::size_t>();
    const auto offset = a.at("offset").get<std::uint64_t>();
    Matrix m(rows, cols);
    in.seekg(payload_start + static_cast<std::streamoff>(offset * sizeof(double)));
    if (!in.read(reinterpret_cast<char*>(m.data().data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      throw DataError("checkpoint payload truncated at array '" + a.at("name").get<std::string>() + "'");
    ck.arrays.emplace(a.at("name").get<std::string>(), std::move(m));
  }
  return ck;
}

}  // namespace drgo
