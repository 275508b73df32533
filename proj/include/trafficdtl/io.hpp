#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "trafficdtl/model.hpp"
#include "trafficdtl/tensor.hpp"

namespace trafficdtl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Flat binary tensor container, all integers and floats little-endian:
//
//   magic    8 bytes  "TDTLTNS1"
//   count    u32
//   entries  count x { u32 name_len; name bytes (UTF-8);
//                      u32 rank; u64 dims[rank]; f64 data[prod(dims)] }
inline constexpr char kTensorMagic[8] = {'T', 'D', 'T', 'L', 'T', 'N', 'S', '1'};

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Model exchange artifact: `<stem>.bin` holds one entry per parameter named
/// "<layer>/<param>", `<stem>.json` the manifest (architecture summary plus the
/// entry list with shapes). Returns the two written paths.
std::pair<std::filesystem::path, std::filesystem::path> save_model(const std::filesystem::path& stem,
                                                                   const ModelGraph& model);
/// Rebuilds the architecture from the manifest and loads every parameter.
ModelGraph load_model(const std::filesystem::path& stem);

}  // namespace trafficdtl
