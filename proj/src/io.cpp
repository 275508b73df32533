#include "trafficdtl/io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "trafficdtl/error.hpp"

namespace trafficdtl {

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw std::runtime_error("tensor container '" + path.string() + "' is truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  std::filesystem::path p = stem;
  p += ext;
  return p;
}

}  // namespace

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os.write(kTensorMagic, sizeof(kTensorMagic));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) put<std::uint64_t>(os, d);
    for (double v : nt.tensor.data()) put<double>(os, v);
  }
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  char magic[sizeof(kTensorMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not a tensor container");
  }
  const auto count = get<std::uint32_t>(is, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("tensor container '" + path.string() + "' is truncated");
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = get<double>(is, path);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

std::pair<std::filesystem::path, std::filesystem::path> save_model(const std::filesystem::path& stem,
                                                                   const ModelGraph& model) {
  std::vector<NamedTensor> entries;
  nlohmann::json listing = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const Layer& layer = model.layer(i);
    for (const Parameter& p : layer.parameters()) {
      std::string name = layer.name() + "/" + p.name;
      listing.push_back({{"name", name}, {"shape", p.value.shape()}});
      entries.push_back({std::move(name), p.value});
    }
  }
  const auto bin = with_ext(stem, ".bin");
  const auto manifest = with_ext(stem, ".json");
  write_tensors(bin, entries);
  nlohmann::json j = {{"format", "trafficdtl-weights/1"},
                      {"payload", bin.filename().string()},
                      {"model", model.summary()},
                      {"entries", listing}};
  write_json(manifest, j);
  return {bin, manifest};
}

ModelGraph load_model(const std::filesystem::path& stem) {
  const nlohmann::json manifest = read_json(with_ext(stem, ".json"));
  ModelGraph model = build_from_summary(manifest.at("model"));
  std::vector<NamedTensor> entries = read_tensors(with_ext(stem, ".bin"));
  std::size_t k = 0;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    Layer& layer = model.layer(i);
    const auto& layers = manifest.at("model").at("layers");
    if (i < layers.size()) layer.set_frozen(layers[i].value("frozen", false));
    for (Parameter& p : layer.parameters()) {
      const std::string expect = layer.name() + "/" + p.name;
      if (k >= entries.size() || entries[k].name != expect) {
        throw ShapeError("weights: expected entry '" + expect + "' at position " + std::to_string(k));
      }
      if (entries[k].tensor.shape() != p.value.shape()) {
        throw ShapeError("weights: '" + expect + "' has shape " + shape_str(entries[k].tensor.shape()) +
                         ", model expects " + shape_str(p.value.shape()));
      }
      p.value = std::move(entries[k].tensor);
      ++k;
    }
  }
  if (k != entries.size()) throw ShapeError("weights: container has unexpected extra entries");
  return model;
}

}  // namespace trafficdtl
