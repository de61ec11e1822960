#include "smoothswap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace smoothswap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts are unsupported");

fs::path manifest_path(const fs::path& base) { return fs::path(base.string() + ".json"); }
fs::path blob_path(const fs::path& base) { return fs::path(base.string() + ".bin"); }

}  // namespace

void save_checkpoint(const fs::path& base, const NamedTensors& tensors, const json& meta) {
  json manifest;
  manifest["format_version"] = 1;
  manifest["dtype"] = kDtypeTag;
  manifest["endianness"] = "little";
  json tensor_list = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors.items) {
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * sizeof(real);
    tensor_list.push_back({{"name", name},
                           {"shape", t.shape()},
                           {"offset", offset},
                           {"bytes", nbytes}});
    offset += nbytes;
  }
  manifest["tensors"] = std::move(tensor_list);
  manifest["total_bytes"] = offset;
  manifest["meta"] = meta;

  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  {
    std::ofstream mf(manifest_path(base));
    if (!mf) throw IoError("cannot write " + manifest_path(base).string());
    mf << manifest.dump(2) << "\n";
  }
  std::ofstream bf(blob_path(base), std::ios::binary);
  if (!bf) throw IoError("cannot write " + blob_path(base).string());
  for (const auto& [name, t] : tensors.items) {
    bf.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(real)));
  }
  if (!bf) throw IoError("short write to " + blob_path(base).string());
}

json load_checkpoint_meta(const fs::path& base) {
  std::ifstream mf(manifest_path(base));
  if (!mf) throw MissingArtifactError("checkpoint not found: " + manifest_path(base).string());
  json manifest = json::parse(mf);
  return manifest.contains("meta") ? manifest["meta"] : json::object();
}

bool checkpoint_exists(const fs::path& base) {
  return fs::exists(manifest_path(base)) && fs::exists(blob_path(base));
}

json load_checkpoint(const fs::path& base, NamedTensors& tensors) {
  std::ifstream mf(manifest_path(base));
  if (!mf) throw MissingArtifactError("checkpoint not found: " + manifest_path(base).string());
  json manifest = json::parse(mf);
  const std::string dtype = manifest.value("dtype", "f64");
  const size_t elem_size = dtype == "f32" ? 4 : 8;
  if (dtype != "f32" && dtype != "f64") {
    throw IoError("checkpoint " + base.string() + " has unknown dtype '" + dtype + "'");
  }

  std::ifstream bf(blob_path(base), std::ios::binary);
  if (!bf) throw MissingArtifactError("checkpoint blob not found: " + blob_path(base).string());

  struct Rec {
    std::vector<int64_t> shape;
    uint64_t offset;
    uint64_t bytes;
  };
  std::unordered_map<std::string, Rec> index;
  for (const auto& tj : manifest["tensors"]) {
    Rec r;
    r.shape = tj["shape"].get<std::vector<int64_t>>();
    r.offset = tj["offset"].get<uint64_t>();
    r.bytes = tj["bytes"].get<uint64_t>();
    index[tj["name"].get<std::string>()] = std::move(r);
  }

  for (auto& [name, t] : tensors.items) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw IoError("checkpoint " + base.string() + " is missing tensor '" + name + "'");
    }
    const Rec& r = it->second;
    if (r.shape != t.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                       Tensor::zeros(r.shape).shape_str() + " but target expects " +
                       t.shape_str());
    }
    const uint64_t count = r.bytes / elem_size;
    if (count != static_cast<uint64_t>(t.numel())) {
      throw IoError("checkpoint tensor '" + name + "' has inconsistent byte count");
    }
    bf.seekg(static_cast<std::streamoff>(r.offset));
    auto dst = t.mutable_data();
    if (elem_size == sizeof(real)) {
      bf.read(reinterpret_cast<char*>(dst.data()),
              static_cast<std::streamsize>(r.bytes));
    } else if (elem_size == 8) {
      std::vector<double> tmp(count);
      bf.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(r.bytes));
      for (uint64_t i = 0; i < count; ++i) dst[i] = static_cast<real>(tmp[i]);
    } else {
      std::vector<float> tmp(count);
      bf.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(r.bytes));
      for (uint64_t i = 0; i < count; ++i) dst[i] = static_cast<real>(tmp[i]);
    }
    if (!bf) throw IoError("short read from " + blob_path(base).string());
  }
  return manifest.contains("meta") ? manifest["meta"] : json::object();
}

}  // namespace smoothswap
