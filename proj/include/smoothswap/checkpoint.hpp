#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "smoothswap/nn.hpp"

namespace smoothswap {

// Flat view of tensors to persist: a JSON manifest (names, shapes, dtype,
// byte offsets) next to one little-endian binary blob. Round-trips are
// bit-exact within a build.
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, Tensor t) { items.emplace_back(name, std::move(t)); }
  void add_store(const std::string& prefix, const ParamStore& store) {
    for (const auto& e : store.entries()) items.emplace_back(prefix + "/" + e.name, e.tensor);
  }
};

// Writes <base>.json and <base>.bin.
void save_checkpoint(const std::filesystem::path& base, const NamedTensors& tensors,
                     const nlohmann::json& meta);

// Fills the given tensors in place (matched by name, shapes must agree) and
// returns the stored meta. Throws MissingArtifactError when absent.
nlohmann::json load_checkpoint(const std::filesystem::path& base, NamedTensors& tensors);

// Reads just the meta block.
nlohmann::json load_checkpoint_meta(const std::filesystem::path& base);

bool checkpoint_exists(const std::filesystem::path& base);

}  // namespace smoothswap
