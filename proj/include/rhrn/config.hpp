#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "rhrn/architecture.hpp"
#include "rhrn/trainer.hpp"

namespace rhrn {

struct DataConfig {
  std::filesystem::path root;
};

/// One JSON document:
///   {"model": {...}, "init_seed": 1, "train": {...}, "data": {"root": "..."}}
/// Unknown keys anywhere are rejected. Relative data roots resolve against
/// the config file's directory.
struct RunConfig {
  ArchitectureSpec model = ArchitectureSpec::standard(3);
  std::uint64_t init_seed = 1;
  TrainConfig train;
  DataConfig data;

  static RunConfig parse(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  void validate() const;
};

}  // namespace rhrn
