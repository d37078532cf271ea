#pragma once

// Flat, typed `key = value` run configuration. Lines starting with '#' are
// comments. `schema_version` and `task` are required; unknown keys are errors.

#include "adacontrast/adapt.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace adacontrast {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::string task;
  std::string name;               // defaults to the task string
  std::string source_checkpoint;  // required by adapt / adapt-online
  Index samples_per_domain = 2000;
  AdaptConfig adapt;

  std::string run_name() const { return name.empty() ? task : name; }
};

RunConfig parse_config(std::string_view text, std::string_view origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Every key, in schema order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& config);

std::vector<std::string> config_keys();

PseudoLabelSource parse_pseudo_label_source(std::string_view s);
Objective parse_objective(std::string_view s);

}  // namespace adacontrast
