#pragma once

#include <map>
#include <string>

#include "dkp/matrix.hpp"

// Command layer: validates a flat key/value configuration, executes one of
// the subcommands (train, evaluate, sample-prior, eigen-hist,
// complexity-probe), writes artifacts, and returns a human-readable summary.
// Every artifact file begins with a '#'-prefixed metadata header line
// carrying the command, config hash, seed, and library version.
namespace dkp::cmd {

inline constexpr const char* kVersion = "0.1.0";

// Flat string key/value configuration; unknown keys are rejected. Values use
// their text form ("3", "0.5", "true", "squared_exponential").
using KeyValues = std::map<std::string, std::string>;

// Reads a flat JSON object {"key": value, ...} into key/values.
KeyValues load_config_file(const std::string& path);

struct RunConfig {
  std::string command;
  KeyValues keys;

  // Throws ConfigError on unknown keys or malformed values for `command`.
  void validate() const;
};

// Executes the command; throws ConfigError / NumericError / IoError.
std::string run(const RunConfig& config);

// FNV-1a hash of the canonical key/value dump, hex-encoded.
std::string config_hash(const KeyValues& keys);

}  // namespace dkp::cmd
