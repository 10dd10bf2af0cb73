#pragma once

#include "promptfed/federation.hpp"

#include <stdexcept>
#include <string>

namespace promptfed {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    TrainingConfig train;
    std::string run_name = "run";
};

// Flat `key = value` text, `#` comments, blank lines ignored. Unknown keys,
// bad values, and violated invariants raise ConfigError with the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Full key set in fixed order; parse(snapshot(c)) == c.
std::string config_snapshot(const ExperimentConfig& cfg);

} // namespace promptfed
