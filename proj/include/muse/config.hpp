#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "muse/data.hpp"
#include "muse/model.hpp"

namespace muse {

// Everything one pipeline run needs. A single seed drives data generation,
// splitting, initialization and training order.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string data_path;  // empty: generate synthetic data
    SyntheticConfig data;
    bool partial = false;  // apply corrupt_partial after loading
    double test_fraction = 0.2;
    double valid_fraction = 0.5;
    ModelConfig model;
    TrainConfig train;
    PathKind ablation_path = PathKind::linear;
    std::size_t eval_batch_size = 64;
    bool baseline = false;  // add a concat-baseline row to experiment reports
};

// Parses "key = value" lines; '#' starts a comment. Unknown keys and bad
// values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Applies one "key=value" override.
void apply_override(RunConfig& config, const std::string& assignment);
void set_value(RunConfig& config, const std::string& key, const std::string& value);
// MUSE_SEED, when set, replaces the configured seed.
void apply_environment(RunConfig& config);

// Canonical "key = value" listing, one per line, sorted by key. Parsing the
// echo gives back an identical configuration.
std::string config_echo(const RunConfig& config);
std::vector<std::string> config_keys();

// Shortest decimal form that reads back to the same double.
std::string format_double(double value);

}  // namespace muse
