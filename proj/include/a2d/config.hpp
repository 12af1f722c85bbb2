#pragma once

#include <string>

#include "a2d/distill.hpp"
#include "a2d/train.hpp"
#include "a2d/transformer.hpp"

namespace a2d {

// One experiment = flat [model] / [train] / [distill] sections. CLI flags
// override file values.
struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    DistillConfig distill;
};

// Minimal TOML reader for the flat layout above: [section] headers,
// key = value lines, # comments, bare numbers/bools and quoted strings.
// Unknown sections or keys raise ConfigError naming the offender.
ExperimentConfig load_config_toml(const std::string& path);

void apply_config_kv(ExperimentConfig& cfg, const std::string& section, const std::string& key,
                     const std::string& value);

}  // namespace a2d
