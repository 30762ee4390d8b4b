#pragma once

// JSON descriptions of toy generators, gallery objectives and optimizer runs,
// shared by the CLI and the tests.

#include "noisecouple/generators.hpp"
#include "noisecouple/optimizer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace noisecouple {

/// {"kind": "linear", "d", "m", "j": "identity" | "random" | [[...]], "offset"?, "seed"?}
/// {"kind": "identity", "d"}
/// {"kind": "random_feature", "d", "m", "width", "seed"}
/// {"kind": "brightness", "d", "seed"}
GeneratorPtr generator_from_json(const nlohmann::json& j);

/// J with N(0, 1/d) entries drawn from (seed, stream 0).
Matrix random_projection(std::uint64_t seed, std::size_t m, std::size_t d);

/// {"name": "pairwise_l2" | "pairwise_sq" | "rbf" | "brightness_cluster", "tau"?, "lambda"?}
ObjectivePtr objective_from_json(const nlohmann::json& j, std::size_t k);

AmortizedConfig amortized_from_json(const nlohmann::json& j);

struct RefineSetup {
  NoiseBatch initial;
  RefineConfig config;
};

/// {"generator", "initial": spec, "seed", "stream_id"?, "optimized": [..] | {"range": [lo, hi)},
///  "target": [..] | number, "target_mask": [..] | {"range": [lo, hi)}, "steps"?, "step_size"?,
///  "objective"?, "maximize"?}
RefineSetup refine_from_json(const nlohmann::json& j);

/// Reads and parses a JSON file; IoError if unreadable, SpecError if malformed.
nlohmann::json load_json_file(const std::filesystem::path& path);

}  // namespace noisecouple
