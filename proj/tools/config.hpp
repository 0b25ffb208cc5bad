#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infattack/attack.hpp"
#include "infattack/fairness.hpp"

namespace infattack::cli {

using nlohmann::json;

/// Checks `user` against the schema (unknown keys and wrong types throw
/// ConfigError naming the dotted key path) and returns it merged onto the
/// defaults.
json resolve_config(const json& user);

json load_config(const std::filesystem::path& path);

/// Train / evaluation / held-out splits. `test` doubles as the validation set
/// of the fairness pipeline.
struct Splits {
  Dataset train, test, pristine;
};

Splits load_splits(const json& cfg);

LossSpec train_loss(const json& cfg);
IhvpConfig ihvp_config(const json& cfg);
TrainConfig train_config(const json& cfg);

/// Attack settings shared by every cell; radius and k are filled per cell.
AttackConfig attack_config(const json& cfg, std::uint64_t seed);

FairnessConfig fairness_config(const json& cfg);

}  // namespace infattack::cli
