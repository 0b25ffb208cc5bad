#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"

namespace infattack::cli {

struct RunOptions {
  json config;  // resolved
  std::uint64_t seed = 0;
  std::filesystem::path out;
  int threads = 1;
};

void cmd_train(const RunOptions& opt);
void cmd_influence(const RunOptions& opt);
void cmd_attack_target(const RunOptions& opt);
void cmd_attack_multi(const RunOptions& opt);
void cmd_attack_scale(const RunOptions& opt);
void cmd_fairness(const RunOptions& opt);

/// Checks every record's success flags against its own fields (DataError on
/// a mismatch) and writes attack.csv and fairness.csv into `out`.
void cmd_report(const std::vector<std::filesystem::path>& reports, const std::filesystem::path& out);

/// Throws DataError when a loaded report is not self-consistent.
void check_report(const json& report);

}  // namespace infattack::cli
