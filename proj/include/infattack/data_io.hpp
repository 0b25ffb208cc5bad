#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "infattack/types.hpp"

namespace infattack {

/// CSV with header f0..f{d-1},label[,group]. Reals are written with 17
/// significant digits so a save/load round trip is value-identical.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset parse_dataset_csv(const std::string& text);
std::string format_dataset_csv(const Dataset& data);

/// JSON document {numClasses, dim, hasBias, theta}.
GlmModel load_model(const std::filesystem::path& path);
void save_model(const GlmModel& model, const std::filesystem::path& path);
GlmModel parse_model_json(const std::string& text);
std::string format_model_json(const GlmModel& model);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// Two disjoint halves with per-class counts differing by at most one.
std::pair<Dataset, Dataset> split_halves_stratified(const Dataset& data, std::uint64_t seed);

/// Gaussian clusters with identity covariance. Class centres are random unit
/// directions scaled by `separation` (antipodal for two classes); labels are
/// balanced.
Dataset synth_blobs(Index n, Index d, int num_classes, double separation, std::uint64_t seed);

/// Binary task with a sensitive group attribute. Positive rates are
/// 0.5 +/- base_rate_gap / 2 for groups 0 / 1; the last feature carries a
/// noisy copy of the group so a linear model picks up the disparity.
Dataset synth_biased_groups(Index n, Index d, double base_rate_gap, std::uint64_t seed);

/// One-hot construction in which a target sample can never be ranked in the
/// top K for any binary no-bias logistic model. Train rows are
/// (e_2, y_2) .. (e_d, y_d), then the target (e_1, 1), then K copies of
/// (-e_1, 1); the test set is {(e_1, 1)}.
struct ImpossibilityInstance {
  Dataset train;
  Dataset test;
  Index target = 0;
  std::vector<Index> bars;
};

ImpossibilityInstance impossibility_dataset(Index d, Index k, std::uint64_t seed,
                                            bool all_positive = false);

/// Concatenates rows of two datasets with matching dimension and classes.
Dataset concat(const Dataset& a, const Dataset& b);

}  // namespace infattack
