#include "infattack/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace infattack {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cells;
}

std::string location(std::size_t row, const std::string& column) {
  return " (row " + std::to_string(row) + ", column '" + column + "')";
}

double parse_real(const std::string& cell, std::size_t row, const std::string& column) {
  double value = 0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(value))
    throw DataError("invalid real '" + cell + "'" + location(row, column));
  return value;
}

int parse_int(const std::string& cell, std::size_t row, const std::string& column) {
  int value = 0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (cell.empty() || ec != std::errc() || ptr != end)
    throw DataError("non-integer value '" + cell + "'" + location(row, column));
  return value;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset parse_dataset_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset file is empty");
  const auto header = split_row(line);

  Index d = 0;
  int label_col = -1, group_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& name = header[c];
    if (name == "label") {
      label_col = static_cast<int>(c);
    } else if (name == "group") {
      group_col = static_cast<int>(c);
    } else if (name == "f" + std::to_string(d) && label_col < 0 && group_col < 0) {
      ++d;
    } else {
      throw DataError("unexpected header column '" + name + "' at position " + std::to_string(c));
    }
  }
  if (label_col < 0) throw DataError("missing required column 'label'");
  if (d == 0) throw DataError("dataset has no feature columns f0..");
  if (group_col >= 0 && group_col < label_col)
    throw DataError("column 'group' must follow column 'label'");

  std::vector<std::vector<double>> rows;
  Dataset data;
  std::vector<int> groups;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    std::vector<double> feats(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j)
      feats[static_cast<std::size_t>(j)] =
          parse_real(cells[static_cast<std::size_t>(j)], row, header[static_cast<std::size_t>(j)]);
    rows.push_back(std::move(feats));
    const int y = parse_int(cells[static_cast<std::size_t>(label_col)], row, "label");
    if (y < 0) throw DataError("negative label" + location(row, "label"));
    data.labels.push_back(y);
    if (group_col >= 0) {
      const int g = parse_int(cells[static_cast<std::size_t>(group_col)], row, "group");
      if (g != 0 && g != 1) throw DataError("group value outside {0,1}" + location(row, "group"));
      groups.push_back(g);
    }
  }

  data.features.resize(static_cast<Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < d; ++j)
      data.features(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  const int max_label = data.labels.empty() ? 1 : *std::max_element(data.labels.begin(), data.labels.end());
  data.num_classes = std::max(2, max_label + 1);
  if (group_col >= 0) data.groups = std::move(groups);
  data.validate();
  return data;
}

std::string format_dataset_csv(const Dataset& data) {
  data.validate();
  std::string out;
  for (Index j = 0; j < data.dim(); ++j) out += "f" + std::to_string(j) + ",";
  out += "label";
  if (data.groups) out += ",group";
  out += "\n";
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.dim(); ++j) out += format_real(data.features(i, j)) + ",";
    out += std::to_string(data.labels[static_cast<std::size_t>(i)]);
    if (data.groups) out += "," + std::to_string((*data.groups)[static_cast<std::size_t>(i)]);
    out += "\n";
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset_csv(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, format_dataset_csv(data));
}

GlmModel parse_model_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  for (const char* key : {"numClasses", "dim", "hasBias", "theta"})
    if (!j.contains(key)) throw DataError(std::string("model file missing field '") + key + "'");
  for (const auto& item : j.items()) {
    const auto& k = item.key();
    if (k != "numClasses" && k != "dim" && k != "hasBias" && k != "theta")
      throw DataError("model file has unknown field '" + k + "'");
  }
  GlmModel model;
  try {
    model.num_classes = j.at("numClasses").get<int>();
    model.dim = j.at("dim").get<Index>();
    model.has_bias = j.at("hasBias").get<bool>();
    const auto theta = j.at("theta").get<std::vector<double>>();
    model.theta = Eigen::Map<const VectorXd>(theta.data(), static_cast<Index>(theta.size()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file has a malformed field: ") + e.what());
  }
  model.validate();
  return model;
}

std::string format_model_json(const GlmModel& model) {
  model.validate();
  nlohmann::json j;
  j["numClasses"] = model.num_classes;
  j["dim"] = model.dim;
  j["hasBias"] = model.has_bias;
  j["theta"] = std::vector<double>(model.theta.data(), model.theta.data() + model.theta.size());
  return j.dump(2) + "\n";
}

GlmModel load_model(const std::filesystem::path& path) {
  try {
    return parse_model_json(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_model(const GlmModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, format_model_json(model));
}

std::pair<Dataset, Dataset> split_halves_stratified(const Dataset& data, std::uint64_t seed) {
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(data.num_classes));
  for (Index i = 0; i < data.size(); ++i)
    by_class[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<Index> first, second;
  bool odd_to_first = true;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() == 1)
      throw DataError("class " + std::to_string(c) + " has a single member; cannot stratify");
    std::shuffle(members.begin(), members.end(), rng);
    // Alternate which half receives the odd element so half sizes stay balanced.
    std::size_t half = members.size() / 2;
    if (members.size() % 2 == 1) {
      if (odd_to_first) ++half;
      odd_to_first = !odd_to_first;
    }
    first.insert(first.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(half));
    second.insert(second.end(), members.begin() + static_cast<std::ptrdiff_t>(half), members.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {data.subset(first), data.subset(second)};
}

Dataset synth_blobs(Index n, Index d, int num_classes, double separation, std::uint64_t seed) {
  if (num_classes < 2 || d < 1 || n < num_classes || separation < 0)
    throw DataError("invalid blob generator parameters");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  MatrixXd centers(num_classes, d);
  for (int c = 0; c < num_classes; ++c) {
    VectorXd dir(d);
    for (Index j = 0; j < d; ++j) dir(j) = normal(rng);
    centers.row(c) = separation * dir.normalized().transpose();
  }
  if (num_classes == 2) {
    centers.row(1) = -centers.row(0);
    centers /= 2.0;
  }

  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % num_classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset data;
  data.num_classes = num_classes;
  data.features.resize(n, d);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < d; ++j) data.features(i, j) = centers(y, j) + normal(rng);
  }
  data.labels = std::move(labels);
  return data;
}

Dataset synth_biased_groups(Index n, Index d, double base_rate_gap, std::uint64_t seed) {
  if (n < 4 || d < 2 || base_rate_gap < 0 || base_rate_gap > 1)
    throw DataError("invalid biased-group generator parameters");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  std::vector<int> groups(static_cast<std::size_t>(n));
  for (auto& g : groups) g = coin(rng) ? 1 : 0;

  // Exact positive counts per group, then shuffled within the group.
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int g = 0; g < 2; ++g) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i] == g) members.push_back(i);
    const double rate = g == 0 ? 0.5 + base_rate_gap / 2 : 0.5 - base_rate_gap / 2;
    const auto positives = static_cast<std::size_t>(std::llround(rate * static_cast<double>(members.size())));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t m = 0; m < positives && m < members.size(); ++m) labels[members[m]] = 1;
  }

  VectorXd signal(d - 1);
  for (Index j = 0; j < d - 1; ++j) signal(j) = normal(rng);
  signal.normalize();

  Dataset data;
  data.num_classes = 2;
  data.features.resize(n, d);
  for (Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const double y = labels[ui] == 1 ? 1.0 : -1.0;
    for (Index j = 0; j < d - 1; ++j) data.features(i, j) = 0.75 * y * signal(j) + normal(rng);
    data.features(i, d - 1) = (groups[ui] == 0 ? 0.5 : -0.5) + normal(rng);
  }
  data.labels = std::move(labels);
  data.groups = std::move(groups);
  return data;
}

ImpossibilityInstance impossibility_dataset(Index d, Index k, std::uint64_t seed, bool all_positive) {
  if (d < 2 || k < 1) throw DataError("impossibility construction needs d >= 2 and K >= 1");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);

  ImpossibilityInstance inst;
  auto& train = inst.train;
  train.num_classes = 2;
  const Index n = (d - 1) + 1 + k;
  train.features = MatrixXd::Zero(n, d);
  Index row = 0;
  for (Index i = 1; i < d; ++i, ++row) {
    train.features(row, i) = 1.0;
    train.labels.push_back(all_positive || coin(rng) ? 1 : 0);
  }
  inst.target = row;
  train.features(row++, 0) = 1.0;
  train.labels.push_back(1);
  for (Index c = 0; c < k; ++c, ++row) {
    inst.bars.push_back(row);
    train.features(row, 0) = -1.0;
    train.labels.push_back(1);
  }

  inst.test.num_classes = 2;
  inst.test.features = MatrixXd::Zero(1, d);
  inst.test.features(0, 0) = 1.0;
  inst.test.labels = {1};
  return inst;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim() || a.num_classes != b.num_classes)
    throw DataError("cannot concatenate datasets with different shapes");
  Dataset out;
  out.num_classes = a.num_classes;
  out.features.resize(a.size() + b.size(), a.dim());
  out.features.topRows(a.size()) = a.features;
  out.features.bottomRows(b.size()) = b.features;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  if (a.groups && b.groups) {
    out.groups = *a.groups;
    out.groups->insert(out.groups->end(), b.groups->begin(), b.groups->end());
  }
  if (a.weights || b.weights) {
    out.weights = VectorXd(out.size());
    out.weights->head(a.size()) = a.weight_vector();
    out.weights->tail(b.size()) = b.weight_vector();
  }
  return out;
}

}  // namespace infattack
