#include "config.hpp"

#include <fstream>
#include <sstream>

#include "infattack/data_io.hpp"

namespace infattack::cli {

namespace {

// Leaves carry "$type" and "default"; any other object is a section.
const json& schema() {
  static const json s = R"({
    "seed": {"$type": "integer", "default": 0},
    "output": {"$type": "string", "default": "out"},
    "data": {
      "kind": {"$type": "string", "default": "blobs"},
      "train": {"$type": "string?", "default": null},
      "test": {"$type": "string?", "default": null},
      "pristine": {"$type": "string?", "default": null},
      "n": {"$type": "integer", "default": 600},
      "d": {"$type": "integer", "default": 8},
      "classes": {"$type": "integer", "default": 2},
      "separation": {"$type": "number", "default": 2.5},
      "gap": {"$type": "number", "default": 0.2},
      "K": {"$type": "integer", "default": 1},
      "allPositive": {"$type": "bool", "default": false},
      "seed": {"$type": "integer", "default": 0},
      "trainSize": {"$type": "integer", "default": 300},
      "testSize": {"$type": "integer?", "default": null}
    },
    "model": {
      "path": {"$type": "string?", "default": null},
      "l2": {"$type": "number", "default": 0.01},
      "hasBias": {"$type": "bool", "default": true},
      "maxIters": {"$type": "integer", "default": 5000},
      "gradTol": {"$type": "number", "default": 1e-8}
    },
    "influence": {
      "damp": {"$type": "number", "default": 0.01},
      "cgTol": {"$type": "number", "default": 1e-8},
      "cgMaxIter": {"$type": "integer", "default": 0}
    },
    "attack": {
      "radius": {"$type": "number[]", "default": [0.5]},
      "relativeRadius": {"$type": "bool", "default": true},
      "k": {"$type": "integer[]", "default": [10]},
      "variant": {"$type": "string", "default": "max_target_min_higher"},
      "learningRates": {"$type": "number[]", "default": [0.01, 0.1]},
      "steps": {"$type": "integer", "default": 100},
      "numInits": {"$type": "integer", "default": 5},
      "initNoise": {"$type": "number", "default": 0.01},
      "accBudget": {"$type": "number", "default": 0.03},
      "targets": {"$type": "integer", "default": 20},
      "targetIndices": {"$type": "integer[]?", "default": null},
      "targetSizes": {"$type": "integer[]", "default": [10, 50]},
      "scales": {"$type": "number[]", "default": [0.25, 1, 64]}
    },
    "fairness": {
      "preset": {"$type": "string?", "default": null},
      "lambdas": {"$type": "number[]", "default": [0.25, 0.5, 2, 4, 8, 16, 32, 64]},
      "beta": {"$type": "number", "default": 0.5},
      "gamma": {"$type": "number", "default": 0.0},
      "l2": {"$type": "number", "default": 0.01},
      "problem": {"$type": "string", "default": "advanced"},
      "weighting": {"$type": "string", "default": "remove"},
      "lpMethod": {"$type": "string", "default": "dual"},
      "temperature": {"$type": "number", "default": 1.0},
      "accBudget": {"$type": "number", "default": 0.03}
    }
  })"_json;
  return s;
}

bool is_leaf(const json& node) { return node.is_object() && node.contains("$type"); }

bool has_type(const json& v, std::string type) {
  if (type.back() == '?') {
    if (v.is_null()) return true;
    type.pop_back();
  }
  if (type == "number") return v.is_number();
  if (type == "integer") return v.is_number_integer();
  if (type == "bool") return v.is_boolean();
  if (type == "string") return v.is_string();
  if (type.ends_with("[]")) {
    if (!v.is_array() || v.empty()) return false;
    const std::string elem = type.substr(0, type.size() - 2);
    for (const auto& e : v)
      if (!has_type(e, elem)) return false;
    return true;
  }
  return false;
}

json resolve(const json& node, const json* user, const std::string& path) {
  if (user && !user->is_object())
    throw ConfigError("config key '" + path + "' must be an object");
  if (user) {
    for (const auto& [key, _] : user->items())
      if (!node.contains(key) || key.starts_with("$"))
        throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
  }
  json out = json::object();
  for (const auto& [key, child] : node.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    const json* given = user && user->contains(key) ? &(*user)[key] : nullptr;
    if (is_leaf(child)) {
      if (given && !has_type(*given, child["$type"]))
        throw ConfigError("config key '" + p + "' must be of type " + child["$type"].get<std::string>());
      out[key] = given ? *given : child["default"];
    } else {
      out[key] = resolve(child, given, p);
    }
  }
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

Dataset take_rows(const Dataset& d, Index begin, Index end) {
  std::vector<Index> rows;
  for (Index i = begin; i < end; ++i) rows.push_back(i);
  return d.subset(rows);
}

}  // namespace

json resolve_config(const json& user) {
  json cfg = resolve(schema(), &user, "");
  const json& a = cfg["attack"];
  for (double c : a["radius"]) require(c >= 0, "attack.radius entries must be non-negative");
  for (long k : a["k"]) require(k >= 1, "attack.k entries must be at least 1");
  for (long s : a["targetSizes"]) require(s >= 1, "attack.targetSizes entries must be at least 1");
  for (double s : a["scales"]) require(s > 0, "attack.scales entries must be positive");
  require(a["targets"].get<long>() >= 1, "attack.targets must be at least 1");
  parse_variant(a["variant"]);
  for (double l : cfg["fairness"]["lambdas"]) require(l > 0, "fairness.lambdas entries must be positive");
  const std::string kind = cfg["data"]["kind"];
  require(kind == "csv" || kind == "blobs" || kind == "biased_groups" || kind == "impossibility",
          "data.kind must be one of csv, blobs, biased_groups, impossibility");
  require(cfg["seed"].get<long long>() >= 0, "seed must be non-negative");
  attack_config(cfg, 0).validate();
  fairness_config(cfg).validate();
  require(cfg["influence"]["damp"].get<double>() >= 0, "influence.damp must be non-negative");
  require(cfg["model"]["l2"].get<double>() >= 0, "model.l2 must be non-negative");
  return cfg;
}

json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json user;
  try {
    user = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return resolve_config(user);
}

Splits load_splits(const json& cfg) {
  const json& d = cfg["data"];
  const std::string kind = d["kind"];
  Splits s;
  if (kind == "csv") {
    if (d["train"].is_null() || d["test"].is_null())
      throw ConfigError("data.train and data.test are required for csv data");
    s.train = load_dataset(d["train"].get<std::string>());
    s.test = load_dataset(d["test"].get<std::string>());
    s.pristine = d["pristine"].is_null() ? s.test : load_dataset(d["pristine"].get<std::string>());
    return s;
  }
  if (kind == "impossibility") {
    const auto inst = impossibility_dataset(d["d"], d["K"], d["seed"], d["allPositive"]);
    s.train = inst.train;
    s.test = inst.test;
    s.pristine = inst.test;
    return s;
  }
  const Index n = d["n"];
  const Dataset all = kind == "blobs"
                          ? synth_blobs(n, d["d"], d["classes"], d["separation"], d["seed"])
                          : synth_biased_groups(n, d["d"], d["gap"], d["seed"]);
  const Index n_train = d["trainSize"];
  if (n_train < 1 || n_train >= n) throw ConfigError("data.trainSize must lie in [1, n)");
  s.train = take_rows(all, 0, n_train);
  if (d["testSize"].is_null()) {
    std::tie(s.test, s.pristine) = split_halves_stratified(take_rows(all, n_train, n), d["seed"]);
  } else {
    const Index n_test = d["testSize"];
    if (n_test < 1 || n_train + n_test >= n)
      throw ConfigError("data.testSize must leave at least one pristine row");
    s.test = take_rows(all, n_train, n_train + n_test);
    s.pristine = take_rows(all, n_train + n_test, n);
  }
  return s;
}

LossSpec train_loss(const json& cfg) { return LossSpec{cfg["model"]["l2"], true}; }

IhvpConfig ihvp_config(const json& cfg) {
  const json& i = cfg["influence"];
  return IhvpConfig{LossSpec{i["damp"], false}, i["cgTol"], i["cgMaxIter"]};
}

TrainConfig train_config(const json& cfg) {
  TrainConfig t;
  t.max_iters = cfg["model"]["maxIters"];
  t.grad_tol = cfg["model"]["gradTol"];
  t.seed = cfg["seed"];
  return t;
}

AttackConfig attack_config(const json& cfg, std::uint64_t seed) {
  const json& a = cfg["attack"];
  AttackConfig c;
  c.radius = a["radius"][0];
  c.k = a["k"][0];
  c.relative_radius = a["relativeRadius"];
  c.learning_rates = a["learningRates"].get<std::vector<double>>();
  c.steps = a["steps"];
  c.num_inits = a["numInits"];
  c.init_noise = a["initNoise"];
  c.variant = parse_variant(a["variant"]);
  c.acc_budget = a["accBudget"];
  c.seed = seed;
  c.ihvp = ihvp_config(cfg);
  return c;
}

FairnessConfig fairness_config(const json& cfg) {
  const json& f = cfg["fairness"];
  FairnessConfig c;
  c.beta = f["beta"];
  c.gamma = f["gamma"];
  c.l2_reg = f["l2"];
  if (!f["preset"].is_null()) {
    const auto p = find_fairness_preset(f["preset"]);
    if (!p) throw ConfigError("unknown fairness.preset '" + f["preset"].get<std::string>() + "'");
    c.beta = p->beta;
    c.gamma = p->gamma;
    c.l2_reg = p->l2_reg;
  }
  const std::string problem = f["problem"], weighting = f["weighting"], method = f["lpMethod"];
  if (problem != "basic" && problem != "advanced")
    throw ConfigError("fairness.problem must be basic or advanced");
  if (weighting != "remove" && weighting != "direct")
    throw ConfigError("fairness.weighting must be remove or direct");
  if (method != "dual" && method != "simplex")
    throw ConfigError("fairness.lpMethod must be dual or simplex");
  c.problem = problem == "basic" ? ReweighProblem::Basic : ReweighProblem::Advanced;
  c.weighting = weighting == "remove" ? DownstreamWeighting::Remove : DownstreamWeighting::Direct;
  c.lp_method = method == "dual" ? LpMethod::DualSearch : LpMethod::Simplex;
  c.surrogate_temperature = f["temperature"];
  c.acc_budget = f["accBudget"];
  c.cg_tol = cfg["influence"]["cgTol"];
  c.train = train_config(cfg);
  return c;
}

}  // namespace infattack::cli
