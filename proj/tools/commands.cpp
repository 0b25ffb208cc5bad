#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <map>
#include <thread>

#include "infattack/data_io.hpp"

namespace infattack::cli {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Runs f(0..n-1) on a pool; results come back in cell order. The first
// failing cell (by index) is rethrown after all workers finish.
template <typename F>
auto parallel_cells(std::size_t n, int threads, F f) {
  using R = decltype(f(std::size_t{0}));
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto count = static_cast<std::size_t>(std::max(1, threads));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(count, n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

json ranks_json(const std::vector<Index>& v) {
  json a = json::array();
  for (Index r : v) a.push_back(r);
  return a;
}

// The output location is not an experiment parameter; leaving it out keeps
// reports written to different directories byte-comparable.
json echoed_config(json cfg) {
  cfg.erase("output");
  return cfg;
}

void write_report(const RunOptions& opt, const std::string& command, json records, json summary,
                  json timing) {
  json report = {{"command", command},
                 {"seed", opt.seed},
                 {"config", echoed_config(opt.config)},
                 {"records", std::move(records)},
                 {"summary", std::move(summary)}};
  fs::create_directories(opt.out);
  write_file_atomic(opt.out / (command + ".json"), report.dump(2) + "\n");
  write_file_atomic(opt.out / (command + ".timing.json"), timing.dump(2) + "\n");
}

struct Base {
  Splits data;
  GlmModel model;
  json fit;  // training diagnostics
};

Base base_model(const RunOptions& opt) {
  Base b{load_splits(opt.config), GlmModel{}, json::object()};
  const json& m = opt.config["model"];
  if (!m["path"].is_null()) {
    b.model = load_model(m["path"].get<std::string>());
    b.fit = {{"source", "file"}};
    return b;
  }
  const Fit fit = train_erm(b.data.train, train_loss(opt.config), train_config(opt.config),
                            m["hasBias"].get<bool>());
  if (!fit.converged)
    throw NumericalError("training did not converge; final gradient norm " +
                             std::to_string(fit.grad_norm),
                         fit.grad_norm);
  b.model = fit.model;
  b.fit = {{"source", "trained"},
           {"iterations", fit.iterations},
           {"finalLoss", fit.final_loss}};
  return b;
}

std::vector<Index> targets_for(const RunOptions& opt, const VectorXd& scores, Index k, Index count) {
  const json& idx = opt.config["attack"]["targetIndices"];
  if (!idx.is_null()) {
    auto t = idx.get<std::vector<Index>>();
    for (Index i : t)
      if (i < 0 || i >= scores.size()) throw ConfigError("attack.targetIndices entry out of range");
    return t;
  }
  return sample_targets(scores, k, count, opt.seed);
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string num(double x) { return json(x).dump(); }

}  // namespace

void cmd_train(const RunOptions& opt) {
  const auto t0 = Clock::now();
  const Base b = base_model(opt);
  fs::create_directories(opt.out);
  save_model(b.model, opt.out / "model.json");
  json rec = b.fit;
  rec["trainAccuracy"] = accuracy(b.model, b.data.train);
  rec["testAccuracy"] = accuracy(b.model, b.data.test);
  rec["pristineAccuracy"] = accuracy(b.model, b.data.pristine);
  rec["thetaNorm"] = b.model.theta.norm();
  write_report(opt, "train", json::array({rec}), {{"model", "model.json"}},
               {{"totalSeconds", seconds_since(t0)}});
}

void cmd_influence(const RunOptions& opt) {
  const auto t0 = Clock::now();
  const Base b = base_model(opt);
  const VectorXd s = influence_set(b.model, b.data.train, b.data.test, ihvp_config(opt.config));
  const Ranking r = rank(s);
  std::string csv = "index,score,rank\n";
  for (Index i = 0; i < s.size(); ++i)
    csv += std::to_string(i) + "," + num(s(i)) + "," +
           std::to_string(r.rank_of[static_cast<std::size_t>(i)]) + "\n";
  fs::create_directories(opt.out);
  write_file_atomic(opt.out / "scores.csv", csv);
  json records = json::array();
  const Index top = std::min<Index>(opt.config["attack"]["k"][0].get<Index>(), s.size());
  for (Index pos = 0; pos < top; ++pos) {
    const Index i = r.order[static_cast<std::size_t>(pos)];
    records.push_back({{"rank", pos + 1}, {"index", i}, {"score", s(i)}});
  }
  write_report(opt, "influence", records,
               {{"scores", "scores.csv"}, {"n", s.size()}, {"fit", b.fit}},
               {{"totalSeconds", seconds_since(t0)}});
}

void cmd_attack_target(const RunOptions& opt) {
  const auto t0 = Clock::now();
  const Base b = base_model(opt);
  const json& a = opt.config["attack"];
  const AttackConfig base_cfg = attack_config(opt.config, opt.seed);
  const VectorXd scores = influence_set(b.model, b.data.train, b.data.test, base_cfg.ihvp);
  const auto radii = a["radius"].get<std::vector<double>>();
  const auto ks = a["k"].get<std::vector<Index>>();

  struct Cell {
    double radius;
    Index k;
    Index target;
  };
  std::vector<Cell> cells;
  for (double c : radii)
    for (Index k : ks)
      for (Index t : targets_for(opt, scores, k, a["targets"]))
        cells.push_back({c, k, t});

  auto results = parallel_cells(cells.size(), opt.threads, [&](std::size_t i) {
    const auto c0 = Clock::now();
    AttackConfig cfg = base_cfg;
    cfg.radius = cells[i].radius;
    cfg.k = cells[i].k;
    const AttackResult r = single_target_attack(b.data.train, b.data.test, b.model, cells[i].target, cfg);
    const AttackMetrics m = evaluate_attack(r.theta_prime, b.model, b.data.train, b.data.test,
                                            b.data.pristine, {cells[i].target}, cfg.k, cfg.acc_budget,
                                            cfg.ihvp);
    const Index budget_rank = r.within_budget.ranks.front();
    json rec = {
        {"seed", opt.seed},
        {"C", cells[i].radius},
        {"k", cells[i].k},
        {"target", cells[i].target},
        {"initialRank", r.initial_rank()},
        {"best", {{"finalRank", r.final_rank()}, {"deltaAcc", r.delta_acc}, {"success", r.final_rank() <= cfg.k}}},
        {"budget",
         {{"finalRank", budget_rank},
          {"deltaAcc", r.within_budget.delta_acc},
          {"success", budget_rank <= cfg.k && r.within_budget.delta_acc <= cfg.acc_budget}}},
        {"transferRank", m.transfer_ranks.front()},
        {"pristineDeltaAcc", m.delta_acc},
        {"influenceGradNorm", m.influence_grad_norms.front()},
        {"chosenInit", r.chosen_init},
        {"chosenLr", r.chosen_lr},
        {"chosenStep", r.chosen_step},
        {"failedRuns", r.failed_runs}};
    return std::pair{rec, seconds_since(c0)};
  });

  json records = json::array(), cell_seconds = json::array();
  for (auto& [rec, sec] : results) {
    records.push_back(rec);
    cell_seconds.push_back(sec);
  }

  json summary = json::array();
  for (double c : radii) {
    for (Index k : ks) {
      std::vector<double> best, budget, dacc, improved, transfer;
      for (const auto& rec : records) {
        if (rec["C"].get<double>() != c || rec["k"].get<Index>() != k) continue;
        best.push_back(rec["best"]["success"].get<bool>());
        budget.push_back(rec["budget"]["success"].get<bool>());
        dacc.push_back(rec["best"]["deltaAcc"]);
        improved.push_back(rec["best"]["finalRank"].get<Index>() < rec["initialRank"].get<Index>());
        transfer.push_back(rec["transferRank"].get<Index>() <= k);
      }
      summary.push_back({{"C", c},
                         {"k", k},
                         {"targets", best.size()},
                         {"successRateBest", mean(best)},
                         {"successRateBudget", mean(budget)},
                         {"meanDeltaAcc", mean(dacc)},
                         {"improvedFraction", mean(improved)},
                         {"transferSuccessRate", mean(transfer)}});
    }
  }
  write_report(opt, "attack-target", records, summary,
               {{"totalSeconds", seconds_since(t0)}, {"cellSeconds", cell_seconds}});
}

void cmd_attack_multi(const RunOptions& opt) {
  const auto t0 = Clock::now();
  const Base b = base_model(opt);
  const json& a = opt.config["attack"];
  const AttackConfig base_cfg = attack_config(opt.config, opt.seed);
  const VectorXd scores = influence_set(b.model, b.data.train, b.data.test, base_cfg.ihvp);

  struct Cell {
    double radius;
    Index k;
    std::vector<Index> targets;
  };
  std::vector<Cell> cells;
  for (double c : a["radius"])
    for (Index k : a["k"].get<std::vector<Index>>())
      for (Index size : a["targetSizes"].get<std::vector<Index>>())
        cells.push_back({c, k, targets_for(opt, scores, k, size)});

  auto results = parallel_cells(cells.size(), opt.threads, [&](std::size_t i) {
    const auto c0 = Clock::now();
    AttackConfig cfg = base_cfg;
    cfg.radius = cells[i].radius;
    cfg.k = cells[i].k;
    const AttackResult r = multi_target_attack(b.data.train, b.data.test, b.model, cells[i].targets, cfg);
    json rec = {{"seed", opt.seed},
                {"C", cells[i].radius},
                {"k", cells[i].k},
                {"size", cells[i].targets.size()},
                {"targets", ranks_json(cells[i].targets)},
                {"initialRanks", ranks_json(r.initial_ranks)},
                {"finalRanks", ranks_json(r.final_ranks)},
                {"hits", r.hits},
                {"successRate", r.success_rate},
                {"targetFraction", r.target_fraction},
                {"deltaAcc", r.delta_acc},
                {"success", r.success()},
                {"budgetHits", r.within_budget.hits},
                {"budgetDeltaAcc", r.within_budget.delta_acc}};
    return std::pair{rec, seconds_since(c0)};
  });

  json records = json::array(), summary = json::array(), cell_seconds = json::array();
  for (auto& [rec, sec] : results) {
    summary.push_back({{"C", rec["C"]},
                       {"k", rec["k"]},
                       {"size", rec["size"]},
                       {"successRate", rec["successRate"]},
                       {"targetFraction", rec["targetFraction"]}});
    records.push_back(rec);
    cell_seconds.push_back(sec);
  }
  write_report(opt, "attack-multi", records, summary,
               {{"totalSeconds", seconds_since(t0)}, {"cellSeconds", cell_seconds}});
}

void cmd_attack_scale(const RunOptions& opt) {
  const auto t0 = Clock::now();
  const Base b = base_model(opt);
  const IhvpConfig ih = ihvp_config(opt.config);
  const Index k = std::min<Index>(opt.config["attack"]["k"][0].get<Index>(), b.data.train.size());
  const Ranking r0 = rank(influence_set(b.model, b.data.train, b.data.test, ih));
  const double acc0 = accuracy(b.model, b.data.test);
  const auto n = static_cast<double>(b.data.train.size());

  const auto scales = opt.config["attack"]["scales"].get<std::vector<double>>();
  auto records = parallel_cells(scales.size(), opt.threads, [&](std::size_t i) {
    const GlmModel m = scaling_attack(b.model, scales[i]);
    bool unchanged = true;
    for (const Dataset* d : {&b.data.train, &b.data.test, &b.data.pristine})
      unchanged = unchanged && predict(m, d->features) == predict(b.model, d->features);
    const Ranking r = rank(influence_set(m, b.data.train, b.data.test, ih));
    Index overlap = 0;
    for (Index pos = 0; pos < k; ++pos)
      overlap += r0.rank_of[static_cast<std::size_t>(r.order[static_cast<std::size_t>(pos)])] <= k;
    // Spearman correlation of two permutations.
    double d2 = 0;
    for (std::size_t j = 0; j < r.rank_of.size(); ++j) {
      const double diff = static_cast<double>(r.rank_of[j] - r0.rank_of[j]);
      d2 += diff * diff;
    }
    const double rho = n > 1 ? 1 - 6 * d2 / (n * (n * n - 1)) : 1.0;
    const double acc = accuracy(m, b.data.test);
    return json{{"seed", opt.seed},
                {"lambda", scales[i]},
                {"accuracy", acc},
                {"baseAccuracy", acc0},
                {"predictionsUnchanged", unchanged},
                {"exact", unchanged && acc == acc0},
                {"k", k},
                {"topKOverlap", overlap},
                {"rankCorrelation", rho}};
  });
  bool all_exact = true;
  for (const auto& rec : records) all_exact = all_exact && rec["exact"].get<bool>();
  write_report(opt, "attack-scale", records, {{"allExact", all_exact}},
               {{"totalSeconds", seconds_since(t0)}});
}

void cmd_fairness(const RunOptions& opt) {
  const auto t0 = Clock::now();
  const FairnessConfig fc = fairness_config(opt.config);
  const Splits data = load_splits(opt.config);
  if (!data.train.groups || !data.test.groups || !data.pristine.groups)
    throw DataError("fairness needs a group column in every split");
  const Fit base = train_erm(data.train, fc.loss(), fc.train);
  if (!base.converged)
    throw NumericalError("base model did not converge; final gradient norm " + std::to_string(base.grad_norm),
                         base.grad_norm);

  const auto grid = fairness_grid(opt.config["fairness"]["lambdas"].get<std::vector<double>>());
  FairnessReport report;
  report.rows = parallel_cells(grid.size(), opt.threads, [&](std::size_t i) {
    return fairness_row(base.model, data.train, data.test, data.pristine, grid[i], fc);
  });
  mark_success(report, fc.acc_budget);

  json records = json::array();
  Index successes = 0;
  for (const auto& r : report.rows) {
    successes += r.success;
    records.push_back({{"seed", opt.seed},
                       {"lambda", r.lambda},
                       {"baseAccuracy", r.base_accuracy},
                       {"lpStatus", r.lp_status},
                       {"lpObjective", r.lp_objective},
                       {"dpGap", r.dp_gap},
                       {"accuracy", r.accuracy},
                       {"rate0", r.rate0},
                       {"rate1", r.rate1},
                       {"success", r.success},
                       {"error", r.error}});
  }
  const DpReport honest = dp_report(base.model, data.pristine);
  write_report(opt, "fairness", records,
               {{"successRows", successes},
                {"referenceDpGap", report.rows.front().dp_gap},
                {"baseModelDpGap", honest.dp_gap},
                {"baseModelAccuracy", honest.accuracy},
                {"beta", fc.beta},
                {"gamma", fc.gamma},
                {"l2", fc.l2_reg}},
               {{"totalSeconds", seconds_since(t0)}});
}

void check_report(const json& report) {
  auto fail = [](const std::string& what) { throw DataError("inconsistent report: " + what); };
  if (!report.is_object() || !report.contains("command") || !report.contains("records"))
    fail("missing command or records");
  const std::string cmd = report["command"];
  const json& records = report["records"];
  try {
    if (cmd == "attack-target") {
      const double budget = report["config"]["attack"]["accBudget"];
      for (const auto& r : records) {
        const Index k = r["k"];
        if (r["best"]["success"].get<bool>() != (r["best"]["finalRank"].get<Index>() <= k))
          fail("best.success of target " + r["target"].dump());
        const bool b = r["budget"]["finalRank"].get<Index>() <= k && r["budget"]["deltaAcc"].get<double>() <= budget;
        if (r["budget"]["success"].get<bool>() != b) fail("budget.success of target " + r["target"].dump());
      }
    } else if (cmd == "attack-multi") {
      for (const auto& r : records) {
        const Index k = r["k"];
        Index hits = 0;
        for (Index f : r["finalRanks"]) hits += f <= k;
        const Index slots = std::min<Index>(k, r["size"].get<Index>());
        if (hits != r["hits"].get<Index>()) fail("hits");
        if (r["successRate"].get<double>() != static_cast<double>(hits) / static_cast<double>(slots))
          fail("successRate");
        if (r["success"].get<bool>() != (hits == slots)) fail("success");
      }
    } else if (cmd == "fairness") {
      const double budget = report["config"]["fairness"]["accBudget"];
      if (records.empty()) return;
      const json& ref = records.front();
      if (ref["success"].get<bool>()) fail("reference row marked successful");
      for (std::size_t i = 1; i < records.size(); ++i) {
        const json& r = records[i];
        const bool s = ref["error"].get<std::string>().empty() && r["error"].get<std::string>().empty() &&
                       r["dpGap"].get<double>() > ref["dpGap"].get<double>() &&
                       std::abs(r["accuracy"].get<double>() - ref["accuracy"].get<double>()) <= budget;
        if (r["success"].get<bool>() != s) fail("success of lambda " + r["lambda"].dump());
      }
    } else if (cmd == "attack-scale") {
      for (const auto& r : records) {
        const bool e = r["predictionsUnchanged"].get<bool>() &&
                       r["accuracy"].get<double>() == r["baseAccuracy"].get<double>();
        if (r["exact"].get<bool>() != e) fail("exact of lambda " + r["lambda"].dump());
      }
    }
  } catch (const json::exception& e) {
    fail(e.what());
  }
}

void cmd_report(const std::vector<fs::path>& reports, const fs::path& out) {
  std::map<double, std::vector<std::pair<double, double>>> attack;  // C -> (success, deltaAcc)
  std::string fairness = "lambda,dpGap,accuracy\n";
  for (const auto& path : reports) {
    json rep;
    try {
      rep = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + " is not valid JSON");
    }
    check_report(rep);
    const std::string cmd = rep["command"];
    for (const auto& r : rep["records"]) {
      if (cmd == "attack-target")
        attack[r["C"]].push_back({r["best"]["success"].get<bool>() ? 1.0 : 0.0, r["best"]["deltaAcc"]});
      else if (cmd == "attack-multi")
        attack[r["C"]].push_back({r["successRate"], r["deltaAcc"]});
      else if (cmd == "fairness" && r["error"].get<std::string>().empty())
        fairness += num(r["lambda"]) + "," + num(r["dpGap"]) + "," + num(r["accuracy"]) + "\n";
    }
  }
  std::string csv = "C,successRate,deltaAcc\n";
  for (const auto& [c, rows] : attack) {
    std::vector<double> s, d;
    for (auto [x, y] : rows) {
      s.push_back(x);
      d.push_back(y);
    }
    csv += num(c) + "," + num(mean(s)) + "," + num(mean(d)) + "\n";
  }
  fs::create_directories(out);
  write_file_atomic(out / "attack.csv", csv);
  write_file_atomic(out / "fairness.csv", fairness);
}

}  // namespace infattack::cli
