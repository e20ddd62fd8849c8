// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria 6-8 share one sweep written under --work.

#include "oracles.hpp"

#include "uavxai/avoidance.hpp"
#include "uavxai/channel.hpp"
#include "uavxai/config.hpp"
#include "uavxai/d3qn.hpp"
#include "uavxai/harness.hpp"
#include "uavxai/mcts.hpp"
#include "uavxai/trace.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace uavxai;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string without_header(const std::string& s) { return s.substr(s.find('\n') + 1); }

// ---------------------------------------------------------------------------

Outcome formulas() {
  std::vector<std::string> bad;
  auto need = [&bad](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  const double diag = std::sqrt(2.0) * 2000.0;
  need(estimate_value({5, 5}, {5, 5}, diag) == 1.0, "estimate at d=0");
  need(near(estimate_value({0, 0}, {2000, 2000}, diag), 0.0, 1e-15), "estimate at d=diag");
  need(terminal_reward(TerminalKind::goal) == 1.0, "goal reward");
  need(terminal_reward(TerminalKind::timeout) == 0.1, "timeout reward");
  need(terminal_reward(TerminalKind::collision) == 0.0, "collision reward");
  for (double r : {1.0, 3.7e6, 123.25}) {
    need(compute_reward(r, 0) == r, "lambda=0 identity");
    for (int l = 1; l < 10; ++l) need(compute_reward(r, l) == compute_reward(r, l - 1) / 2, "halving");
  }
  // Independent extended-precision evaluation of the UCT example.
  const long double uct_ref = 0.5L + 2.0L * std::sqrt(std::log(8.0L));
  const double uct = uct_score(0.5, 2, 8, 1.0);
  need(near(uct, static_cast<double>(uct_ref), 1e-9), "UCT example");
  need(std::isinf(uct_score(0.5, 0, 8, 1.0)), "UCT unvisited");

  // SINR/rate closed forms.
  ChannelParams p;
  Eigen::VectorXd g(2);
  g << p.noise_power / 0.5, p.noise_power / 0.25;
  PowerAllocation a;
  a.power = Eigen::Vector2d(0.5, 0.25);
  a.served = Eigen::Vector2i(1, 1);
  const auto rep = sinr_and_rates(g, a, p);
  const double rate_ref = p.bandwidth * std::log2(1.5);
  for (const auto& u : rep.users) {
    need(near(u.sinr, 0.5, 1e-12), "symmetric SINR");
    need(std::abs(u.rate - rate_ref) <= 1e-12 * rate_ref, "symmetric rate");
  }
  Eigen::VectorXd g1(1);
  g1 << 4e-9;
  PowerAllocation a1;
  a1.power = Eigen::VectorXd::Constant(1, 0.3);
  a1.served = Eigen::VectorXi::Ones(1);
  const double snr = 4e-9 * 0.3 / p.noise_power;
  const auto r1 = sinr_and_rates(g1, a1, p);
  need(std::abs(r1.users[0].sinr - snr) <= 1e-12 * snr, "single-user SNR");
  need(std::abs(r1.system_rate - p.bandwidth * std::log2(1 + snr)) <= 1e-12 * r1.system_rate,
       "single-user rate");

  if (bad.empty()) return {true, "UCT example " + fmt(uct, 16) + ", all closed forms within tolerance"};
  std::string msg = "mismatch:";
  for (const auto& b : bad) msg += " " + b + ";";
  return {false, msg};
}

Outcome gradient_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    QNetwork<> net(NetworkShape{3, {40, 40, 40}, FactorLayout{{7, 6, 6}}, true}, rng);
    const auto b = oracle::random_batch(net, 8, seed * 101);
    worst = std::max(worst, oracle::check_gradient(net, b.states, b.actions, b.targets).max_relative_error);
  }
  return {worst < 1e-4, "max relative error " + fmt(worst, 3) + " over 5 seeds"};
}

Outcome tabular_oracle() {
  const oracle::Chain chain;
  const auto q_star = oracle::chain_q_star(chain);
  double worst = 0.0;
  for (auto mode : {TargetMode::vanilla, TargetMode::double_q}) {
    const auto q = oracle::chain_tabular_q(chain, mode, 4000, 12);
    worst = std::max(worst, (q - q_star).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-6, "max |Q - Q*| " + fmt(worst, 3) + " (vanilla and double targets)"};
}

Outcome mcts_oracle() {
  std::uint64_t seed = 1;
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto tree = oracle::random_separated_tree(seed, 0.05);
    Rng rng(static_cast<std::uint64_t>(trial));
    const auto [action, snap] =
        plan_step(tree, {}, SearchConfig{10000, 3, 1.0 / std::sqrt(2.0)}, rng);
    agree += action == oracle::enumerate_best_action(tree);
  }
  return {agree == 100, std::to_string(agree) + "/100 trials match enumeration"};
}

// ---------------------------------------------------------------------------

struct AgentRun {
  double final_mean = 0.0;
  int reach = -1;
};

AgentRun summarize(const std::vector<CurvePoint>& curve) {
  AgentRun r;
  const std::size_t n = curve.size();
  const std::size_t tail = std::min<std::size_t>(50, n);
  for (std::size_t i = n - tail; i < n; ++i) r.final_mean += curve[i].episode_return;
  r.final_mean /= static_cast<double>(tail);
  const std::size_t window = 10;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += curve[i].episode_return;
    if (i >= window) sum -= curve[i - window].episode_return;
    if (i + 1 >= window && sum / window >= 0.9 * r.final_mean) {
      r.reach = static_cast<int>(i);
      break;
    }
  }
  return r;
}

Outcome convergence(const fs::path& work, std::vector<fs::path>& traces) {
  ServiceScenario sc;
  sc.users = 4;
  TrainingConfig tc;
  tc.episodes = 300;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  fs::create_directories(work / "convergence");
  std::map<AgentKind, std::vector<AgentRun>> runs;
  for (auto agent : {AgentKind::d3qn, AgentKind::dqn, AgentKind::random}) {
    for (auto seed : seeds) {
      const auto path = work / "convergence" /
                        (std::string(to_string(agent)) + "_seed" + std::to_string(seed) + ".jsonl");
      TraceWriter w(path, {"convergence/" + std::string(to_string(agent)), seed, "", kTraceSchemaVersion,
                           utc_timestamp()});
      const auto res = run_training(sc, tc, agent, seed, &w);
      traces.push_back(path);
      runs[agent].push_back(summarize(res.curve));
    }
  }
  auto mean = [&](AgentKind k) {
    double s = 0.0;
    for (const auto& r : runs[k]) s += r.final_mean;
    return s / static_cast<double>(runs[k].size());
  };
  const double d3 = mean(AgentKind::d3qn);
  const double dq = mean(AgentKind::dqn);
  const double rn = mean(AgentKind::random);
  int faster = 0;
  std::string reach = "reach90 (d3qn/dqn):";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto& a = runs[AgentKind::d3qn][i];
    const auto& b = runs[AgentKind::dqn][i];
    if (a.reach >= 0 && (b.reach < 0 || a.reach < b.reach)) ++faster;
    reach += " " + std::to_string(a.reach) + "/" + std::to_string(b.reach);
  }
  std::string per_seed = "final-50 per seed (d3qn/dqn):";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    per_seed += " " + fmt(runs[AgentKind::d3qn][i].final_mean) + "/" + fmt(runs[AgentKind::dqn][i].final_mean);
  }
  const bool ordered = d3 >= dq && dq >= rn;
  const bool pass = ordered && 3 * faster >= 2 * static_cast<int>(seeds.size());
  return {pass, "final-50 mean d3qn " + fmt(d3) + ", dqn " + fmt(dq) + ", random " + fmt(rn) + "; " +
                    per_seed + "; " + reach + "; d3qn faster in " + std::to_string(faster) + "/3"};
}

ExperimentConfig sweep_config() {
  ExperimentConfig cfg;
  cfg.name = "acceptance";
  cfg.seeds = {1, 2, 3};
  cfg.service.users = 4;
  cfg.training.episodes = 300;
  cfg.intruders = {5, 15, 30};
  cfg.eval_episodes = 100;
  return cfg;
}

Outcome avoidance_ordering(const PipelineResult& res, const ExperimentConfig& cfg) {
  const auto& t = res.metrics;
  std::vector<std::string> bad;
  std::string table;
  const std::vector<std::string> order{"tree-depth", "tree-fast", "dqn-avoid", "random-avoid"};
  for (int m : cfg.intruders) {
    std::vector<const MetricsRow*> rows;
    for (const auto& name : order) rows.push_back(t.find(name, m));
    for (const auto* r : rows) {
      if (r == nullptr) return {false, "missing metrics row at M=" + std::to_string(m)};
    }
    table += " M=" + std::to_string(m) + " goal";
    for (const auto* r : rows) table += " " + fmt(r->goal_rate, 3);
    table += " coll " + fmt(rows[0]->collision_rate, 3) + "/" + fmt(rows[2]->collision_rate, 3) + ";";
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
      if (rows[i]->goal_rate < rows[i + 1]->goal_rate - 0.05) {
        bad.push_back(order[i] + " < " + order[i + 1] + " at M=" + std::to_string(m));
      }
    }
    if (rows[0]->collision_rate > rows[2]->collision_rate) {
      bad.push_back("tree-depth collides more than dqn-avoid at M=" + std::to_string(m));
    }
  }
  const auto* m5 = t.find("tree-depth", 5);
  if (m5 == nullptr || m5->goal_rate < 0.85) bad.push_back("tree-depth goal rate at M=5 below 0.85");
  std::string detail = "goal rates (depth fast dqn random), collision (depth/dqn):" + table;
  for (const auto& b : bad) detail += " VIOLATION " + b + ";";
  return {bad.empty(), detail};
}

Outcome trace_faithfulness(const std::vector<fs::path>& traces, const fs::path& work) {
  std::size_t records = 0;
  for (const auto& p : traces) {
    const auto rep = validate_file(p);
    if (!rep.ok()) {
      const std::string why = rep.violations.empty() ? "partial trace" : rep.violations.front().message;
      return {false, p.filename().string() + " fails validation: " + why};
    }
    records += rep.records;
  }

  // Flip one visit count in a tree trace and expect the validator to object.
  const fs::path* source = nullptr;
  for (const auto& p : traces) {
    if (p.filename().string().rfind("tree-depth_", 0) == 0) {
      source = &p;
      break;
    }
  }
  if (source == nullptr) return {false, "no tree-depth trace to corrupt"};
  std::ifstream in(*source);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  if (lines.size() < 2) return {false, "tree-depth trace has no records"};
  auto rec = nlohmann::json::parse(lines[1]);
  auto& alt = rec["factors"][0]["alternatives"][0];
  alt["visits"] = alt["visits"].get<int>() + 1;
  alt["score"] = alt["visits"];
  lines[1] = rec.dump();
  const auto corrupted = work / "corrupted.jsonl";
  {
    std::ofstream out(corrupted, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
  }
  const auto rep = validate_file(corrupted);
  const bool caught = !rep.ok() && !rep.violations.empty() && rep.violations.front().line == 2;
  return {caught, std::to_string(traces.size()) + " traces (" + std::to_string(records) +
                      " records) valid; flipped visit count " +
                      (caught ? "detected at line 2" : "NOT detected")};
}

Outcome determinism(const ExperimentConfig& base, const PipelineResult& res, const fs::path& sweep_dir,
                    const fs::path& work, int jobs) {
  ExperimentConfig cfg = base;
  cfg.intruders = {*std::min_element(base.intruders.begin(), base.intruders.end())};
  std::vector<SeedContext> seeds;
  for (const auto& s1 : res.stage_one) {
    SeedContext ctx{s1.seed, s1.goal, {}};
    for (const auto& p : cfg.profiles) {
      if (p.kind != PlannerKind::dqn) continue;
      ctx.dqn_nets.emplace(p.name, load_checkpoint(sweep_dir / ("seed_" + std::to_string(s1.seed)) /
                                                   (p.name + ".bin")));
    }
    seeds.push_back(std::move(ctx));
  }
  std::vector<std::string> metrics;
  std::vector<fs::path> dirs;
  for (int run = 0; run < 2; ++run) {
    const auto dir = work / ("determinism_" + std::to_string(run));
    fs::remove_all(dir);
    SweepOptions opt;
    opt.trace_dir = dir;
    opt.jobs = jobs;
    opt.config_hash = config_hash(cfg);
    const auto eps = run_sweep(cfg, seeds, opt);
    std::ostringstream os;
    write_metrics_csv(os, aggregate(eps, cfg.planners));
    metrics.push_back(os.str());
    dirs.push_back(dir);
  }
  if (metrics[0] != metrics[1]) return {false, "metrics differ between runs"};
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const auto other = dirs[1] / entry.path().filename();
    if (!fs::exists(other)) return {false, "trace missing in second run: " + other.filename().string()};
    if (without_header(slurp(entry.path())) != without_header(slurp(other))) {
      return {false, "trace differs: " + entry.path().filename().string()};
    }
    ++compared;
  }
  // The pipeline's own run of the same cells must agree too.
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const auto original = sweep_dir / "traces" / entry.path().filename();
    if (without_header(slurp(entry.path())) != without_header(slurp(original))) {
      return {false, "rerun differs from the sweep: " + entry.path().filename().string()};
    }
  }
  return {compared > 0, "M=" + std::to_string(cfg.intruders.front()) + ": metrics and " +
                            std::to_string(compared) + " traces byte-identical across two reruns and the sweep"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work_dir = "acceptance_work";
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<int> only;
  app.add_option("--work", work_dir, "Scratch directory for runs and traces");
  app.add_option("--jobs", jobs, "Worker threads for the sweep");
  app.add_option("--only", only, "Run only these criteria (6-8 always run together)");
  CLI11_PARSE(app, argc, argv);

  const fs::path work(work_dir);
  fs::create_directories(work);
  auto wanted = [&only](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  int failures = 0;
  auto report = [&failures](int id, const std::string& name, const Outcome& o, double seconds) {
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << ", "
              << fmt(seconds, 3) << " s): " << o.detail << std::endl;
  };
  auto timed = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };

  std::vector<fs::path> traces;
  timed(1, "formula exactness", formulas);
  timed(2, "gradient oracle", gradient_oracle);
  timed(3, "tabular Q oracle", tabular_oracle);
  timed(4, "MCTS enumeration oracle", mcts_oracle);
  timed(5, "convergence ordering", [&] { return convergence(work, traces); });

  if (wanted(6) || wanted(7) || wanted(8)) {
    const auto cfg = sweep_config();
    const auto sweep_dir = work / "sweep";
    fs::remove_all(sweep_dir);
    PipelineResult res;
    std::string error;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      res = run_pipeline(cfg, sweep_dir, jobs, &std::clog);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double sweep_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!error.empty()) {
      for (int c : {6, 7, 8}) report(c, "sweep", {false, "pipeline failed: " + error}, sweep_s);
    } else {
      report(6, "avoidance ordering", avoidance_ordering(res, cfg), sweep_s);
      for (const auto& s1 : res.stage_one) {
        traces.push_back(sweep_dir / ("seed_" + std::to_string(s1.seed)) / "service.jsonl");
      }
      for (const auto& entry : fs::directory_iterator(sweep_dir / "traces")) traces.push_back(entry.path());
      std::sort(traces.begin(), traces.end());
      timed(7, "trace faithfulness", [&] { return trace_faithfulness(traces, work); });
      timed(8, "determinism", [&] { return determinism(cfg, res, sweep_dir, work, jobs); });
    }
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
