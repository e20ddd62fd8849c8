// Command-line front end: train, plan, sweep, explain, validate.

#include "uavxai/config.hpp"
#include "uavxai/harness.hpp"
#include "uavxai/trace.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace uavxai;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int jobs = 1;
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  validate(cfg);
  return cfg;
}

std::optional<Phase> parse_phase_flag(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "service") return Phase::service;
  if (s == "avoidance") return Phase::avoidance;
  throw CLI::ValidationError("--phase", "expected 'service' or 'avoidance'");
}

void print(const Explanation& e, bool as_json) {
  if (as_json) {
    std::cout << e.data.dump(2) << '\n';
  } else {
    std::cout << e.text;
    if (!e.text.empty() && e.text.back() != '\n') std::cout << '\n';
  }
}

int report_validation(const std::string& path, bool as_json) {
  const ValidationReport r = validate_file(path);
  if (as_json) {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& x : r.violations) {
      v.push_back({{"line", x.line}, {"episode", x.episode}, {"step", x.step}, {"message", x.message}});
    }
    std::cout << nlohmann::json{{"records", r.records}, {"partial", r.partial}, {"ok", r.ok()},
                                {"violations", v}}
                     .dump(2)
              << '\n';
  } else {
    std::cout << path << ": " << r.records << " records";
    if (r.partial) std::cout << ", truncated final record";
    std::cout << ", " << r.violations.size() << " violation(s)\n";
    for (const auto& x : r.violations) {
      std::cout << "  line " << x.line << " episode " << x.episode << " step " << x.step << ": "
                << x.message << '\n';
    }
    std::cout << (r.ok() ? "OK" : "FAILED") << '\n';
  }
  return r.ok() ? 0 : 1;
}

int cmd_train(const Globals& g, const std::string& agent, std::optional<int> episodes) {
  ExperimentConfig cfg = load(g);
  cfg.agent = parse_agent_kind(agent);
  if (episodes) cfg.training.episodes = *episodes;
  validate(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  const fs::path out(g.out);
  fs::create_directories(out);

  TraceHeader h{cfg.name + "/service", seed, config_hash(cfg), kTraceSchemaVersion, utc_timestamp()};
  TraceWriter trace(out / "service.jsonl", h);
  const TrainingResult r = run_training(cfg.service, cfg.training, cfg.agent, seed, &trace);

  std::ofstream curve(out / "curve.csv");
  write_curve_csv(curve, r.curve);
  std::ofstream links(out / "links.csv");
  write_link_csv_header(links);
  for (std::size_t t = 0; t < r.greedy_links.size(); ++t) {
    write_link_csv(links, 0, static_cast<int>(t), r.greedy_links[t]);
  }
  if (r.network) save_checkpoint(out / "qnet.bin", *r.network);

  const Eigen::Vector2d goal = goal_from_service(cfg, r.service_point);
  std::cout << "agent " << to_string(cfg.agent) << ", seed " << seed << ", " << r.curve.size()
            << " episodes\n"
            << "greedy return " << r.greedy_return << "\n"
            << "service point (" << r.service_point.x << ", " << r.service_point.y << ", "
            << r.service_point.h << ")\n"
            << "planning goal (" << goal.x() << ", " << goal.y() << ")\n"
            << "wrote " << out.string() << "/{curve.csv,links.csv,service.jsonl"
            << (r.network ? ",qnet.bin" : "") << "}\n";
  return 0;
}

int cmd_plan(const Globals& g, const std::string& profile_name, int intruders,
             std::optional<int> episodes, const std::vector<double>& goal_xy) {
  ExperimentConfig cfg = load(g);
  if (episodes) cfg.eval_episodes = *episodes;
  const PlannerProfile& profile = cfg.profile(profile_name);
  cfg.planners = {profile.name};
  cfg.intruders = {intruders};
  validate(cfg);

  SeedContext ctx;
  ctx.seed = cfg.seeds.front();
  if (goal_xy.size() == 2) {
    ctx.goal = {goal_xy[0], goal_xy[1]};
  } else {
    const auto& a = cfg.service.area;
    ctx.goal = goal_from_service(cfg, {(a.x_min + a.x_max) / 2.0, (a.y_min + a.y_max) / 2.0, 0.0});
  }
  if (!cfg.avoidance.map.contains(ctx.goal.x(), ctx.goal.y())) {
    throw CLI::ValidationError("--goal", "goal lies outside the avoidance map");
  }
  if (profile.kind == PlannerKind::dqn) {
    std::cerr << "training " << profile.name << " (" << profile.dqn.episodes << " episodes)\n";
    ctx.dqn_nets.emplace(profile.name, train_dqn_avoid(cfg.avoidance, cfg.encounter, ctx.goal,
                                                       profile.dqn, mix_seed(ctx.seed, profile.name)));
  }

  const fs::path out(g.out);
  SweepOptions opt;
  opt.jobs = g.jobs;
  opt.config_hash = config_hash(cfg);
  if (cfg.write_traces) opt.trace_dir = out / "traces";
  fs::create_directories(out);
  const std::vector<SeedContext> seeds{ctx};
  const auto records = run_sweep(cfg, seeds, opt);
  const MetricsTable table = aggregate(records, cfg.planners);
  {
    std::ofstream os(out / "episodes.csv");
    write_episodes_csv(os, records);
    std::ofstream ms(out / "metrics.csv");
    write_metrics_csv(ms, table);
  }
  write_metrics_csv(std::cout, table);
  return 0;
}

int cmd_sweep(const Globals& g) {
  const ExperimentConfig cfg = load(g);
  const PipelineResult r = run_pipeline(cfg, g.out, g.jobs, &std::cerr);
  write_metrics_csv(std::cout, r.metrics);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV service placement, collision-avoidance planning and decision traces"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seeds with one seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  auto* train = app.add_subcommand("train", "Train the service agent and extract the goal");
  std::string agent = "d3qn";
  std::optional<int> train_episodes;
  train->add_option("--agent", agent, "d3qn, dqn or random")
      ->check(CLI::IsMember({"d3qn", "dqn", "random"}))
      ->capture_default_str();
  train->add_option("--episodes", train_episodes, "Override training episodes")
      ->check(CLI::PositiveNumber);

  auto* plan = app.add_subcommand("plan", "Fly evaluation episodes with one planner profile");
  std::string profile = "tree-depth";
  int intruders = 10;
  std::optional<int> plan_episodes;
  std::vector<double> goal_xy;
  plan->add_option("--profile", profile, "Planner profile name")->capture_default_str();
  plan->add_option("--intruders", intruders, "Intruder count")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  plan->add_option("--episodes", plan_episodes, "Episodes to fly")->check(CLI::PositiveNumber);
  plan->add_option("--goal", goal_xy, "Goal x y (default: centre of the shifted service area)")
      ->expected(2);

  auto* sweep = app.add_subcommand("sweep", "Run the two-stage pipeline over the config's grid");

  auto* show_config = app.add_subcommand("config", "Print the resolved config as JSON");

  auto* explain = app.add_subcommand("explain", "Query a decision trace");
  explain->require_subcommand(1);
  std::string trace_path;
  int episode = 0;
  int step = 0;
  std::string action;
  std::string phase;
  bool as_json = false;
  auto add_trace = [&](CLI::App* sub) {
    sub->add_option("--trace", trace_path, "Trace file")->required()->check(CLI::ExistingFile);
    sub->add_flag("--json", as_json, "Structured output");
  };
  auto add_key = [&](CLI::App* sub) {
    sub->add_option("--step", step, "Step index")->required();
    sub->add_option("--episode", episode, "Episode index")->capture_default_str();
    sub->add_option("--phase", phase, "service or avoidance");
  };
  auto* why = explain->add_subcommand("why", "Score breakdown of the chosen action");
  add_trace(why);
  add_key(why);
  auto* why_not = explain->add_subcommand("why-not", "Score deficit of an alternative");
  add_trace(why_not);
  add_key(why_not);
  why_not->add_option("--action", action, "Label, factor:label, factor:index or index")->required();
  auto* path = explain->add_subcommand("path", "Decision sequence of one episode");
  add_trace(path);
  path->add_option("--episode", episode, "Episode index")->required();
  path->add_option("--phase", phase, "service or avoidance");
  auto* summary = explain->add_subcommand("summary", "Outcome counts and mean margins");
  add_trace(summary);
  auto* explain_validate = explain->add_subcommand("validate", "Re-check every record");
  add_trace(explain_validate);

  auto* validate_cmd = app.add_subcommand("validate", "Re-check every record of a trace");
  add_trace(validate_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(g, agent, train_episodes);
    if (*plan) return cmd_plan(g, profile, intruders, plan_episodes, goal_xy);
    if (*sweep) return cmd_sweep(g);
    if (*show_config) {
      std::cout << to_json(load(g)).dump(2) << '\n';
      return 0;
    }
    if (*validate_cmd || *explain_validate) return report_validation(trace_path, as_json);
    const TraceContents trace = read_trace(trace_path);
    const RecordKey key{episode, step, parse_phase_flag(phase)};
    if (*why) print(explain_why(trace, key), as_json);
    if (*why_not) print(explain_why_not(trace, key, action), as_json);
    if (*path) print(explain_path(trace, episode, parse_phase_flag(phase)), as_json);
    if (*summary) print(explain_summary(trace), as_json);
    return 0;
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const TraceQueryError& e) {
    std::cerr << "not found: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
