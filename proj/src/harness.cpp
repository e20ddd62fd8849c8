#include "uavxai/harness.hpp"

#include "uavxai/trace.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace uavxai {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Shortest round-trip form, so CSVs are exact and stable.
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure after all workers stop.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<long>(jobs, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::unique_ptr<AvoidancePolicy> make_policy(const ExperimentConfig& cfg,
                                             const PlannerProfile& profile,
                                             const SeedContext& ctx) {
  switch (profile.kind) {
    case PlannerKind::tree: return std::make_unique<TreePolicy>(cfg.avoidance, profile.search);
    case PlannerKind::random: return std::make_unique<RandomAvoidPolicy>();
    case PlannerKind::dqn: {
      const auto it = ctx.dqn_nets.find(profile.name);
      if (it == ctx.dqn_nets.end()) {
        throw std::invalid_argument("no trained network for profile '" + profile.name + "'");
      }
      return std::make_unique<DqnAvoidPolicy>(cfg.avoidance, it->second,
                                              profile.dqn.train_intruders);
    }
  }
  throw std::logic_error("unhandled planner kind");
}

double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

void write_text(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  body(os);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0;
  for (std::uint64_t w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  return mix_seed({seed, fnv1a(tag)});
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

const MetricsRow* MetricsTable::find(std::string_view profile, int intruders) const {
  for (const auto& r : rows) {
    if (r.profile == profile && r.intruders == intruders) return &r;
  }
  return nullptr;
}

MetricsTable aggregate(std::span<const EpisodeRecord> episodes,
                       std::span<const std::string> profile_order) {
  std::map<std::pair<std::string, int>, std::vector<const EpisodeRecord*>> groups;
  for (const auto& e : episodes) groups[{e.profile, e.intruders}].push_back(&e);

  MetricsTable table;
  for (const auto& [key, members] : groups) {
    MetricsRow row;
    row.profile = key.first;
    row.intruders = key.second;
    row.episodes = static_cast<int>(members.size());
    int goals = 0;
    int collisions = 0;
    int timeouts = 0;
    std::vector<double> steps;
    std::vector<double> goal_steps;
    std::vector<double> returns;
    for (const auto* e : members) {
      steps.push_back(e->steps);
      returns.push_back(e->reward);
      switch (e->outcome) {
        case TerminalKind::goal:
          ++goals;
          goal_steps.push_back(e->steps);
          break;
        case TerminalKind::collision: ++collisions; break;
        case TerminalKind::timeout: ++timeouts; break;
        case TerminalKind::non_terminal:
          throw std::invalid_argument("episode record without a terminal outcome");
      }
    }
    const double n = row.episodes;
    row.goal_rate = goals / n;
    row.collision_rate = collisions / n;
    row.timeout_rate = timeouts / n;
    row.mean_steps = sorted_sum(steps) / n;
    row.mean_steps_goal = goal_steps.empty()
                              ? std::numeric_limits<double>::quiet_NaN()
                              : sorted_sum(goal_steps) / static_cast<double>(goal_steps.size());
    row.mean_return = sorted_sum(returns) / n;
    table.rows.push_back(std::move(row));
  }

  auto rank = [&profile_order](const std::string& name) {
    const auto it = std::find(profile_order.begin(), profile_order.end(), name);
    return static_cast<std::size_t>(it - profile_order.begin());
  };
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [&rank](const MetricsRow& a, const MetricsRow& b) {
                     const auto ra = rank(a.profile);
                     const auto rb = rank(b.profile);
                     if (ra != rb) return ra < rb;
                     if (a.profile != b.profile) return a.profile < b.profile;
                     return a.intruders < b.intruders;
                   });
  return table;
}

void write_metrics_csv(std::ostream& os, const MetricsTable& table) {
  os << "profile,intruders,episodes,goal_rate,collision_rate,timeout_rate,mean_steps,"
        "mean_steps_goal,mean_return\n";
  for (const auto& r : table.rows) {
    os << r.profile << ',' << r.intruders << ',' << r.episodes << ',' << num(r.goal_rate) << ','
       << num(r.collision_rate) << ',' << num(r.timeout_rate) << ',' << num(r.mean_steps) << ','
       << num(r.mean_steps_goal) << ',' << num(r.mean_return) << '\n';
  }
}

void write_episodes_csv(std::ostream& os, std::span<const EpisodeRecord> episodes) {
  os << "profile,intruders,seed,episode,outcome,steps,reward\n";
  for (const auto& e : episodes) {
    os << e.profile << ',' << e.intruders << ',' << e.seed << ',' << e.episode << ','
       << to_string(e.outcome) << ',' << e.steps << ',' << num(e.reward) << '\n';
  }
}

// ---------------------------------------------------------------------------

Encounter cell_encounter(const ExperimentConfig& cfg, const Eigen::Vector2d& goal,
                         std::uint64_t seed, int intruders, int episode) {
  Rng rng(mix_seed({seed, static_cast<std::uint64_t>(intruders), static_cast<std::uint64_t>(episode),
                    fnv1a("encounter")}));
  return sample_encounter(cfg.avoidance, cfg.encounter, goal, intruders, rng);
}

std::vector<EpisodeRecord> run_cell(const ExperimentConfig& cfg, const PlannerProfile& profile,
                                    int intruders, const SeedContext& ctx, TraceWriter* trace) {
  auto policy = make_policy(cfg, profile, ctx);
  std::vector<EpisodeRecord> out;
  out.reserve(static_cast<std::size_t>(cfg.eval_episodes));
  for (int ep = 0; ep < cfg.eval_episodes; ++ep) {
    const Encounter enc = cell_encounter(cfg, ctx.goal, ctx.seed, intruders, ep);
    Rng rng(mix_seed({ctx.seed, static_cast<std::uint64_t>(intruders),
                      static_cast<std::uint64_t>(ep), fnv1a(profile.name)}));
    const EpisodeResult r =
        fly_episode(enc.start, ctx.goal, enc.intruders, cfg.avoidance, *policy, rng, trace, ep);
    out.push_back({profile.name, intruders, ctx.seed, ep, r.outcome, r.steps, r.reward});
  }
  return out;
}

std::string trace_file_name(std::string_view profile, int intruders, std::uint64_t seed) {
  return std::string(profile) + "_M" + std::to_string(intruders) + "_seed" + std::to_string(seed) +
         ".jsonl";
}

std::vector<EpisodeRecord> run_sweep(const ExperimentConfig& cfg,
                                     std::span<const SeedContext> seeds,
                                     const SweepOptions& options) {
  struct Cell {
    const PlannerProfile* profile;
    int intruders;
    const SeedContext* ctx;
  };
  std::vector<Cell> cells;
  for (const auto& name : cfg.planners) {
    const PlannerProfile& p = cfg.profile(name);
    for (int m : cfg.intruders) {
      for (const auto& ctx : seeds) cells.push_back({&p, m, &ctx});
    }
  }
  if (options.trace_dir) std::filesystem::create_directories(*options.trace_dir);

  std::vector<std::vector<EpisodeRecord>> results(cells.size());
  parallel_for(cells.size(), options.jobs, [&](std::size_t i) {
    const Cell& c = cells[i];
    std::optional<TraceWriter> writer;
    if (options.trace_dir) {
      TraceHeader h;
      h.run_id = cfg.name + "/" + c.profile->name + "/M" + std::to_string(c.intruders);
      h.seed = c.ctx->seed;
      h.config_hash = options.config_hash;
      h.timestamp = utc_timestamp();
      writer.emplace(*options.trace_dir / trace_file_name(c.profile->name, c.intruders, c.ctx->seed),
                     h);
    }
    results[i] = run_cell(cfg, *c.profile, c.intruders, *c.ctx, writer ? &*writer : nullptr);
  });

  std::vector<EpisodeRecord> all;
  for (auto& r : results) all.insert(all.end(), r.begin(), r.end());
  return all;
}

// ---------------------------------------------------------------------------

Eigen::Vector2d goal_from_service(const ExperimentConfig& cfg, const UavPose& service_point) {
  return Eigen::Vector2d(service_point.x, service_point.y) + cfg.resolved_goal_offset();
}

std::string goal_hash(const Eigen::Vector2d& goal) {
  const double xy[2] = {goal.x(), goal.y()};
  return digest_hex(xy, sizeof(xy));
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out,
                            int jobs, std::ostream* log) {
  validate(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(out);
  const std::string hash = config_hash(cfg);
  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    if (log == nullptr) return;
    std::lock_guard lock(log_mutex);
    *log << line << '\n' << std::flush;
  };

  PipelineResult result;
  result.stage_one.resize(cfg.seeds.size());
  std::vector<SeedContext> contexts(cfg.seeds.size());

  // Stage 1: service agent and goal per seed, then the learned avoidance
  // baselines against that goal.
  parallel_for(cfg.seeds.size(), jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const fs::path dir = out / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    TraceHeader h{cfg.name + "/service", seed, hash, kTraceSchemaVersion, utc_timestamp()};
    TraceWriter trace(dir / "service.jsonl", h);
    StageOne& s1 = result.stage_one[i];
    s1.seed = seed;
    s1.training = run_training(cfg.service, cfg.training, cfg.agent, seed, &trace);
    s1.goal = goal_from_service(cfg, s1.training.service_point);
    s1.goal_hash = goal_hash(s1.goal);
    write_text(dir / "curve.csv",
               [&](std::ostream& os) { write_curve_csv(os, s1.training.curve); });
    write_text(dir / "links.csv", [&](std::ostream& os) {
      write_link_csv_header(os);
      for (std::size_t t = 0; t < s1.training.greedy_links.size(); ++t) {
        write_link_csv(os, 0, static_cast<int>(t), s1.training.greedy_links[t]);
      }
    });
    if (s1.training.network) save_checkpoint(dir / "qnet.bin", *s1.training.network);
    say("seed " + std::to_string(seed) + ": service point (" + num(s1.training.service_point.x) +
        ", " + num(s1.training.service_point.y) + ", " + num(s1.training.service_point.h) +
        "), goal (" + num(s1.goal.x()) + ", " + num(s1.goal.y()) + ")");

    SeedContext& ctx = contexts[i];
    ctx.seed = seed;
    ctx.goal = s1.goal;
    for (const auto& name : cfg.planners) {
      const PlannerProfile& p = cfg.profile(name);
      if (p.kind != PlannerKind::dqn) continue;
      auto net = train_dqn_avoid(cfg.avoidance, cfg.encounter, ctx.goal, p.dqn,
                                 mix_seed(seed, p.name));
      save_checkpoint(dir / (p.name + ".bin"), net);
      ctx.dqn_nets.emplace(p.name, std::move(net));
      say("seed " + std::to_string(seed) + ": trained " + p.name);
    }
  });

  // Stage 2 must fly to exactly the goal stage 1 reported.
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    if (goal_hash(contexts[i].goal) != result.stage_one[i].goal_hash) {
      throw std::logic_error("stage 2 goal differs from the stage 1 service point");
    }
  }

  SweepOptions options;
  options.jobs = jobs;
  options.config_hash = hash;
  if (cfg.write_traces) options.trace_dir = out / "traces";
  say("sweeping " + std::to_string(cfg.planners.size() * cfg.intruders.size() * cfg.seeds.size()) +
      " cells");
  result.episodes = run_sweep(cfg, contexts, options);
  result.metrics = aggregate(result.episodes, cfg.planners);

  write_text(out / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, result.metrics); });
  write_text(out / "episodes.csv",
             [&](std::ostream& os) { write_episodes_csv(os, result.episodes); });

  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto& s1 = result.stage_one[i];
    const auto& sp = s1.training.service_point;
    seeds.push_back({{"seed", s1.seed},
                     {"service_point", {sp.x, sp.y, sp.h}},
                     {"greedy_return", s1.training.greedy_return},
                     {"goal", {s1.goal.x(), s1.goal.y()}},
                     {"stage1_goal_hash", s1.goal_hash},
                     {"stage2_goal_hash", goal_hash(contexts[i].goal)}});
  }
  const nlohmann::json manifest{
      {"name", cfg.name},
      {"config_hash", hash},
      {"config", to_json(cfg)},
      {"versions",
       {{"uavxai", "1.0.0"},
        {"trace_schema", kTraceSchemaVersion},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                      "." + std::to_string(EIGEN_MINOR_VERSION)}}},
      {"seeds", seeds},
      {"timestamp", utc_timestamp()},
  };
  write_text(out / "run_manifest.json", [&](std::ostream& os) { os << manifest.dump(2) << '\n'; });
  return result;
}

}  // namespace uavxai
