#pragma once

#include "uavxai/avoidance.hpp"
#include "uavxai/config.hpp"
#include "uavxai/d3qn.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace uavxai {

/// splitmix64 finalizer folded over the words; used to derive independent
/// RNG streams from (seed, cell, episode, ...).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);

/// UTC time as ISO-8601, the only nondeterministic field in any artifact.
std::string utc_timestamp();

struct EpisodeRecord {
  std::string profile;
  int intruders = 0;
  std::uint64_t seed = 0;
  int episode = 0;
  TerminalKind outcome = TerminalKind::non_terminal;
  int steps = 0;
  double reward = 0.0;
};

struct MetricsRow {
  std::string profile;
  int intruders = 0;
  int episodes = 0;
  double goal_rate = 0.0;
  double collision_rate = 0.0;
  double timeout_rate = 0.0;
  double mean_steps = 0.0;
  double mean_steps_goal = 0.0;  // NaN when no episode reached the goal
  double mean_return = 0.0;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;

  const MetricsRow* find(std::string_view profile, int intruders) const;
};

/// Groups by (profile, intruder count) across seeds. Rows follow
/// `profile_order` (names not listed go last, alphabetically), then
/// ascending intruder count. Sums run over sorted values so the table does
/// not depend on the input order.
MetricsTable aggregate(std::span<const EpisodeRecord> episodes,
                       std::span<const std::string> profile_order = {});

void write_metrics_csv(std::ostream& os, const MetricsTable& table);
void write_episodes_csv(std::ostream& os, std::span<const EpisodeRecord> episodes);

/// Encounter shared by every profile for (seed, M, episode).
Encounter cell_encounter(const ExperimentConfig& cfg, const Eigen::Vector2d& goal,
                         std::uint64_t seed, int intruders, int episode);

/// Inputs that stage 1 hands to the sweep for one seed.
struct SeedContext {
  std::uint64_t seed = 0;
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  std::map<std::string, QNetwork<>> dqn_nets;  // trained network per dqn profile
};

/// Flies cfg.eval_episodes episodes of one (profile, M, seed) cell.
std::vector<EpisodeRecord> run_cell(const ExperimentConfig& cfg, const PlannerProfile& profile,
                                    int intruders, const SeedContext& ctx,
                                    TraceWriter* trace = nullptr);

struct SweepOptions {
  std::optional<std::filesystem::path> trace_dir;  // traces/<profile>_M<m>_seed<s>.jsonl
  int jobs = 1;
  std::string config_hash;
};

/// Every (planner, M, seed) cell, in that order, run on up to `jobs`
/// threads. Output order and content do not depend on `jobs`.
std::vector<EpisodeRecord> run_sweep(const ExperimentConfig& cfg,
                                     std::span<const SeedContext> seeds,
                                     const SweepOptions& options);

std::string trace_file_name(std::string_view profile, int intruders, std::uint64_t seed);

/// Goal on the avoidance map for a trained service point.
Eigen::Vector2d goal_from_service(const ExperimentConfig& cfg, const UavPose& service_point);
std::string goal_hash(const Eigen::Vector2d& goal);

struct StageOne {
  std::uint64_t seed = 0;
  TrainingResult training;
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  std::string goal_hash;
};

struct PipelineResult {
  std::vector<StageOne> stage_one;
  std::vector<EpisodeRecord> episodes;
  MetricsTable metrics;
};

/// Stage 1 trains the service agent per seed and derives the goal; stage 2
/// sweeps the planners over the intruder counts. Writes under `out`:
///   run_manifest.json, metrics.csv, episodes.csv, traces/*.jsonl,
///   seed_<s>/{curve.csv, links.csv, qnet.bin, service.jsonl}.
/// `log` receives progress lines when non-null.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out,
                            int jobs = 1, std::ostream* log = nullptr);

}  // namespace uavxai
