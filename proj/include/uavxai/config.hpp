#pragma once

#include "uavxai/avoidance.hpp"
#include "uavxai/d3qn.hpp"
#include "uavxai/mcts.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace uavxai {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PlannerKind { tree, dqn, random };

std::string_view to_string(PlannerKind kind);
PlannerKind parse_planner_kind(std::string_view text);

struct PlannerProfile {
  std::string name;
  PlannerKind kind = PlannerKind::tree;
  SearchConfig search;   // tree only
  DqnAvoidConfig dqn;    // dqn only
};

/// Built-in profiles: tree-depth, tree-fast, dqn-avoid, random-avoid.
std::vector<PlannerProfile> default_profiles();

struct ExperimentConfig {
  std::string name = "default";
  std::vector<std::uint64_t> seeds{1, 2, 3};

  AgentKind agent = AgentKind::d3qn;
  ServiceScenario service;
  TrainingConfig training;

  AvoidanceScenario avoidance;
  EncounterConfig encounter;
  /// Added to the service (x, y) to place the goal on the avoidance map.
  /// Unset: the offset that centres the service area in the map.
  std::optional<Eigen::Vector2d> goal_offset;

  std::vector<PlannerProfile> profiles = default_profiles();
  std::vector<std::string> planners{"tree-depth", "tree-fast", "dqn-avoid", "random-avoid"};
  std::vector<int> intruders{5, 10, 15, 20, 25, 30};
  int eval_episodes = 100;
  bool write_traces = true;

  const PlannerProfile& profile(std::string_view name) const;
  Eigen::Vector2d resolved_goal_offset() const;
};

/// Throws ConfigError describing the first problem found.
void validate(const ExperimentConfig& cfg);

/// Missing keys keep their defaults; unknown keys are errors. The result is
/// validated.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Digest of the canonical JSON form.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace uavxai
