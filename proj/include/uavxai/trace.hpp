#pragma once

#include "uavxai/world.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace uavxai {

inline constexpr int kTraceSchemaVersion = 1;

enum class Phase { service, avoidance };
enum class SelectionRule { greedy_q, visit_count, random };

std::string_view to_string(Phase phase);
std::string_view to_string(SelectionRule rule);

/// One scored alternative inside a factor. `score` is what the selection
/// rule maximizes (Q for greedy_q, n_j for visit_count). The optional
/// fields carry the decomposition behind the score.
struct Alternative {
  int action = 0;
  std::string label;
  double score = 0.0;

  std::optional<double> value;
  std::optional<double> advantage;
  std::optional<double> q;

  std::optional<int> visits;
  std::optional<double> mean_value;
  std::optional<double> exploration;
  std::optional<double> uct;
};

struct FactorDecision {
  std::string name;
  int chosen = 0;
  std::vector<Alternative> alternatives;

  const Alternative* find(int action) const;
};

struct DecisionRecord {
  int episode = 0;
  int step = 0;
  Phase phase = Phase::avoidance;
  std::string observation_digest;
  SelectionRule rule = SelectionRule::visit_count;
  bool explored = false;
  bool dueling = false;
  std::optional<int> simulations;
  std::optional<double> exploration_constant;
  std::vector<FactorDecision> factors;
  std::optional<TerminalKind> verdict;
  std::optional<double> terminal_reward;
};

struct TraceHeader {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string config_hash;
  int schema_version = kTraceSchemaVersion;
  std::string timestamp;
};

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const DecisionRecord& rec);
DecisionRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TraceHeader& header);
TraceHeader header_from_json(const nlohmann::json& j);

/// Problems with a record considered on its own; empty when the record is
/// well formed and its chosen actions are faithful to the stored scores.
std::vector<std::string> check_record(const DecisionRecord& rec);

/// 64-bit FNV-1a digest rendered as 16 hex characters.
std::string digest_hex(const void* data, std::size_t bytes);
std::string digest_hex(std::string_view text);

/// Append-only JSON-lines writer. The header is the first line; every
/// record is flushed as soon as it is written.
class TraceWriter {
 public:
  TraceWriter(const std::filesystem::path& path, TraceHeader header);

  void record(const DecisionRecord& rec);
  std::size_t records() const { return count_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t count_ = 0;
  std::map<std::pair<int, Phase>, int> last_step_;
};

struct TraceContents {
  TraceHeader header;
  std::vector<DecisionRecord> records;
  std::vector<int> record_lines;  // 1-based source line of each record
  bool partial = false;           // last line was cut short
  int partial_line = 0;
  std::vector<std::pair<int, std::string>> malformed;  // line, reason
};

/// Reads a trace, tolerating a truncated final line. Throws TraceError if
/// the file cannot be opened or has no readable header.
TraceContents read_trace(const std::filesystem::path& path);

struct Violation {
  int line = 0;
  int episode = -1;
  int step = -1;
  std::string message;
};

struct ValidationReport {
  std::size_t records = 0;
  bool partial = false;
  std::vector<Violation> violations;

  bool ok() const { return violations.empty() && !partial; }
};

ValidationReport validate(const TraceContents& trace);
ValidationReport validate_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Queries

class TraceQueryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Explanation {
  std::string text;
  nlohmann::json data;
};

struct RecordKey {
  int episode = 0;
  int step = 0;
  std::optional<Phase> phase;  // unset: avoidance if present, else service
};

Explanation explain_why(const TraceContents& trace, const RecordKey& key);

/// `action` is a label ("left+speed_up", "ascend"), "factor:index", or a
/// bare index into the first factor.
Explanation explain_why_not(const TraceContents& trace, const RecordKey& key,
                            const std::string& action);

Explanation explain_path(const TraceContents& trace, int episode,
                         std::optional<Phase> phase = std::nullopt);

Explanation explain_summary(const TraceContents& trace);

/// Chosen score minus the best other score; zero with a single alternative.
double selection_margin(const FactorDecision& factor);

}  // namespace uavxai
