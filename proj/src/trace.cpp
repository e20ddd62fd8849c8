#include "uavxai/trace.hpp"

#include "uavxai/avoidance.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

namespace uavxai {

using nlohmann::json;

std::string_view to_string(Phase phase) {
  return phase == Phase::service ? "service" : "avoidance";
}

std::string_view to_string(SelectionRule rule) {
  switch (rule) {
    case SelectionRule::greedy_q: return "greedy_q";
    case SelectionRule::visit_count: return "visit_count";
    case SelectionRule::random: return "random";
  }
  return "?";
}

namespace {

Phase parse_phase(const std::string& s) {
  if (s == "service") return Phase::service;
  if (s == "avoidance") return Phase::avoidance;
  throw TraceError("unknown phase '" + s + "'");
}

SelectionRule parse_rule(const std::string& s) {
  for (auto r : {SelectionRule::greedy_q, SelectionRule::visit_count, SelectionRule::random}) {
    if (to_string(r) == s) return r;
  }
  throw TraceError("unknown selection rule '" + s + "'");
}

template <typename T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
std::optional<T> take(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

bool close(double a, double b, double tol = 1e-9) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

const Alternative* FactorDecision::find(int action) const {
  for (const auto& alt : alternatives) {
    if (alt.action == action) return &alt;
  }
  return nullptr;
}

json to_json(const DecisionRecord& rec) {
  json j;
  j["type"] = "decision";
  j["episode"] = rec.episode;
  j["step"] = rec.step;
  j["phase"] = to_string(rec.phase);
  j["obs"] = rec.observation_digest;
  j["rule"] = to_string(rec.rule);
  j["explored"] = rec.explored;
  j["dueling"] = rec.dueling;
  put(j, "simulations", rec.simulations);
  put(j, "c", rec.exploration_constant);
  json factors = json::array();
  for (const auto& f : rec.factors) {
    json fj;
    fj["name"] = f.name;
    fj["chosen"] = f.chosen;
    json alts = json::array();
    for (const auto& a : f.alternatives) {
      json aj;
      aj["action"] = a.action;
      aj["label"] = a.label;
      aj["score"] = a.score;
      put(aj, "v", a.value);
      put(aj, "adv", a.advantage);
      put(aj, "q", a.q);
      put(aj, "visits", a.visits);
      put(aj, "mean", a.mean_value);
      put(aj, "exploration", a.exploration);
      put(aj, "uct", a.uct);
      alts.push_back(std::move(aj));
    }
    fj["alternatives"] = std::move(alts);
    factors.push_back(std::move(fj));
  }
  j["factors"] = std::move(factors);
  if (rec.verdict) j["verdict"] = to_string(*rec.verdict);
  put(j, "terminal_reward", rec.terminal_reward);
  return j;
}

DecisionRecord record_from_json(const json& j) {
  try {
    DecisionRecord rec;
    rec.episode = j.at("episode").get<int>();
    rec.step = j.at("step").get<int>();
    rec.phase = parse_phase(j.at("phase").get<std::string>());
    rec.observation_digest = j.at("obs").get<std::string>();
    rec.rule = parse_rule(j.at("rule").get<std::string>());
    rec.explored = j.at("explored").get<bool>();
    rec.dueling = j.value("dueling", false);
    rec.simulations = take<int>(j, "simulations");
    rec.exploration_constant = take<double>(j, "c");
    for (const auto& fj : j.at("factors")) {
      FactorDecision f;
      f.name = fj.at("name").get<std::string>();
      f.chosen = fj.at("chosen").get<int>();
      for (const auto& aj : fj.at("alternatives")) {
        Alternative a;
        a.action = aj.at("action").get<int>();
        a.label = aj.at("label").get<std::string>();
        a.score = aj.at("score").get<double>();
        a.value = take<double>(aj, "v");
        a.advantage = take<double>(aj, "adv");
        a.q = take<double>(aj, "q");
        a.visits = take<int>(aj, "visits");
        a.mean_value = take<double>(aj, "mean");
        a.exploration = take<double>(aj, "exploration");
        a.uct = take<double>(aj, "uct");
        f.alternatives.push_back(std::move(a));
      }
      rec.factors.push_back(std::move(f));
    }
    if (auto v = take<std::string>(j, "verdict")) rec.verdict = parse_terminal_kind(*v);
    rec.terminal_reward = take<double>(j, "terminal_reward");
    return rec;
  } catch (const json::exception& e) {
    throw TraceError(std::string("malformed record: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw TraceError(std::string("malformed record: ") + e.what());
  }
}

json to_json(const TraceHeader& header) {
  return json{{"type", "header"},
              {"schema_version", header.schema_version},
              {"run_id", header.run_id},
              {"seed", header.seed},
              {"config_hash", header.config_hash},
              {"timestamp", header.timestamp}};
}

TraceHeader header_from_json(const json& j) {
  if (j.value("type", "") != "header") throw TraceError("first line is not a trace header");
  TraceHeader h;
  h.schema_version = j.at("schema_version").get<int>();
  h.run_id = j.value("run_id", "");
  h.seed = j.value("seed", std::uint64_t{0});
  h.config_hash = j.value("config_hash", "");
  h.timestamp = j.value("timestamp", "");
  return h;
}

std::vector<std::string> check_record(const DecisionRecord& rec) {
  std::vector<std::string> out;
  auto fail = [&out](std::string msg) { out.push_back(std::move(msg)); };

  if (rec.factors.empty()) fail("record has no factors");
  if (rec.rule == SelectionRule::random && !rec.explored) {
    fail("random selection must be flagged explored");
  }
  if (rec.phase == Phase::avoidance && rec.factors.size() > 1) {
    fail("avoidance decisions have a single factor");
  }

  for (const auto& f : rec.factors) {
    const std::string where = "factor '" + f.name + "': ";
    if (f.alternatives.empty()) {
      fail(where + "no alternatives");
      continue;
    }
    std::set<int> ids;
    for (const auto& a : f.alternatives) {
      if (!ids.insert(a.action).second) fail(where + "duplicate action " + std::to_string(a.action));
    }
    const Alternative* chosen = f.find(f.chosen);
    if (chosen == nullptr) {
      fail(where + "chosen action " + std::to_string(f.chosen) + " not among alternatives");
      continue;
    }

    if (rec.rule == SelectionRule::greedy_q) {
      double adv_mean = 0.0;
      double q_mean = 0.0;
      for (const auto& a : f.alternatives) {
        if (!a.q) {
          fail(where + "alternative " + std::to_string(a.action) + " lacks q");
          continue;
        }
        if (a.score != *a.q) fail(where + "score differs from q for " + a.label);
        q_mean += *a.q;
        if (rec.dueling) {
          if (!a.value || !a.advantage) {
            fail(where + "dueling alternative " + a.label + " lacks value/advantage");
            continue;
          }
          adv_mean += *a.advantage;
        }
      }
      const double n = static_cast<double>(f.alternatives.size());
      if (rec.dueling && f.alternatives.front().value) {
        adv_mean /= n;
        q_mean /= n;
        const double v = *f.alternatives.front().value;
        if (!close(q_mean, v)) fail(where + "mean Q does not equal V");
        for (const auto& a : f.alternatives) {
          if (a.q && a.value && a.advantage && !close(*a.q, *a.value + *a.advantage - adv_mean)) {
            fail(where + "Q != V + A - mean(A) for " + a.label);
          }
        }
      }
      if (!rec.explored) {
        for (const auto& a : f.alternatives) {
          if (a.score > chosen->score) {
            fail(where + "chosen " + chosen->label + " is not the greedy maximum (" + a.label +
                 " scores higher)");
            break;
          }
        }
      }
    }

    if (rec.rule == SelectionRule::visit_count) {
      if (!rec.simulations || !rec.exploration_constant) {
        fail("visit-count record lacks simulations or exploration constant");
        continue;
      }
      const int n = *rec.simulations;
      const double c = *rec.exploration_constant;
      long total = 0;
      for (const auto& a : f.alternatives) {
        if (!a.visits) {
          fail(where + "alternative " + a.label + " lacks visits");
          continue;
        }
        total += *a.visits;
        if (a.score != static_cast<double>(*a.visits)) fail(where + "score differs from visits for " + a.label);
        if (*a.visits < 0) fail(where + "negative visit count for " + a.label);
        if (*a.visits > 0) {
          if (!a.mean_value || !a.exploration || !a.uct) {
            fail(where + "visited child " + a.label + " lacks statistics");
            continue;
          }
          if (*a.mean_value < 0.0 || *a.mean_value > 1.0) fail(where + "mean value out of [0,1] for " + a.label);
          const double expected = exploration_term(*a.visits, n, c);
          if (!close(*a.exploration, expected)) fail(where + "exploration term mismatch for " + a.label);
          if (!close(*a.uct, *a.mean_value + *a.exploration)) fail(where + "UCT mismatch for " + a.label);
        }
      }
      if (total != n) {
        fail(where + "visit counts sum to " + std::to_string(total) + " but simulations = " +
             std::to_string(n));
      }
      if (!rec.explored && chosen->visits) {
        for (const auto& a : f.alternatives) {
          if (a.visits && *a.visits > *chosen->visits) {
            fail(where + "chosen " + chosen->label + " is not the most visited child (" + a.label +
                 " has more visits)");
            break;
          }
        }
      }
    }
  }

  if (rec.verdict) {
    if (*rec.verdict == TerminalKind::non_terminal) fail("verdict must be terminal");
    if (rec.phase == Phase::avoidance && *rec.verdict != TerminalKind::non_terminal) {
      if (!rec.terminal_reward) {
        fail("terminal record lacks terminal reward");
      } else if (*rec.terminal_reward != terminal_reward(*rec.verdict)) {
        fail("terminal reward does not match the verdict");
      }
    }
  }
  return out;
}

std::string digest_hex(const void* data, std::size_t bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string digest_hex(std::string_view text) { return digest_hex(text.data(), text.size()); }

// ---------------------------------------------------------------------------

TraceWriter::TraceWriter(const std::filesystem::path& path, TraceHeader header)
    : path_(path), out_(path, std::ios::out | std::ios::trunc) {
  if (!out_) throw TraceError("cannot open trace file " + path.string());
  out_ << to_json(header).dump() << '\n';
  out_.flush();
}

void TraceWriter::record(const DecisionRecord& rec) {
  auto problems = check_record(rec);
  const auto key = std::make_pair(rec.episode, rec.phase);
  if (auto it = last_step_.find(key); it != last_step_.end() && rec.step <= it->second) {
    problems.push_back("step " + std::to_string(rec.step) + " does not follow step " +
                       std::to_string(it->second));
  }
  if (!problems.empty()) {
    std::string msg = "rejected record (episode " + std::to_string(rec.episode) + ", step " +
                      std::to_string(rec.step) + "):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw TraceError(msg);
  }
  last_step_[key] = rec.step;
  out_ << to_json(rec).dump() << '\n';
  out_.flush();
  ++count_;
}

TraceContents read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError("cannot open trace file " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  TraceContents trace;
  std::vector<std::string> lines;
  std::size_t start = 0;
  bool last_terminated = true;
  while (start < content.size()) {
    const auto nl = content.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(content.substr(start));
      last_terminated = false;
      break;
    }
    lines.push_back(content.substr(start, nl - start));
    start = nl + 1;
  }
  if (lines.empty()) throw TraceError("trace file is empty: " + path.string());

  try {
    trace.header = header_from_json(json::parse(lines.front()));
  } catch (const json::exception& e) {
    throw TraceError(std::string("unreadable trace header: ") + e.what());
  }

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    const bool last = i + 1 == lines.size();
    if (lines[i].empty()) continue;
    try {
      trace.records.push_back(record_from_json(json::parse(lines[i])));
      trace.record_lines.push_back(line_no);
      if (last && !last_terminated) {
        // Parsed, but the writer never finished the line.
        trace.partial = true;
        trace.partial_line = line_no;
      }
    } catch (const std::exception& e) {
      if (last && !last_terminated) {
        trace.partial = true;
        trace.partial_line = line_no;
      } else {
        trace.malformed.emplace_back(line_no, e.what());
      }
    }
  }
  return trace;
}

ValidationReport validate(const TraceContents& trace) {
  ValidationReport report;
  report.records = trace.records.size();
  report.partial = trace.partial;
  if (trace.header.schema_version > kTraceSchemaVersion) {
    report.violations.push_back({1, -1, -1, "unsupported schema version"});
  }
  for (const auto& [line, reason] : trace.malformed) {
    report.violations.push_back({line, -1, -1, reason});
  }
  std::map<std::pair<int, Phase>, int> last_step;
  std::set<std::pair<int, Phase>> finished;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& rec = trace.records[i];
    const int line = trace.record_lines[i];
    for (auto& msg : check_record(rec)) {
      report.violations.push_back({line, rec.episode, rec.step, std::move(msg)});
    }
    const auto key = std::make_pair(rec.episode, rec.phase);
    if (auto it = last_step.find(key); it != last_step.end() && rec.step <= it->second) {
      report.violations.push_back({line, rec.episode, rec.step, "step indices not strictly increasing"});
    }
    if (finished.contains(key)) {
      report.violations.push_back({line, rec.episode, rec.step, "record after terminal verdict"});
    }
    last_step[key] = rec.step;
    if (rec.verdict) finished.insert(key);
  }
  return report;
}

ValidationReport validate_file(const std::filesystem::path& path) {
  return validate(read_trace(path));
}

// ---------------------------------------------------------------------------
// Queries

double selection_margin(const FactorDecision& factor) {
  const Alternative* chosen = factor.find(factor.chosen);
  if (chosen == nullptr) return 0.0;
  double best_other = -std::numeric_limits<double>::infinity();
  for (const auto& a : factor.alternatives) {
    if (a.action != factor.chosen) best_other = std::max(best_other, a.score);
  }
  if (!std::isfinite(best_other)) return 0.0;
  return chosen->score - best_other;
}

namespace {

const DecisionRecord& find_record(const TraceContents& trace, const RecordKey& key) {
  std::optional<Phase> phase = key.phase;
  if (!phase) {
    const bool any_avoid = std::any_of(trace.records.begin(), trace.records.end(), [&](const auto& r) {
      return r.phase == Phase::avoidance && r.episode == key.episode;
    });
    phase = any_avoid ? Phase::avoidance : Phase::service;
  }
  for (const auto& r : trace.records) {
    if (r.episode == key.episode && r.step == key.step && r.phase == *phase) return r;
  }
  throw TraceQueryError("no " + std::string(to_string(*phase)) + " decision at episode " +
                        std::to_string(key.episode) + ", step " + std::to_string(key.step));
}

json alternative_json(const Alternative& a) {
  json j{{"action", a.action}, {"label", a.label}, {"score", a.score}};
  if (a.value) j["value"] = *a.value;
  if (a.advantage) j["advantage"] = *a.advantage;
  if (a.q) j["q"] = *a.q;
  if (a.visits) j["visits"] = *a.visits;
  if (a.mean_value) j["mean_value"] = *a.mean_value;
  if (a.exploration) j["exploration"] = *a.exploration;
  if (a.uct) j["uct"] = *a.uct;
  return j;
}

std::string describe(const Alternative& a, SelectionRule rule) {
  std::ostringstream os;
  os << a.label;
  if (rule == SelectionRule::visit_count && a.visits) {
    os << " (visits " << *a.visits;
    if (a.mean_value) os << ", mean value " << *a.mean_value;
    if (a.exploration) os << ", exploration " << *a.exploration;
    if (a.uct) os << ", UCT " << *a.uct;
    os << ")";
  } else if (rule == SelectionRule::greedy_q && a.q) {
    os << " (Q " << *a.q;
    if (a.value) os << " = V " << *a.value << " + centred A " << (*a.q - *a.value);
    os << ")";
  }
  return os.str();
}

const Alternative* runner_up(const FactorDecision& f) {
  const Alternative* best = nullptr;
  for (const auto& a : f.alternatives) {
    if (a.action == f.chosen) continue;
    if (best == nullptr || a.score > best->score) best = &a;
  }
  return best;
}

std::pair<const FactorDecision*, const Alternative*> resolve_action(const DecisionRecord& rec,
                                                                    const std::string& action) {
  for (const auto& f : rec.factors) {
    for (const auto& a : f.alternatives) {
      if (a.label == action || f.name + ":" + a.label == action ||
          f.name + ":" + std::to_string(a.action) == action) {
        return {&f, &a};
      }
    }
  }
  int index = 0;
  const auto* end = action.data() + action.size();
  if (!rec.factors.empty() && std::from_chars(action.data(), end, index).ptr == end) {
    const auto& f = rec.factors.front();
    if (const auto* a = f.find(index)) return {&f, a};
  }
  throw TraceQueryError("no alternative named '" + action + "' at step " + std::to_string(rec.step));
}

}  // namespace

Explanation explain_why(const TraceContents& trace, const RecordKey& key) {
  const auto& rec = find_record(trace, key);
  Explanation ex;
  std::ostringstream os;
  os << to_string(rec.phase) << " decision, episode " << rec.episode << " step " << rec.step
     << " (rule " << to_string(rec.rule) << (rec.explored ? ", exploratory pick" : "") << ")\n";
  ex.data = {{"episode", rec.episode}, {"step", rec.step}, {"phase", to_string(rec.phase)},
             {"rule", to_string(rec.rule)}, {"explored", rec.explored}};
  json factors = json::array();
  for (const auto& f : rec.factors) {
    const Alternative* chosen = f.find(f.chosen);
    const Alternative* second = runner_up(f);
    const double margin = selection_margin(f);
    json fj{{"factor", f.name}, {"margin", margin}};
    if (chosen) fj["chosen"] = alternative_json(*chosen);
    if (second) fj["runner_up"] = alternative_json(*second);
    factors.push_back(std::move(fj));
    os << "  " << f.name << ": chose " << (chosen ? describe(*chosen, rec.rule) : "?");
    if (second) os << "; runner-up " << describe(*second, rec.rule) << "; margin " << margin;
    os << '\n';
  }
  ex.data["factors"] = std::move(factors);
  if (rec.verdict) {
    ex.data["verdict"] = to_string(*rec.verdict);
    os << "  episode ended: " << to_string(*rec.verdict) << '\n';
  }
  ex.text = os.str();
  return ex;
}

Explanation explain_why_not(const TraceContents& trace, const RecordKey& key,
                            const std::string& action) {
  const auto& rec = find_record(trace, key);
  const auto [factor, alt] = resolve_action(rec, action);
  const Alternative* chosen = factor->find(factor->chosen);
  const double deficit = chosen ? chosen->score - alt->score : 0.0;
  Explanation ex;
  ex.data = {{"episode", rec.episode}, {"step", rec.step}, {"factor", factor->name},
             {"alternative", alternative_json(*alt)}, {"deficit", deficit}};
  if (chosen) ex.data["chosen"] = alternative_json(*chosen);
  std::ostringstream os;
  if (alt->action == factor->chosen) {
    os << alt->label << " was the chosen action at step " << rec.step << " (deficit 0)\n";
  } else {
    os << alt->label << " was not chosen at step " << rec.step << ": it scored " << alt->score
       << " under " << to_string(rec.rule) << " against " << (chosen ? chosen->score : 0.0)
       << " for " << (chosen ? chosen->label : "?") << " (deficit " << deficit << ")\n";
    os << "  alternative: " << describe(*alt, rec.rule) << '\n';
    if (chosen) os << "  chosen:      " << describe(*chosen, rec.rule) << '\n';
  }
  ex.text = os.str();
  return ex;
}

Explanation explain_path(const TraceContents& trace, int episode, std::optional<Phase> phase) {
  if (!phase) {
    const bool any_avoid = std::any_of(trace.records.begin(), trace.records.end(), [&](const auto& r) {
      return r.phase == Phase::avoidance && r.episode == episode;
    });
    phase = any_avoid ? Phase::avoidance : Phase::service;
  }
  Explanation ex;
  std::ostringstream os;
  json steps = json::array();
  const DecisionRecord* last = nullptr;
  for (const auto& r : trace.records) {
    if (r.episode != episode || r.phase != *phase) continue;
    json labels = json::array();
    std::string text;
    for (const auto& f : r.factors) {
      const Alternative* c = f.find(f.chosen);
      const std::string lbl = c ? c->label : std::to_string(f.chosen);
      labels.push_back(lbl);
      if (!text.empty()) text += ' ';
      text += (r.factors.size() > 1 ? f.name + "=" : std::string()) + lbl;
    }
    const double margin = r.factors.empty() ? 0.0 : selection_margin(r.factors.front());
    steps.push_back({{"step", r.step}, {"actions", labels}, {"margin", margin}, {"explored", r.explored}});
    os << "  step " << r.step << ": " << text << (r.explored ? " [explored]" : "") << '\n';
    last = &r;
  }
  if (last == nullptr) {
    throw TraceQueryError("no " + std::string(to_string(*phase)) + " decisions for episode " +
                          std::to_string(episode));
  }
  ex.data = {{"episode", episode}, {"phase", to_string(*phase)}, {"steps", std::move(steps)}};
  std::ostringstream head;
  head << to_string(*phase) << " path for episode " << episode << ": " << ex.data["steps"].size()
       << " decisions\n";
  if (last->verdict) {
    ex.data["verdict"] = to_string(*last->verdict);
    if (last->terminal_reward) ex.data["terminal_reward"] = *last->terminal_reward;
    os << "  verdict: " << to_string(*last->verdict);
    if (last->terminal_reward) os << " (terminal reward " << *last->terminal_reward << ")";
    os << '\n';
  }
  ex.text = head.str() + os.str();
  return ex;
}

Explanation explain_summary(const TraceContents& trace) {
  std::map<std::string, int> verdicts;
  std::set<std::pair<int, Phase>> episodes;
  double margin_sum = 0.0;
  int margin_count = 0;
  int explored = 0;
  for (const auto& r : trace.records) {
    episodes.insert({r.episode, r.phase});
    if (r.verdict) ++verdicts[std::string(to_string(*r.verdict))];
    if (r.explored) {
      ++explored;
      continue;
    }
    for (const auto& f : r.factors) {
      margin_sum += selection_margin(f);
      ++margin_count;
    }
  }
  Explanation ex;
  const double mean_margin = margin_count > 0 ? margin_sum / margin_count : 0.0;
  ex.data = {{"records", trace.records.size()},
             {"episodes", episodes.size()},
             {"explored", explored},
             {"goal", verdicts["goal"]},
             {"collision", verdicts["collision"]},
             {"timeout", verdicts["timeout"]},
             {"mean_margin", mean_margin}};
  std::ostringstream os;
  os << "run " << trace.header.run_id << ": " << trace.records.size() << " decisions over "
     << episodes.size() << " episodes\n"
     << "  goal " << verdicts["goal"] << ", collision " << verdicts["collision"] << ", timeout "
     << verdicts["timeout"] << '\n'
     << "  exploratory picks " << explored << ", mean selection margin " << mean_margin << '\n';
  ex.text = os.str();
  return ex;
}

}  // namespace uavxai
