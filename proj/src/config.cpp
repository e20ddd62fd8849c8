#include "uavxai/config.hpp"

#include "uavxai/trace.hpp"

#include <fstream>
#include <set>

namespace uavxai {

using nlohmann::json;

std::string_view to_string(PlannerKind kind) {
  switch (kind) {
    case PlannerKind::tree: return "tree";
    case PlannerKind::dqn: return "dqn";
    case PlannerKind::random: return "random";
  }
  return "?";
}

PlannerKind parse_planner_kind(std::string_view text) {
  if (text == "tree") return PlannerKind::tree;
  if (text == "dqn") return PlannerKind::dqn;
  if (text == "random") return PlannerKind::random;
  throw ConfigError("unknown planner kind '" + std::string(text) + "'");
}

std::vector<PlannerProfile> default_profiles() {
  PlannerProfile depth{"tree-depth", PlannerKind::tree, {2000, 4, 0.05}, {}};
  PlannerProfile fast{"tree-fast", PlannerKind::tree, {200, 2, 0.05}, {}};
  PlannerProfile dqn{"dqn-avoid", PlannerKind::dqn, {}, {}};
  PlannerProfile random{"random-avoid", PlannerKind::random, {}, {}};
  return {depth, fast, dqn, random};
}

const PlannerProfile& ExperimentConfig::profile(std::string_view wanted) const {
  for (const auto& p : profiles) {
    if (p.name == wanted) return p;
  }
  throw ConfigError("planner profile '" + std::string(wanted) + "' is not defined");
}

Eigen::Vector2d ExperimentConfig::resolved_goal_offset() const {
  if (goal_offset) return *goal_offset;
  const auto& m = avoidance.map;
  const auto& a = service.area;
  return {(m.x_min + m.x_max) / 2.0 - (a.x_min + a.x_max) / 2.0,
          (m.y_min + m.y_max) / 2.0 - (a.y_min + a.y_max) / 2.0};
}

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void range(const char* key, double& lo, double& hi) {
    std::vector<double> v{lo, hi};
    get(key, v);
    if (v.size() != 2) throw ConfigError(where_ + "." + key + ": expected [min, max]");
    lo = v[0];
    hi = v[1];
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string, std::less<>> seen_;
};

void read_learner(const json& j, const std::string& where, LearnerConfig& l) {
  Fields f(j, where);
  f.get("gamma", l.gamma);
  f.get("batch_size", l.batch_size);
  f.get("buffer_capacity", l.buffer_capacity);
  f.get("learning_rate", l.learning_rate);
  f.get("target_sync", l.target_sync);
  f.get("hidden", l.hidden);
  f.finish();
}

json learner_json(const LearnerConfig& l) {
  return {{"gamma", l.gamma},
          {"batch_size", l.batch_size},
          {"buffer_capacity", l.buffer_capacity},
          {"learning_rate", l.learning_rate},
          {"target_sync", l.target_sync},
          {"hidden", l.hidden}};
}

void read_channel(const json& j, ChannelParams& c) {
  Fields f(j, "service.channel");
  f.get("carrier_freq", c.carrier_freq);
  f.get("bandwidth", c.bandwidth);
  f.get("noise_power", c.noise_power);
  f.get("eta_los_db", c.eta_los_db);
  f.get("eta_nlos_db", c.eta_nlos_db);
  f.get("los_a", c.los_a);
  f.get("los_b", c.los_b);
  f.get("p_max", c.p_max);
  f.get("qos_rate", c.qos_rate);
  std::string fading = c.fading == FadingMode::rayleigh ? "rayleigh" : "none";
  f.get("fading", fading);
  if (fading == "none") {
    c.fading = FadingMode::deterministic_unit;
  } else if (fading == "rayleigh") {
    c.fading = FadingMode::rayleigh;
  } else {
    throw ConfigError("service.channel.fading: expected 'none' or 'rayleigh'");
  }
  f.finish();
}

void read_service(const json& j, ServiceScenario& s) {
  Fields f(j, "service");
  f.range("x", s.area.x_min, s.area.x_max);
  f.range("y", s.area.y_min, s.area.y_max);
  f.range("altitude", s.area.h_min, s.area.h_max);
  f.get("users", s.users);
  f.get("move_step", s.move_step);
  f.get("initial_altitude", s.initial_altitude);
  if (const json* c = f.sub("channel")) read_channel(*c, s.channel);
  f.finish();
}

void read_training(const json& j, TrainingConfig& t) {
  Fields f(j, "training");
  f.get("episodes", t.episodes);
  f.get("steps_per_episode", t.steps_per_episode);
  f.get("epsilon_start", t.epsilon_start);
  f.get("epsilon_end", t.epsilon_end);
  f.get("reward_scale", t.reward_scale);
  if (const json* l = f.sub("learner")) read_learner(*l, "training.learner", t.learner);
  f.finish();
}

void read_avoidance(const json& j, ExperimentConfig& cfg) {
  Fields f(j, "avoidance");
  auto& a = cfg.avoidance;
  f.range("x", a.map.x_min, a.map.x_max);
  f.range("y", a.map.y_min, a.map.y_max);
  f.get("dt", a.dt);
  f.get("d_min", a.terminal.d_min);
  f.get("goal_radius", a.terminal.goal_radius);
  f.get("max_steps", a.terminal.max_steps);
  if (const json* k = f.sub("kinematics")) {
    Fields kf(*k, "avoidance.kinematics");
    auto& lim = a.limits;
    double tilt_max = lim.tilt_max * 180.0 / kPi;
    double tilt_step = lim.tilt_step * 180.0 / kPi;
    kf.get("v_min", lim.v_min);
    kf.get("v_max", lim.v_max);
    kf.get("tilt_max_deg", tilt_max);
    kf.get("tilt_step_deg", tilt_step);
    kf.get("accel_step", lim.accel_step);
    kf.get("gravity", lim.gravity);
    lim.tilt_max = deg_to_rad(tilt_max);
    lim.tilt_step = deg_to_rad(tilt_step);
    kf.finish();
  }
  if (const json* e = f.sub("encounter")) {
    Fields ef(*e, "avoidance.encounter");
    auto& enc = cfg.encounter;
    ef.get("start_distance", enc.start_distance);
    ef.get("initial_speed", enc.initial_speed);
    ef.range("intruder_speed", enc.intruder_speed_min, enc.intruder_speed_max);
    ef.get("spawn_clearance", enc.spawn_clearance);
    ef.finish();
  }
  if (const json* g = f.sub("goal_offset")) {
    if (g->is_null()) {
      cfg.goal_offset.reset();
    } else {
      std::vector<double> v;
      try {
        v = g->get<std::vector<double>>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("avoidance.goal_offset: ") + e.what());
      }
      if (v.size() != 2) throw ConfigError("avoidance.goal_offset: expected [dx, dy]");
      cfg.goal_offset = Eigen::Vector2d(v[0], v[1]);
    }
  }
  f.finish();
  a.terminal.bounds = a.map;
}

void read_profile(const json& j, const std::string& name, PlannerProfile& p) {
  const std::string where = "profiles." + name;
  Fields f(j, where);
  std::string kind(to_string(p.kind));
  f.get("kind", kind);
  p.kind = parse_planner_kind(kind);
  p.name = name;
  if (p.kind == PlannerKind::tree) {
    f.get("simulations", p.search.simulations);
    f.get("depth", p.search.depth);
    f.get("exploration", p.search.exploration);
  } else if (p.kind == PlannerKind::dqn) {
    f.get("train_intruders", p.dqn.train_intruders);
    f.get("episodes", p.dqn.episodes);
    f.get("epsilon_start", p.dqn.epsilon_start);
    f.get("epsilon_end", p.dqn.epsilon_end);
    f.get("shaping", p.dqn.shaping);
    if (const json* l = f.sub("learner")) read_learner(*l, where + ".learner", p.dqn.learner);
  }
  f.finish();
}

json profile_json(const PlannerProfile& p) {
  json j{{"kind", std::string(to_string(p.kind))}};
  if (p.kind == PlannerKind::tree) {
    j["simulations"] = p.search.simulations;
    j["depth"] = p.search.depth;
    j["exploration"] = p.search.exploration;
  } else if (p.kind == PlannerKind::dqn) {
    j["train_intruders"] = p.dqn.train_intruders;
    j["episodes"] = p.dqn.episodes;
    j["epsilon_start"] = p.dqn.epsilon_start;
    j["epsilon_end"] = p.dqn.epsilon_end;
    j["shaping"] = p.dqn.shaping;
    j["learner"] = learner_json(p.dqn.learner);
  }
  return j;
}

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void check_learner(const LearnerConfig& l, const std::string& where) {
  check(l.gamma >= 0.0 && l.gamma < 1.0, where + ".gamma must lie in [0, 1)");
  check(l.batch_size > 0, where + ".batch_size must be positive");
  check(l.buffer_capacity >= static_cast<std::size_t>(l.batch_size),
        where + ".buffer_capacity must hold at least one batch");
  check(l.learning_rate >= 0.0, where + ".learning_rate must be >= 0");
  check(l.target_sync > 0, where + ".target_sync must be positive");
  check(!l.hidden.empty(), where + ".hidden must list at least one layer");
  for (int h : l.hidden) check(h > 0, where + ".hidden widths must be positive");
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  check(!cfg.seeds.empty(), "seeds must not be empty");
  const auto& s = cfg.service;
  check(s.area.valid(), "service area bounds are empty");
  check(s.users > 0, "service.users must be positive");
  check(s.move_step > 0.0, "service.move_step must be positive");
  check(s.initial_altitude >= s.area.h_min && s.initial_altitude <= s.area.h_max,
        "service.initial_altitude must lie within the altitude range");
  check(s.channel.valid(), "service.channel parameters are out of range");
  const auto& t = cfg.training;
  check(t.episodes > 0, "training.episodes must be positive");
  check(t.steps_per_episode > 0, "training.steps_per_episode must be positive");
  check(t.epsilon_start >= 0.0 && t.epsilon_start <= 1.0 && t.epsilon_end >= 0.0 &&
            t.epsilon_end <= 1.0,
        "training epsilon values must lie in [0, 1]");
  check(t.reward_scale > 0.0, "training.reward_scale must be positive");
  check_learner(t.learner, "training.learner");

  const auto& a = cfg.avoidance;
  check(a.map.valid_planar(), "avoidance map bounds are empty");
  check(a.dt > 0.0, "avoidance.dt must be positive");
  check(a.terminal.d_min > 0.0, "avoidance.d_min must be positive");
  check(a.terminal.goal_radius > 0.0, "avoidance.goal_radius must be positive");
  check(a.terminal.max_steps > 0, "avoidance.max_steps must be positive");
  const auto& lim = a.limits;
  check(lim.v_min > 0.0 && lim.v_min <= lim.v_max, "kinematics speed range is invalid");
  check(lim.tilt_max > 0.0 && lim.tilt_max < kPi / 2.0, "kinematics tilt_max must lie in (0, 90)");
  check(lim.tilt_step > 0.0 && lim.accel_step >= 0.0 && lim.gravity > 0.0,
        "kinematics steps and gravity must be positive");
  const auto& e = cfg.encounter;
  check(e.start_distance > 0.0, "encounter.start_distance must be positive");
  check(e.intruder_speed_min >= 0.0 && e.intruder_speed_min <= e.intruder_speed_max,
        "encounter intruder speed range is invalid");
  check(e.spawn_clearance >= 0.0, "encounter.spawn_clearance must be >= 0");
  // Intruders are rejection-sampled outside the clearance disc; it has to
  // leave room on the map.
  check(kPi * e.spawn_clearance * e.spawn_clearance < 0.5 * a.map.width() * a.map.length(),
        "encounter.spawn_clearance covers too much of the map");
  const Eigen::Vector2d off = cfg.resolved_goal_offset();
  check(a.map.contains(s.area.x_min + off.x(), s.area.y_min + off.y()) &&
            a.map.contains(s.area.x_max + off.x(), s.area.y_max + off.y()),
        "the service area, shifted by the goal offset, must lie inside the avoidance map");

  std::set<std::string, std::less<>> names;
  for (const auto& p : cfg.profiles) {
    check(names.insert(p.name).second, "profile '" + p.name + "' is defined twice");
    if (p.kind == PlannerKind::tree) {
      check(p.search.simulations > 0, "profile '" + p.name + "' needs simulations > 0");
      check(p.search.depth >= 1, "profile '" + p.name + "' needs depth >= 1");
      check(p.search.exploration >= 0.0, "profile '" + p.name + "' needs exploration >= 0");
    } else if (p.kind == PlannerKind::dqn) {
      check(p.dqn.train_intruders >= 0, "profile '" + p.name + "' needs train_intruders >= 0");
      check(p.dqn.episodes > 0, "profile '" + p.name + "' needs episodes > 0");
      check_learner(p.dqn.learner, "profiles." + p.name + ".learner");
    }
  }
  check(!cfg.planners.empty(), "sweep.planners must not be empty");
  std::set<std::string, std::less<>> listed;
  for (const auto& name : cfg.planners) {
    check(names.contains(name), "sweep planner '" + name + "' is not defined in profiles");
    check(listed.insert(name).second, "sweep planner '" + name + "' is listed twice");
  }
  check(!cfg.intruders.empty(), "sweep.intruders must not be empty");
  std::set<int> counts;
  for (int m : cfg.intruders) {
    check(m >= 0, "sweep.intruders entries must be >= 0");
    check(counts.insert(m).second, "sweep.intruders lists a count twice");
  }
  check(cfg.eval_episodes > 0, "sweep.episodes must be positive");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Fields f(j, "config");
  f.get("name", cfg.name);
  f.get("seeds", cfg.seeds);
  std::string agent(to_string(cfg.agent));
  f.get("agent", agent);
  try {
    cfg.agent = parse_agent_kind(agent);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("agent: ") + e.what());
  }
  if (const json* s = f.sub("service")) read_service(*s, cfg.service);
  if (const json* t = f.sub("training")) read_training(*t, cfg.training);
  if (const json* a = f.sub("avoidance")) read_avoidance(*a, cfg);
  if (const json* p = f.sub("profiles")) {
    if (!p->is_object()) throw ConfigError("profiles: expected an object");
    for (const auto& [name, body] : p->items()) {
      auto it = std::find_if(cfg.profiles.begin(), cfg.profiles.end(),
                             [&name](const PlannerProfile& q) { return q.name == name; });
      if (it == cfg.profiles.end()) {
        cfg.profiles.push_back({name, PlannerKind::tree, {}, {}});
        it = std::prev(cfg.profiles.end());
      }
      read_profile(body, name, *it);
    }
  }
  if (const json* s = f.sub("sweep")) {
    Fields sf(*s, "sweep");
    sf.get("planners", cfg.planners);
    sf.get("intruders", cfg.intruders);
    sf.get("episodes", cfg.eval_episodes);
    sf.get("traces", cfg.write_traces);
    sf.finish();
  }
  f.finish();
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& cfg) {
  const auto& s = cfg.service;
  const auto& c = s.channel;
  const auto& t = cfg.training;
  const auto& a = cfg.avoidance;
  const auto& e = cfg.encounter;
  json profiles = json::object();
  for (const auto& p : cfg.profiles) profiles[p.name] = profile_json(p);
  json goal_offset = nullptr;
  if (cfg.goal_offset) goal_offset = {cfg.goal_offset->x(), cfg.goal_offset->y()};
  return {
      {"name", cfg.name},
      {"seeds", cfg.seeds},
      {"agent", std::string(to_string(cfg.agent))},
      {"service",
       {{"x", {s.area.x_min, s.area.x_max}},
        {"y", {s.area.y_min, s.area.y_max}},
        {"altitude", {s.area.h_min, s.area.h_max}},
        {"users", s.users},
        {"move_step", s.move_step},
        {"initial_altitude", s.initial_altitude},
        {"channel",
         {{"carrier_freq", c.carrier_freq},
          {"bandwidth", c.bandwidth},
          {"noise_power", c.noise_power},
          {"eta_los_db", c.eta_los_db},
          {"eta_nlos_db", c.eta_nlos_db},
          {"los_a", c.los_a},
          {"los_b", c.los_b},
          {"p_max", c.p_max},
          {"qos_rate", c.qos_rate},
          {"fading", c.fading == FadingMode::rayleigh ? "rayleigh" : "none"}}}}},
      {"training",
       {{"episodes", t.episodes},
        {"steps_per_episode", t.steps_per_episode},
        {"epsilon_start", t.epsilon_start},
        {"epsilon_end", t.epsilon_end},
        {"reward_scale", t.reward_scale},
        {"learner", learner_json(t.learner)}}},
      {"avoidance",
       {{"x", {a.map.x_min, a.map.x_max}},
        {"y", {a.map.y_min, a.map.y_max}},
        {"dt", a.dt},
        {"d_min", a.terminal.d_min},
        {"goal_radius", a.terminal.goal_radius},
        {"max_steps", a.terminal.max_steps},
        {"kinematics",
         {{"v_min", a.limits.v_min},
          {"v_max", a.limits.v_max},
          {"tilt_max_deg", a.limits.tilt_max * 180.0 / kPi},
          {"tilt_step_deg", a.limits.tilt_step * 180.0 / kPi},
          {"accel_step", a.limits.accel_step},
          {"gravity", a.limits.gravity}}},
        {"encounter",
         {{"start_distance", e.start_distance},
          {"initial_speed", e.initial_speed},
          {"intruder_speed", {e.intruder_speed_min, e.intruder_speed_max}},
          {"spawn_clearance", e.spawn_clearance}}},
        {"goal_offset", goal_offset}}},
      {"profiles", profiles},
      {"sweep",
       {{"planners", cfg.planners},
        {"intruders", cfg.intruders},
        {"episodes", cfg.eval_episodes},
        {"traces", cfg.write_traces}}},
  };
}

std::string config_hash(const ExperimentConfig& cfg) { return digest_hex(to_json(cfg).dump()); }

}  // namespace uavxai
