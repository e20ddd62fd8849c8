#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace uavxai {

struct SearchConfig {
  int simulations = 2000;
  int depth = 4;
  double exploration = 0.05;
};

/// Exploration bonus 2C sqrt(2 ln n / n_j); +inf for an unvisited child.
inline double exploration_term(int child_visits, int parent_visits, double c) {
  if (child_visits <= 0) return std::numeric_limits<double>::infinity();
  return 2.0 * c * std::sqrt(2.0 * std::log(static_cast<double>(parent_visits)) / child_visits);
}

inline double uct_score(double mean_value, int child_visits, int parent_visits, double c) {
  if (child_visits <= 0) return std::numeric_limits<double>::infinity();
  return mean_value + exploration_term(child_visits, parent_visits, c);
}

/// A planning problem the tree can search: deterministic transitions over
/// a fixed action set, a terminal payoff, and a heuristic leaf value.
template <typename M>
concept SearchModel = requires(const M& m, const typename M::State& s, int a) {
  { m.action_count() } -> std::convertible_to<int>;
  { m.transition(s, a) } -> std::same_as<typename M::State>;
  { m.terminal_value(s) } -> std::same_as<std::optional<double>>;
  { m.estimate(s) } -> std::convertible_to<double>;
};

template <typename State>
struct SearchNode {
  State state;
  int depth = 0;
  int visits = 0;
  double total_reward = 0.0;
  std::optional<double> terminal_value;
  std::vector<std::unique_ptr<SearchNode>> children;  // indexed by action

  bool terminal() const { return terminal_value.has_value(); }
  double mean_value() const { return visits > 0 ? total_reward / visits : 0.0; }
  const SearchNode* child(int action) const {
    return static_cast<size_t>(action) < children.size() ? children[static_cast<size_t>(action)].get()
                                                          : nullptr;
  }
};

struct ChildStats {
  int action = 0;
  int visits = 0;
  double mean_value = 0.0;
  double exploration = std::numeric_limits<double>::infinity();
  double uct = std::numeric_limits<double>::infinity();
};

/// Root-level statistics after a search, in action order.
struct TreeSnapshot {
  int simulations = 0;
  int root_visits = 0;
  double exploration_constant = 0.0;
  int chosen = -1;
  std::vector<ChildStats> children;
};

/// Monte Carlo tree search with UCT selection and depth-limited value
/// estimation. Every simulation descends until it hits a terminal state or
/// the depth limit, creating nodes on the way; the leaf is scored by the
/// model's terminal payoff or its heuristic estimate, and the value is added
/// to every node on the path. Nodes start at zero visits, so for any
/// non-terminal node above the depth limit visits == sum of child visits.
template <SearchModel Model>
class SearchTree {
 public:
  using State = typename Model::State;
  using Node = SearchNode<State>;

  struct Edge {
    Node* parent;
    int action;
    Node* child;
  };

  SearchTree(const Model& model, State root, SearchConfig config)
      : model_(&model), config_(config) {
    if (config_.depth < 1) throw std::invalid_argument("search depth must be at least 1");
    if (!(config_.exploration >= 0.0)) throw std::invalid_argument("exploration constant must be >= 0");
    root_ = std::make_unique<Node>();
    root_->state = std::move(root);
    root_->terminal_value = model_->terminal_value(root_->state);
    if (root_->terminal()) throw std::invalid_argument("cannot search from a terminal state");
    actions_ = model_->action_count();
  }

  const Node& root() const { return *root_; }
  const SearchConfig& config() const { return config_; }
  int simulations_run() const { return simulations_; }

  /// Selection and expansion for one simulation. Ties in UCT, including the
  /// +inf of unvisited actions, are broken uniformly at random.
  template <typename Rng>
  std::vector<Edge> select_and_expand(Rng& rng) {
    std::vector<Edge> path;
    Node* node = root_.get();
    std::vector<int> best;
    best.reserve(static_cast<size_t>(actions_));
    while (!node->terminal() && node->depth < config_.depth) {
      if (node->children.empty()) node->children.resize(static_cast<size_t>(actions_));
      best.clear();
      double best_score = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < actions_; ++a) {
        const Node* c = node->children[static_cast<size_t>(a)].get();
        const double score = c == nullptr ? std::numeric_limits<double>::infinity()
                                          : uct_score(c->mean_value(), c->visits, node->visits,
                                                      config_.exploration);
        if (score > best_score) {
          best_score = score;
          best.clear();
          best.push_back(a);
        } else if (score == best_score) {
          best.push_back(a);
        }
      }
      int action = best.front();
      if (best.size() > 1) {
        std::uniform_int_distribution<size_t> pick(0, best.size() - 1);
        action = best[pick(rng)];
      }
      auto& slot = node->children[static_cast<size_t>(action)];
      if (!slot) {
        slot = std::make_unique<Node>();
        slot->state = model_->transition(node->state, action);
        slot->depth = node->depth + 1;
        slot->terminal_value = model_->terminal_value(slot->state);
      }
      path.push_back({node, action, slot.get()});
      node = slot.get();
    }
    return path;
  }

  double leaf_value(const std::vector<Edge>& path) const {
    const Node& leaf = path.empty() ? *root_ : *path.back().child;
    if (leaf.terminal()) return *leaf.terminal_value;
    return model_->estimate(leaf.state);
  }

  void backpropagate(const std::vector<Edge>& path, double value) {
    root_->visits += 1;
    root_->total_reward += value;
    for (const auto& e : path) {
      e.child->visits += 1;
      e.child->total_reward += value;
    }
  }

  template <typename Rng>
  double simulate_once(Rng& rng) {
    const auto path = select_and_expand(rng);
    const double value = leaf_value(path);
    backpropagate(path, value);
    ++simulations_;
    return value;
  }

  /// Most visited root action; ties go to the higher mean, then the lower index.
  int robust_action() const {
    int best = -1;
    for (int a = 0; a < actions_; ++a) {
      const Node* c = root_->child(a);
      if (c == nullptr) continue;
      if (best < 0) {
        best = a;
        continue;
      }
      const Node* b = root_->child(best);
      if (c->visits > b->visits || (c->visits == b->visits && c->mean_value() > b->mean_value())) {
        best = a;
      }
    }
    return best;
  }

  TreeSnapshot snapshot() const {
    TreeSnapshot snap;
    snap.simulations = simulations_;
    snap.root_visits = root_->visits;
    snap.exploration_constant = config_.exploration;
    snap.chosen = robust_action();
    for (int a = 0; a < actions_; ++a) {
      ChildStats s;
      s.action = a;
      if (const Node* c = root_->child(a)) {
        s.visits = c->visits;
        s.mean_value = c->mean_value();
        s.exploration = exploration_term(c->visits, root_->visits, config_.exploration);
        s.uct = uct_score(s.mean_value, c->visits, root_->visits, config_.exploration);
      }
      snap.children.push_back(s);
    }
    return snap;
  }

 private:
  const Model* model_;
  SearchConfig config_;
  std::unique_ptr<Node> root_;
  int actions_ = 0;
  int simulations_ = 0;
};

/// Runs `config.simulations` simulations from a fresh tree and returns the
/// robust-child action with the root statistics.
template <SearchModel Model, typename Rng>
std::pair<int, TreeSnapshot> plan_step(const Model& model, typename Model::State root,
                                       const SearchConfig& config, Rng& rng) {
  SearchTree<Model> tree(model, std::move(root), config);
  for (int i = 0; i < config.simulations; ++i) tree.simulate_once(rng);
  auto snap = tree.snapshot();
  return {snap.chosen, std::move(snap)};
}

}  // namespace uavxai
