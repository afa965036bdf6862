#include "env_oracle.hpp"

#include <deque>
#include <stdexcept>

namespace temple {

EnvOracle::EnvOracle(const EnvState& state, const EnvConfig& config) {
  layout_.grid = state.grid;
  layout_.rows = state.rows;
  layout_.cols = state.cols;
  num_keys_ = config.num_keys;
  max_steps_ = config.max_episode_steps;
}

int EnvOracle::state_index(GridPos pos, int keys) const {
  return (pos.row * layout_.cols + pos.col) * (num_keys_ + 1) + keys;
}

EnvOracle::Transition EnvOracle::transition(GridPos pos, int keys, int action) const {
  static constexpr int kDr[kNumActions] = {-1, 1, 0, 0};
  static constexpr int kDc[kNumActions] = {0, 0, -1, 1};
  if (action < 0 || action >= kNumActions) {
    throw std::invalid_argument("oracle: action must be in 0..3");
  }

  Transition t{pos, keys, 0.0, false};
  const int r = pos.row + kDr[action];
  const int c = pos.col + kDc[action];
  if (r < 0 || r >= layout_.rows || c < 0 || c >= layout_.cols) {
    return t;  // border behaves like wall
  }
  const Cell& cell = layout_.grid[static_cast<std::size_t>(r * layout_.cols + c)];
  switch (cell.kind) {
    case CellKind::kWall:
      return t;
    case CellKind::kDoor:
      if (keys < cell.index) return t;
      t.pos = {r, c};
      return t;
    case CellKind::kKey:
      t.pos = {r, c};
      if (keys < cell.index) {  // key still on the floor in product state
        t.keys = keys + 1;
        t.reward = 2.0;
      }
      return t;
    case CellKind::kGoal:
      t.pos = {r, c};
      if (keys == num_keys_) {
        t.reward = 10.0;
        t.reached_goal = true;
      }
      return t;
    case CellKind::kFloor:
      t.pos = {r, c};
      return t;
  }
  return t;
}

EnvOracle::Distances EnvOracle::bfs(GridPos pos, int keys) const {
  Distances out;
  out.dist_keys.assign(static_cast<std::size_t>(num_keys_ + 1), -1);
  out.dist_keys[static_cast<std::size_t>(keys)] = 0;

  std::vector<int> dist(
      static_cast<std::size_t>(layout_.rows * layout_.cols * (num_keys_ + 1)), -1);
  dist[static_cast<std::size_t>(state_index(pos, keys))] = 0;

  std::deque<std::pair<GridPos, int>> queue;
  queue.emplace_back(pos, keys);
  while (!queue.empty()) {
    auto [p, k] = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(state_index(p, k))];
    for (int a = 0; a < kNumActions; ++a) {
      const Transition t = transition(p, k, a);
      if (t.reached_goal && out.dist_goal < 0) {
        out.dist_goal = d + 1;
      }
      const int idx = state_index(t.pos, t.keys);
      if (dist[static_cast<std::size_t>(idx)] >= 0) continue;
      dist[static_cast<std::size_t>(idx)] = d + 1;
      if (out.dist_keys[static_cast<std::size_t>(t.keys)] < 0) {
        out.dist_keys[static_cast<std::size_t>(t.keys)] = d + 1;
      }
      if (!t.reached_goal) {
        queue.emplace_back(t.pos, t.keys);
      }
    }
  }
  return out;
}

double EnvOracle::optimal_return(GridPos pos, int keys, int steps_taken) const {
  const int budget = max_steps_ - steps_taken;
  if (budget <= 0) return 0.0;
  const Distances d = bfs(pos, keys);
  if (d.dist_goal >= 0 && d.dist_goal <= budget) {
    return 2.0 * (num_keys_ - keys) + 10.0;
  }
  int best = keys;
  for (int m = keys; m <= num_keys_; ++m) {
    const int dm = d.dist_keys[static_cast<std::size_t>(m)];
    if (dm >= 0 && dm <= budget) best = m;
  }
  return 2.0 * (best - keys);
}

std::optional<int> EnvOracle::optimal_action(GridPos pos, int keys) const {
  // Distance-to-milestone for every product state, then greedy descent.
  const bool want_goal = keys == num_keys_;
  auto milestone_dist = [&](GridPos p, int k) -> int {
    const Distances d = bfs(p, k);
    if (want_goal) return d.dist_goal;
    return d.dist_keys[static_cast<std::size_t>(keys + 1)];
  };
  const int here = milestone_dist(pos, keys);
  if (here < 0) return std::nullopt;
  for (int a = 0; a < kNumActions; ++a) {
    const Transition t = transition(pos, keys, a);
    if (t.pos == pos && t.keys == keys) continue;
    if (t.reached_goal && want_goal) return a;
    if (!want_goal && t.keys == keys + 1) return a;
    const int next = milestone_dist(t.pos, t.keys);
    if (next >= 0 && next == here - 1) return a;
  }
  return std::nullopt;
}

int OraclePolicy::act(const FetchTheKeyEnv& env) const {
  EnvOracle oracle(env.state(), env.config());
  const auto a = oracle.optimal_action(env.state().agent, env.state().keys_collected);
  return a.value_or(kUp);
}

}  // namespace temple
