#pragma once

#include <optional>
#include <vector>

#include "env_fetchthekey.hpp"

namespace temple {

// Independent re-implementation of the FetchTheKey dynamics over the product
// graph (position x keys_collected), used as a test oracle and to compute
// optimal returns via breadth-first search. Deliberately shares no code with
// FetchTheKeyEnv::step beyond the layout data itself.
class EnvOracle {
 public:
  EnvOracle(const EnvState& state, const EnvConfig& config);

  struct Transition {
    GridPos pos;
    int keys = 0;
    double reward = 0.0;
    bool reached_goal = false;
  };
  // Movement rules written from scratch: key cell j exists while keys < j,
  // door r opens once keys >= r.
  Transition transition(GridPos pos, int keys, int action) const;

  // Maximum achievable undiscounted return from (pos, keys) within the
  // remaining step budget; 2 per reachable key, plus 10 if the goal is
  // reachable with all keys.
  double optimal_return(GridPos pos, int keys, int steps_taken) const;

  // Convenience for the current state of an environment.
  double optimal_return(const EnvState& state) const {
    return optimal_return(state.agent, state.keys_collected, state.steps);
  }

  // First action of a shortest path to the next milestone (the next key, or
  // the goal once all keys are held). Empty when nothing is reachable.
  std::optional<int> optimal_action(GridPos pos, int keys) const;

 private:
  struct Layout {
    std::vector<Cell> grid;
    int rows = 0;
    int cols = 0;
  };

  int state_index(GridPos pos, int keys) const;
  // BFS distances over the product graph. dist_keys[m] = min steps until
  // keys_collected == m; dist_goal = min steps until the goal is entered.
  struct Distances {
    std::vector<int> dist_keys;  // indexed by key count, -1 if unreachable
    int dist_goal = -1;
  };
  Distances bfs(GridPos pos, int keys) const;

  Layout layout_;
  int num_keys_ = 0;
  int max_steps_ = 0;
};

// Plays optimally by re-running BFS each step; used to validate evaluation
// plumbing and as a reference agent in tests.
class OraclePolicy {
 public:
  int act(const FetchTheKeyEnv& env) const;
};

}  // namespace temple
