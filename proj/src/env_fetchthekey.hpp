#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace temple {

// Grid world of 5x5 rooms joined in a chain by 1x1 doors:
//   [start] [key 1] [key 2] ... [key K] [goal]
// Door into key room 1 is always open; the door into the room after key i
// needs i collected keys; the goal room needs all of them. Entering a key
// cell picks the key up for reward 2; entering the goal with every key pays
// 10 and ends the episode.
struct EnvConfig {
  int num_keys = 1;              // 1..4
  int max_episode_steps = 500;
  void validate() const;
};

enum class CellKind : std::uint8_t { kFloor, kWall, kDoor, kKey, kGoal };

struct Cell {
  CellKind kind = CellKind::kWall;
  // kDoor: keys required to pass. kKey: key number (1-based).
  int index = 0;
};

struct GridPos {
  int row = 0;
  int col = 0;
  bool operator==(const GridPos&) const = default;
};

enum Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
inline constexpr int kNumActions = 4;

struct EnvState {
  std::vector<Cell> grid;  // row-major
  int rows = 0;
  int cols = 0;
  GridPos agent;
  int keys_collected = 0;
  int steps = 0;

  const Cell& at(int r, int c) const { return grid[static_cast<std::size_t>(r * cols + c)]; }
  Cell& at(int r, int c) { return grid[static_cast<std::size_t>(r * cols + c)]; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }
};

// Observation cell codes; open doors read as floor, out of bounds as wall.
inline constexpr double kCodeFloor = 0.0;
inline constexpr double kCodeWall = 0.25;
inline constexpr double kCodeClosedDoor = 0.5;
inline constexpr double kCodeKey = 0.75;
inline constexpr double kCodeGoal = 1.0;

inline constexpr int kObsDim = 27;  // 2 position + 1 key count + 24 window

class FetchTheKeyEnv {
 public:
  explicit FetchTheKeyEnv(const EnvConfig& config);

  // Builds the room chain, scatters key i in room i, puts the agent at the
  // start-room center. Same seed, same placements.
  Eigen::VectorXd reset(std::uint64_t episode_seed);

  struct StepResult {
    Eigen::VectorXd obs;
    double reward = 0.0;
    bool done = false;
  };
  StepResult step(int action);

  Eigen::VectorXd observation() const;
  bool done() const { return done_; }
  bool started() const { return started_; }
  const EnvState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }

  // One character per cell; '@' marks the agent.
  std::string layout_text() const;

  static GridPos delta(int action);

 private:
  void build_layout(std::uint64_t episode_seed);

  EnvConfig config_;
  EnvState state_;
  bool done_ = true;
  bool started_ = false;
};

// Room geometry shared with the oracle: room r (0 = start, 1..K = key rooms,
// K+1 = goal) spans rows 1..5 and columns 6r+1..6r+5.
int grid_rows(int num_keys);
int grid_cols(int num_keys);
GridPos room_center(int room);
GridPos door_between(int room);  // door in the wall between room and room+1

}  // namespace temple
