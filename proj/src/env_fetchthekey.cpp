#include "env_fetchthekey.hpp"

#include <stdexcept>

#include "rng.hpp"

namespace temple {

namespace {
constexpr int kRoomSize = 5;
constexpr int kRoomStride = kRoomSize + 1;  // room plus its left wall
}  // namespace

void EnvConfig::validate() const {
  if (num_keys < 1 || num_keys > 4) {
    throw std::invalid_argument("num_keys must be in 1..4");
  }
  if (max_episode_steps < 1) {
    throw std::invalid_argument("max_episode_steps must be positive");
  }
}

int grid_rows(int) { return kRoomSize + 2; }
int grid_cols(int num_keys) { return (num_keys + 2) * kRoomStride + 1; }

GridPos room_center(int room) {
  return {1 + kRoomSize / 2, room * kRoomStride + 1 + kRoomSize / 2};
}

GridPos door_between(int room) {
  return {1 + kRoomSize / 2, (room + 1) * kRoomStride};
}

GridPos FetchTheKeyEnv::delta(int action) {
  switch (action) {
    case kUp: return {-1, 0};
    case kDown: return {1, 0};
    case kLeft: return {0, -1};
    case kRight: return {0, 1};
    default: throw std::invalid_argument("action must be in 0..3");
  }
}

FetchTheKeyEnv::FetchTheKeyEnv(const EnvConfig& config) : config_(config) {
  config_.validate();
}

void FetchTheKeyEnv::build_layout(std::uint64_t episode_seed) {
  const int K = config_.num_keys;
  state_.rows = grid_rows(K);
  state_.cols = grid_cols(K);
  state_.grid.assign(static_cast<std::size_t>(state_.rows * state_.cols),
                     Cell{CellKind::kWall, 0});

  for (int room = 0; room < K + 2; ++room) {
    for (int r = 1; r <= kRoomSize; ++r) {
      for (int c = room * kRoomStride + 1; c <= room * kRoomStride + kRoomSize; ++c) {
        state_.at(r, c) = Cell{CellKind::kFloor, 0};
      }
    }
  }
  // Door after room r needs r collected keys. Door 0 is always open.
  for (int room = 0; room < K + 1; ++room) {
    const GridPos d = door_between(room);
    state_.at(d.row, d.col) = Cell{CellKind::kDoor, room};
  }

  Rng rng(episode_seed);
  for (int key = 1; key <= K; ++key) {
    const int cell = rng.uniform_int(kRoomSize * kRoomSize);
    const int r = 1 + cell / kRoomSize;
    const int c = key * kRoomStride + 1 + cell % kRoomSize;
    state_.at(r, c) = Cell{CellKind::kKey, key};
  }

  const GridPos goal = room_center(K + 1);
  state_.at(goal.row, goal.col) = Cell{CellKind::kGoal, 0};

  state_.agent = room_center(0);
  state_.keys_collected = 0;
  state_.steps = 0;
}

Eigen::VectorXd FetchTheKeyEnv::reset(std::uint64_t episode_seed) {
  build_layout(episode_seed);
  done_ = false;
  started_ = true;
  return observation();
}

FetchTheKeyEnv::StepResult FetchTheKeyEnv::step(int action) {
  if (!started_ || done_) {
    throw std::logic_error("step called on a finished episode");
  }
  const GridPos d = delta(action);
  const int tr = state_.agent.row + d.row;
  const int tc = state_.agent.col + d.col;

  double reward = 0.0;
  if (state_.in_bounds(tr, tc)) {
    const Cell& target = state_.at(tr, tc);
    bool passable = false;
    switch (target.kind) {
      case CellKind::kFloor:
      case CellKind::kKey:
      case CellKind::kGoal:
        passable = true;
        break;
      case CellKind::kDoor:
        passable = state_.keys_collected >= target.index;
        break;
      case CellKind::kWall:
        passable = false;
        break;
    }
    if (passable) {
      state_.agent = {tr, tc};
      Cell& here = state_.at(tr, tc);
      if (here.kind == CellKind::kKey) {
        reward = 2.0;
        state_.keys_collected += 1;
        here = Cell{CellKind::kFloor, 0};
      } else if (here.kind == CellKind::kGoal &&
                 state_.keys_collected == config_.num_keys) {
        reward = 10.0;
        done_ = true;
      }
    }
  }

  state_.steps += 1;
  if (state_.steps >= config_.max_episode_steps) {
    done_ = true;
  }
  return StepResult{observation(), reward, done_};
}

Eigen::VectorXd FetchTheKeyEnv::observation() const {
  Eigen::VectorXd obs(kObsDim);
  obs[0] = static_cast<double>(state_.agent.row) / static_cast<double>(state_.rows - 1);
  obs[1] = static_cast<double>(state_.agent.col) / static_cast<double>(state_.cols - 1);
  obs[2] = static_cast<double>(state_.keys_collected) / static_cast<double>(config_.num_keys);

  int k = 3;
  for (int dr = -2; dr <= 2; ++dr) {
    for (int dc = -2; dc <= 2; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const int r = state_.agent.row + dr;
      const int c = state_.agent.col + dc;
      double code = kCodeWall;
      if (state_.in_bounds(r, c)) {
        const Cell& cell = state_.at(r, c);
        switch (cell.kind) {
          case CellKind::kFloor: code = kCodeFloor; break;
          case CellKind::kWall: code = kCodeWall; break;
          case CellKind::kDoor:
            code = state_.keys_collected >= cell.index ? kCodeFloor : kCodeClosedDoor;
            break;
          case CellKind::kKey: code = kCodeKey; break;
          case CellKind::kGoal: code = kCodeGoal; break;
        }
      }
      obs[k++] = code;
    }
  }
  return obs;
}

std::string FetchTheKeyEnv::layout_text() const {
  std::string out;
  out.reserve(static_cast<std::size_t>((state_.cols + 1) * state_.rows));
  for (int r = 0; r < state_.rows; ++r) {
    for (int c = 0; c < state_.cols; ++c) {
      char ch = '?';
      if (state_.agent.row == r && state_.agent.col == c) {
        ch = '@';
      } else {
        const Cell& cell = state_.at(r, c);
        switch (cell.kind) {
          case CellKind::kFloor: ch = '.'; break;
          case CellKind::kWall: ch = '#'; break;
          case CellKind::kDoor:
            ch = state_.keys_collected >= cell.index ? '/' : 'D';
            break;
          case CellKind::kKey: ch = static_cast<char>('0' + cell.index); break;
          case CellKind::kGoal: ch = 'G'; break;
        }
      }
      out.push_back(ch);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace temple
