#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "rng.hpp"

namespace temple {

using Mat = Eigen::MatrixXd;

enum class Partition { kHighLevel, kSubPolicy, kValueHead };

const char* partition_name(Partition p);
Partition partition_from_name(const std::string& name);

// Flat, named collection of all trainable tensors. Slot order is fixed at
// construction and defines the layout of the flattened view used by the
// optimizer and by finite-difference checks.
class ParameterVector {
 public:
  struct Slot {
    std::string name;
    Partition partition;
    Mat value;
  };

  int add(const std::string& name, Partition partition, Mat value);

  int index_of(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  const Mat& operator[](const std::string& name) const;
  Mat& operator[](const std::string& name);
  const Slot& slot(int i) const { return slots_[static_cast<std::size_t>(i)]; }
  Mat& slot_value(int i) { return slots_[static_cast<std::size_t>(i)].value; }
  int slot_count() const { return static_cast<int>(slots_.size()); }

  std::int64_t total_values() const;

  Eigen::VectorXd flatten() const;
  void set_from_flat(const Eigen::VectorXd& flat);

  // Gradients (or any per-parameter quantity) shaped like this vector.
  std::vector<Mat> zeros_like() const;
  static Eigen::VectorXd flatten_mats(const std::vector<Mat>& mats);

  bool same_shape(const ParameterVector& other) const;

 private:
  std::vector<Slot> slots_;
  std::unordered_map<std::string, int> by_name_;
};

// Glorot-uniform weight, zero bias.
Mat glorot_init(int rows, int cols, Rng& rng);

// Checkpoint format: <path>.json manifest plus <path>.bin little-endian
// float64 payload. extra_json carries run configuration for reload.
void save_checkpoint(const ParameterVector& params, const std::string& path_prefix,
                     const std::string& extra_json);
struct LoadedCheckpoint {
  ParameterVector params;
  std::string extra_json;
  int version = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path_prefix);

}  // namespace temple
