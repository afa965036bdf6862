#include "params.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace temple {

using nlohmann::json;

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::kHighLevel: return "high";
    case Partition::kSubPolicy: return "sub";
    case Partition::kValueHead: return "value";
  }
  return "?";
}

Partition partition_from_name(const std::string& name) {
  if (name == "high") return Partition::kHighLevel;
  if (name == "sub") return Partition::kSubPolicy;
  if (name == "value") return Partition::kValueHead;
  throw std::invalid_argument("unknown parameter partition: " + name);
}

int ParameterVector::add(const std::string& name, Partition partition, Mat value) {
  if (by_name_.count(name) > 0) {
    throw std::invalid_argument("duplicate parameter slot: " + name);
  }
  const int idx = static_cast<int>(slots_.size());
  slots_.push_back(Slot{name, partition, std::move(value)});
  by_name_[name] = idx;
  return idx;
}

int ParameterVector::index_of(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) {
    throw std::invalid_argument("unknown parameter slot: " + name);
  }
  return it->second;
}

const Mat& ParameterVector::operator[](const std::string& name) const {
  return slots_[static_cast<std::size_t>(index_of(name))].value;
}

Mat& ParameterVector::operator[](const std::string& name) {
  return slots_[static_cast<std::size_t>(index_of(name))].value;
}

std::int64_t ParameterVector::total_values() const {
  std::int64_t n = 0;
  for (const Slot& s : slots_) n += s.value.size();
  return n;
}

Eigen::VectorXd ParameterVector::flatten() const {
  Eigen::VectorXd v(total_values());
  std::int64_t off = 0;
  for (const Slot& s : slots_) {
    const auto sz = s.value.size();
    v.segment(off, sz) = Eigen::Map<const Eigen::VectorXd>(s.value.data(), sz);
    off += sz;
  }
  return v;
}

void ParameterVector::set_from_flat(const Eigen::VectorXd& flat) {
  if (flat.size() != total_values()) {
    throw std::invalid_argument("flat parameter size mismatch");
  }
  std::int64_t off = 0;
  for (Slot& s : slots_) {
    const auto sz = s.value.size();
    Eigen::Map<Eigen::VectorXd>(s.value.data(), sz) = flat.segment(off, sz);
    off += sz;
  }
}

std::vector<Mat> ParameterVector::zeros_like() const {
  std::vector<Mat> out;
  out.reserve(slots_.size());
  for (const Slot& s : slots_) {
    out.push_back(Mat::Zero(s.value.rows(), s.value.cols()));
  }
  return out;
}

Eigen::VectorXd ParameterVector::flatten_mats(const std::vector<Mat>& mats) {
  std::int64_t total = 0;
  for (const Mat& m : mats) total += m.size();
  Eigen::VectorXd v(total);
  std::int64_t off = 0;
  for (const Mat& m : mats) {
    v.segment(off, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    off += m.size();
  }
  return v;
}

bool ParameterVector::same_shape(const ParameterVector& other) const {
  if (slot_count() != other.slot_count()) return false;
  for (int i = 0; i < slot_count(); ++i) {
    const Slot& a = slot(i);
    const Slot& b = other.slot(i);
    if (a.name != b.name || a.partition != b.partition ||
        a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

Mat glorot_init(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      m(i, j) = rng.uniform(-bound, bound);
    }
  }
  return m;
}

namespace {
constexpr int kCheckpointVersion = 1;
}

void save_checkpoint(const ParameterVector& params, const std::string& path_prefix,
                     const std::string& extra_json) {
  json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["payload"] = path_prefix.substr(path_prefix.find_last_of('/') + 1) + ".bin";
  manifest["byte_order"] = "little";
  manifest["dtype"] = "float64";
  manifest["total_values"] = params.total_values();
  json slots = json::array();
  std::int64_t offset = 0;
  for (int i = 0; i < params.slot_count(); ++i) {
    const auto& s = params.slot(i);
    slots.push_back({{"name", s.name},
                     {"partition", partition_name(s.partition)},
                     {"rows", s.value.rows()},
                     {"cols", s.value.cols()},
                     {"offset", offset}});
    offset += s.value.size();
  }
  manifest["slots"] = std::move(slots);
  if (!extra_json.empty()) {
    manifest["run"] = json::parse(extra_json);
  }

  {
    std::ofstream mf(path_prefix + ".json");
    if (!mf) throw std::runtime_error("cannot write checkpoint manifest: " + path_prefix + ".json");
    mf << manifest.dump(2) << "\n";
  }
  {
    std::ofstream bf(path_prefix + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write checkpoint payload: " + path_prefix + ".bin");
    for (int i = 0; i < params.slot_count(); ++i) {
      const Mat& m = params.slot(i).value;
      bf.write(reinterpret_cast<const char*>(m.data()),
               static_cast<std::streamsize>(sizeof(double)) * m.size());
    }
    if (!bf) throw std::runtime_error("short write on checkpoint payload");
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path_prefix) {
  std::ifstream mf(path_prefix + ".json");
  if (!mf) throw std::runtime_error("cannot open checkpoint manifest: " + path_prefix + ".json");
  json manifest = json::parse(mf);
  if (!manifest.contains("version")) {
    throw std::runtime_error("checkpoint manifest missing version field");
  }
  LoadedCheckpoint out;
  out.version = manifest["version"].get<int>();
  if (out.version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }

  const std::string dir =
      path_prefix.find('/') == std::string::npos
          ? std::string()
          : path_prefix.substr(0, path_prefix.find_last_of('/') + 1);
  const std::string payload = dir + manifest["payload"].get<std::string>();
  std::ifstream bf(payload, std::ios::binary);
  if (!bf) throw std::runtime_error("cannot open checkpoint payload: " + payload);

  for (const auto& s : manifest["slots"]) {
    const auto rows = s["rows"].get<Eigen::Index>();
    const auto cols = s["cols"].get<Eigen::Index>();
    Mat m(rows, cols);
    bf.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * m.size());
    if (!bf) throw std::runtime_error("short read on checkpoint payload");
    out.params.add(s["name"].get<std::string>(),
                   partition_from_name(s["partition"].get<std::string>()),
                   std::move(m));
  }
  if (out.params.total_values() != manifest["total_values"].get<std::int64_t>()) {
    throw std::runtime_error("checkpoint total_values mismatch");
  }
  if (manifest.contains("run")) {
    out.extra_json = manifest["run"].dump();
  }
  return out;
}

}  // namespace temple
