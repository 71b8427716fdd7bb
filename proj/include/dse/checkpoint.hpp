#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace dse {

/// Shape-annotated float32 array, row-major.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named tensors plus a JSON metadata block.
///
/// Binary layout (all integers little-endian):
///
///     magic     8 bytes   "DSECKPT" followed by a NUL
///     version   u32       1
///     meta_len  u64       length of the JSON metadata
///     meta      bytes     UTF-8 JSON (config echo, metrics, kind)
///     count     u32       number of tensors
///     per tensor:
///       name_len u32, name bytes
///       ndim u32, ndim x u64 dims
///       prod(dims) x float32 (row-major)
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  /// Stores `m` rounded to float32.
  void put(const std::string& name, const Eigen::MatrixXd& m);
  /// Throws ShapeError if missing or not 2-D.
  Eigen::MatrixXd matrix(const std::string& name) const;
  bool contains(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&);
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws ParseError with the byte offset of the first malformed field.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws MissingArtifactError when the file does not exist.
Checkpoint load_checkpoint(const std::string& path);

/// Rounds every entry to the nearest float32, the precision checkpoints keep.
Eigen::MatrixXd round_to_float(const Eigen::MatrixXd& m);

}  // namespace dse
