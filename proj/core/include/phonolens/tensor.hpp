#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace phonolens {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;
using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorD = Eigen::VectorXd;

inline std::span<const float> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

inline Vector to_vector(std::span<const float> s) {
  return Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
}

// Dense float32 tensor as read from / written to a tensor container.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  std::int64_t numel() const;
  Matrix as_matrix() const;  // rank 1 -> 1 x n, rank 2 -> rows x cols
  static Tensor from(const Matrix& m);
  static Tensor from(const Vector& v);
};

using TensorMap = std::map<std::string, Tensor>;

// safetensors container: little-endian u64 header length, JSON header,
// raw data. F32, F16 and BF16 are widened to float32 on read.
TensorMap read_safetensors(const std::filesystem::path& path);
void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata = {});

// Reads either `model.safetensors` or every shard listed in
// `model.safetensors.index.json` inside `dir`.
TensorMap read_safetensors_dir(const std::filesystem::path& dir);

// Raw little-endian float32 blob, no header.
void write_f32_blob(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_blob(const std::filesystem::path& path);

}  // namespace phonolens
