#include "phonolens/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "phonolens/error.hpp"

namespace phonolens {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

std::int64_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

Matrix Tensor::as_matrix() const {
  Eigen::Index rows = 1;
  Eigen::Index cols = 1;
  if (shape.size() == 1) {
    cols = shape[0];
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else {
    fail(ErrorKind::shape, "expected rank 1 or 2 tensor, got rank " + std::to_string(shape.size()));
  }
  return Eigen::Map<const Matrix>(values.data(), rows, cols);
}

Tensor Tensor::from(const Matrix& m) {
  Tensor t;
  t.shape = {m.rows(), m.cols()};
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

Tensor Tensor::from(const Vector& v) {
  Tensor t;
  t.shape = {v.size()};
  t.values.assign(v.data(), v.data() + v.size());
  return t;
}

namespace {

float bf16_to_f32(std::uint16_t h) {
  const std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
  return std::bit_cast<float>(bits);
}

float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1f;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits = 0;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

TensorMap read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len > (std::uint64_t{1} << 30)) {
    fail(ErrorKind::parse, path.string() + ": bad safetensors header length");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) fail(ErrorKind::parse, path.string() + ": truncated safetensors header");
  const std::uint64_t data_start = 8 + header_len;

  json h;
  try {
    h = json::parse(header);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }

  TensorMap out;
  std::vector<char> raw;
  for (const auto& [name, info] : h.items()) {
    if (name == "__metadata__") continue;
    const auto dtype = info.at("dtype").get<std::string>();
    const auto offsets = info.at("data_offsets").get<std::vector<std::uint64_t>>();
    Tensor t;
    t.shape = info.at("shape").get<std::vector<std::int64_t>>();
    const auto n = static_cast<std::size_t>(t.numel());
    const std::size_t width = dtype == "F32" ? 4 : (dtype == "F16" || dtype == "BF16") ? 2 : 0;
    if (width == 0) fail(ErrorKind::parse, name + ": unsupported dtype " + dtype);
    if (offsets.size() != 2 || offsets[1] - offsets[0] != n * width) {
      fail(ErrorKind::parse, name + ": data offsets disagree with shape");
    }
    raw.resize(n * width);
    in.seekg(static_cast<std::streamoff>(data_start + offsets[0]));
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!in) fail(ErrorKind::parse, name + ": truncated tensor data");
    t.values.resize(n);
    if (width == 4) {
      std::memcpy(t.values.data(), raw.data(), raw.size());
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t v = 0;
        std::memcpy(&v, raw.data() + 2 * i, 2);
        t.values[i] = dtype == "BF16" ? bf16_to_f32(v) : f16_to_f32(v);
      }
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata) {
  json h = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = t.values.size() * sizeof(float);
    h[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!metadata.empty()) h["__metadata__"] = metadata;
  std::string header = h.dump();
  while (header.size() % 8 != 0) header.push_back(' ');

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [_, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!out) fail(ErrorKind::io, "short write to " + path.string());
}

TensorMap read_safetensors_dir(const std::filesystem::path& dir) {
  const auto single = dir / "model.safetensors";
  if (std::filesystem::exists(single)) return read_safetensors(single);
  const auto index_path = dir / "model.safetensors.index.json";
  std::ifstream in(index_path);
  if (!in) fail(ErrorKind::io, "no model.safetensors or index in " + dir.string());
  json index = json::parse(in);
  std::map<std::string, bool> shards;
  for (const auto& [_, file] : index.at("weight_map").items()) shards[file.get<std::string>()] = true;
  TensorMap out;
  for (const auto& [file, _] : shards) out.merge(read_safetensors(dir / file));
  return out;
}

void write_f32_blob(const std::filesystem::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
  if (!out) fail(ErrorKind::io, "short write to " + path.string());
}

std::vector<float> read_f32_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size % sizeof(float) != 0) fail(ErrorKind::parse, path.string() + ": size not a multiple of 4");
  std::vector<float> values(size / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size));
  return values;
}

}  // namespace phonolens
