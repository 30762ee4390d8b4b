#pragma once

// Portable noise export: an NPY v1.0 tensor (little-endian float32/float64,
// C order, shape (k, d) or (k, C, H, W)) plus a JSON sidecar at PATH.json
// recording the spec, seed, stream id, RNG identity and the SHA-256 of the
// tensor file.

#include "noisecouple/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace noisecouple {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checksum mismatch or a sidecar that does not describe the tensor.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType { F32, F64 };

std::string_view to_string(DType dtype);
DType parse_dtype(std::string_view name);  // "f32" | "f64"

struct NpyArray {
  std::vector<std::size_t> shape;
  DType dtype = DType::F64;
  std::vector<double> data;  // C order, widened to double
};

/// Serializes `data` (C order) with the given shape; product(shape) must equal data.size().
std::string encode_npy(std::span<const double> data, const std::vector<std::size_t>& shape, DType dtype);
NpyArray decode_npy(const std::string& bytes);

void write_npy(const std::filesystem::path& path, std::span<const double> data, const std::vector<std::size_t>& shape,
               DType dtype);
NpyArray read_npy(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

struct Sidecar {
  explicit Sidecar(CouplingSpec s) : spec(std::move(s)) {}

  CouplingSpec spec;
  int format_version = 1;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::string rng_family;
  int rng_version = 0;
  std::string gaussian_transform;
  std::int64_t created_unix_seconds = 0;
  std::string checksum;
  DType dtype = DType::F32;
  std::vector<std::size_t> shape;

  nlohmann::json to_json() const;
  static Sidecar from_json(const nlohmann::json& j);
};

std::filesystem::path sidecar_path(const std::filesystem::path& tensor_path);

/// Writes the tensor and its sidecar. `shape` is (k, d) when empty; otherwise
/// it must start with k and its trailing dims must multiply to d.
Sidecar export_container(const NoiseBatch& batch, const std::filesystem::path& path, DType dtype,
                         std::vector<std::size_t> shape = {});

struct LoadedContainer {
  NoiseBatch batch;
  Sidecar sidecar;
};

/// Verifies the checksum (IntegrityError) and the shape against the spec.
LoadedContainer load_container(const std::filesystem::path& path);

/// Re-samples from the sidecar's (spec, seed, stream id). Throws IntegrityError
/// when the sidecar's RNG identity differs from this build's.
NoiseBatch replay(const Sidecar& sidecar);

/// Rounds every entry through the given dtype (identity for F64).
RowMatrix quantize(const RowMatrix& m, DType dtype);

}  // namespace noisecouple
