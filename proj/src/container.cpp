#include "noisecouple/container.hpp"

#include "noisecouple/random.hpp"
#include "noisecouple/sampler.hpp"
#include "noisecouple/serialize.hpp"

#include <openssl/evp.h>

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

namespace noisecouple {

static_assert(std::endian::native == std::endian::little, "NPY export assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_tuple(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) s += ",";
    if (i + 1 < shape.size()) s += " ";
  }
  return s + ")";
}

}  // namespace

std::string_view to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view name) {
  if (name == "f32" || name == "float32") return DType::F32;
  if (name == "f64" || name == "float64") return DType::F64;
  throw SpecError("unknown dtype '" + std::string(name) + "'");
}

std::string encode_npy(std::span<const double> data, const std::vector<std::size_t>& shape, DType dtype) {
  if (product(shape) != data.size()) throw DimensionError("NPY shape does not match data length");
  std::string header = "{'descr': '";
  header += dtype == DType::F32 ? "<f4" : "<f8";
  header += "', 'fortran_order': False, 'shape': " + shape_tuple(shape) + ", }";
  // magic(6) + version(2) + header_len(2) + header, padded so the data starts on a 64-byte boundary.
  const std::size_t unpadded = kMagicLen + 4 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::string out(kMagic, kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  const auto hlen = static_cast<std::uint16_t>(header.size());
  out.push_back(static_cast<char>(hlen & 0xff));
  out.push_back(static_cast<char>(hlen >> 8));
  out += header;
  const std::size_t width = dtype == DType::F32 ? 4 : 8;
  const std::size_t offset = out.size();
  out.resize(offset + width * data.size());
  char* dst = out.data() + offset;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (dtype == DType::F32) {
      const float f = static_cast<float>(data[i]);
      std::memcpy(dst + 4 * i, &f, 4);
    } else {
      std::memcpy(dst + 8 * i, &data[i], 8);
    }
  }
  return out;
}

NpyArray decode_npy(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 4 || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    throw IntegrityError("not an NPY file");
  }
  if (bytes[6] != '\x01' || bytes[7] != '\x00') throw IntegrityError("only NPY format version 1.0 is supported");
  const std::size_t hlen = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
  if (bytes.size() < 10 + hlen) throw IntegrityError("truncated NPY header");
  const std::string header = bytes.substr(10, hlen);

  NpyArray arr;
  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, descr_re)) throw IntegrityError("NPY header lacks descr");
  if (m[1] == "<f4") {
    arr.dtype = DType::F32;
  } else if (m[1] == "<f8") {
    arr.dtype = DType::F64;
  } else {
    throw IntegrityError("unsupported NPY dtype " + m[1].str());
  }
  if (!std::regex_search(header, m, fortran_re) || m[1] != "False") throw IntegrityError("NPY data must be C order");
  if (!std::regex_search(header, m, shape_re)) throw IntegrityError("NPY header lacks shape");
  std::stringstream dims(m[1].str());
  std::string item;
  while (std::getline(dims, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    arr.shape.push_back(static_cast<std::size_t>(std::stoull(item.substr(first))));
  }
  const std::size_t count = product(arr.shape);
  const std::size_t width = arr.dtype == DType::F32 ? 4 : 8;
  const std::size_t offset = 10 + hlen;
  if (bytes.size() != offset + count * width) throw IntegrityError("NPY payload size does not match its shape");
  arr.data.resize(count);
  const char* src = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i) {
    if (arr.dtype == DType::F32) {
      float f;
      std::memcpy(&f, src + 4 * i, 4);
      arr.data[i] = f;
    } else {
      std::memcpy(&arr.data[i], src + 8 * i, 8);
    }
  }
  return arr;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return os.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

void write_npy(const std::filesystem::path& path, std::span<const double> data, const std::vector<std::size_t>& shape,
               DType dtype) {
  write_file(path, encode_npy(data, shape, dtype));
}

NpyArray read_npy(const std::filesystem::path& path) { return decode_npy(read_file(path)); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json Sidecar::to_json() const {
  return {{"format_version", format_version},
          {"spec", spec_to_json(spec)},
          {"seed", seed},
          {"stream_id", stream_id},
          {"rng", {{"family", rng_family}, {"version", rng_version}, {"gaussian_transform", gaussian_transform}}},
          {"created_unix_seconds", created_unix_seconds},
          {"checksum", checksum},
          {"dtype", std::string(to_string(dtype))},
          {"shape", shape}};
}

Sidecar Sidecar::from_json(const nlohmann::json& j) {
  try {
    Sidecar s{spec_from_json(j.at("spec"))};
    s.format_version = j.at("format_version").get<int>();
    if (s.format_version != 1) throw IntegrityError("unsupported sidecar format_version");
    s.seed = j.at("seed").get<std::uint64_t>();
    s.stream_id = j.at("stream_id").get<std::uint64_t>();
    const auto& rng = j.at("rng");
    s.rng_family = rng.at("family").get<std::string>();
    s.rng_version = rng.at("version").get<int>();
    s.gaussian_transform = rng.at("gaussian_transform").get<std::string>();
    s.created_unix_seconds = j.at("created_unix_seconds").get<std::int64_t>();
    s.checksum = j.at("checksum").get<std::string>();
    s.dtype = parse_dtype(j.at("dtype").get<std::string>());
    s.shape = j.at("shape").get<std::vector<std::size_t>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed sidecar: ") + e.what());
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& tensor_path) {
  return std::filesystem::path(tensor_path.string() + ".json");
}

RowMatrix quantize(const RowMatrix& m, DType dtype) {
  if (dtype == DType::F64) return m;
  return m.cast<float>().cast<double>();
}

Sidecar export_container(const NoiseBatch& batch, const std::filesystem::path& path, DType dtype,
                         std::vector<std::size_t> shape) {
  const std::size_t k = batch.k();
  const std::size_t d = batch.d();
  if (shape.empty()) shape = {k, d};
  if (shape.size() < 2 || shape.front() != k) throw DimensionError("container shape must start with k");
  if (product(shape) != k * d) throw DimensionError("trailing container dims must multiply to d");
  if (batch.spec.k() != k || batch.spec.d() != d) throw DimensionError("batch shape does not match its spec");

  const std::string bytes =
      encode_npy(std::span<const double>(batch.vectors.data(), static_cast<std::size_t>(batch.vectors.size())), shape,
                 dtype);
  write_file(path, bytes);

  Sidecar s{batch.spec};
  s.seed = batch.seed;
  s.stream_id = batch.stream_id;
  s.rng_family = std::string(kRngIdentity.family);
  s.rng_version = kRngIdentity.version;
  s.gaussian_transform = std::string(kRngIdentity.gaussian_transform);
  s.created_unix_seconds =
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
  s.checksum = sha256_hex(bytes);
  s.dtype = dtype;
  s.shape = shape;
  write_file(sidecar_path(path), s.to_json().dump(2) + "\n");
  return s;
}

LoadedContainer load_container(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(sidecar_path(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw IntegrityError(std::string("sidecar is not valid JSON: ") + e.what());
  }
  Sidecar s = Sidecar::from_json(meta);
  if (sha256_hex(bytes) != s.checksum) throw IntegrityError("checksum mismatch for " + path.string());
  NpyArray arr = decode_npy(bytes);
  if (arr.dtype != s.dtype) throw IntegrityError("tensor dtype differs from sidecar");
  if (arr.shape != s.shape) throw IntegrityError("tensor shape differs from sidecar");
  if (arr.shape.size() < 2 || arr.shape.front() != s.spec.k()) throw IntegrityError("tensor leading dim must equal k");
  if (product(arr.shape) / arr.shape.front() != s.spec.d()) throw IntegrityError("trailing tensor dims must multiply to d");

  const auto k = static_cast<Eigen::Index>(s.spec.k());
  const auto d = static_cast<Eigen::Index>(s.spec.d());
  RowMatrix z = Eigen::Map<const RowMatrix>(arr.data.data(), k, d);
  NoiseBatch batch{std::move(z), s.spec, s.seed, s.stream_id};
  return {std::move(batch), std::move(s)};
}

NoiseBatch replay(const Sidecar& sidecar) {
  if (sidecar.rng_family != kRngIdentity.family || sidecar.rng_version != kRngIdentity.version ||
      sidecar.gaussian_transform != kRngIdentity.gaussian_transform) {
    throw IntegrityError("sidecar RNG identity differs from this build; bitwise replay is not possible");
  }
  return sample(sidecar.spec, RandomStream(sidecar.seed, sidecar.stream_id));
}

}  // namespace noisecouple
