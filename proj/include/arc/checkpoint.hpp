#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "arc/entropy.hpp"
#include "arc/model.hpp"

namespace arc {

static_assert(std::endian::native == std::endian::little,
              "containers are written as raw little-endian arrays");

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kI32 = 2, kU32 = 3, kU8 = 4, kI64 = 5, kU64 = 6 };

std::size_t dtype_size(DType t);

struct NamedArray {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> bytes;

  template <typename T>
  static NamedArray from(std::string name, DType dtype, std::vector<std::uint64_t> shape,
                         std::span<const T> values) {
    NamedArray a{std::move(name), dtype, std::move(shape), std::vector<std::uint8_t>(values.size_bytes())};
    if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), values.size_bytes());
    return a;
  }
  template <typename T>
  std::vector<T> values() const {
    std::vector<T> out(bytes.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
    return out;
  }
  std::uint64_t element_count() const;
};

// 64-bit FNV-1a.
class Fnv1a64 {
 public:
  void update(std::span<const std::uint8_t> data);
  void update_u64(std::uint64_t v);
  void update_string(const std::string& s);
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ull;
};

// Named-array container:
//
//   "ARCK" | u32 version | 6 x u32 ModelConfig (N, M, kernel, stride,
//   channels, input size) | u32 array count | per array: u16 name length,
//   name, u8 dtype, u8 rank, rank x u64 dims, u64 data offset, u64 byte
//   count | u64 model hash | u64 data size | raw arrays | u64 FNV-1a of all
//   preceding bytes.
//
// All integers little-endian. The model hash covers the config and every
// array whose name does not start with "optim." or "train." (optimizer and
// bookkeeping state), so a training checkpoint and the bundle exported from
// it share a hash.
struct Checkpoint {
  ModelConfig config;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;
  std::uint64_t model_hash() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatError for bad magic/version/checksum or inconsistent layout.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Parameter arrays <-> container entries.
void append_parameters(Checkpoint& ckpt, const ParameterStore& params, const std::string& prefix = "");
ParameterStore extract_parameters(const Checkpoint& ckpt, const std::string& prefix = "");

void append_cdf_table(Checkpoint& ckpt, const CdfTable& table);
CdfTable extract_cdf_table(const Checkpoint& ckpt);
bool has_cdf_table(const Checkpoint& ckpt);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace arc
