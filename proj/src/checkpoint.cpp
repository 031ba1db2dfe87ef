#include "arc/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "arc/error.hpp"

namespace arc {

namespace {

constexpr char kMagic[4] = {'A', 'R', 'C', 'K'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& out() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint is truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

bool is_model_array(const std::string& name) {
  return name.rfind("optim.", 0) != 0 && name.rfind("train.", 0) != 0;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: case DType::kI32: case DType::kU32: return 4;
    case DType::kF64: case DType::kI64: case DType::kU64: return 8;
    case DType::kU8: return 1;
  }
  throw FormatError("unknown dtype");
}

std::uint64_t NamedArray::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void Fnv1a64::update(std::span<const std::uint8_t> data) {
  for (std::uint8_t b : data) {
    state_ ^= b;
    state_ *= 0x100000001b3ull;
  }
}

void Fnv1a64::update_u64(std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  update(b);
}

void Fnv1a64::update_string(const std::string& s) {
  update_u64(s.size());
  update(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Checkpoint::get(const std::string& name) const {
  const auto* a = find(name);
  if (!a) throw FormatError("checkpoint has no array " + name);
  return *a;
}

std::uint64_t Checkpoint::model_hash() const {
  Fnv1a64 h;
  for (int v : {config.width_n, config.hidden_layers_m, config.kernel_size, config.stride,
                config.input_channels, config.input_size}) {
    h.update_u64(static_cast<std::uint64_t>(v));
  }
  for (const auto& a : arrays) {
    if (!is_model_array(a.name)) continue;
    h.update_string(a.name);
    h.update_u64(static_cast<std::uint64_t>(a.dtype));
    h.update_u64(a.shape.size());
    for (auto d : a.shape) h.update_u64(d);
    h.update(a.bytes);
  }
  return h.digest();
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  for (int v : {ckpt.config.width_n, ckpt.config.hidden_layers_m, ckpt.config.kernel_size,
                ckpt.config.stride, ckpt.config.input_channels, ckpt.config.input_size}) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.arrays.size()));
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (a.name.size() > 0xFFFF || a.shape.size() > 0xFF) throw ConfigError("array " + a.name + " cannot be stored");
    if (a.element_count() * dtype_size(a.dtype) != a.bytes.size()) {
      throw ConfigError("array " + a.name + " byte count does not match its shape");
    }
    w.le<std::uint16_t>(static_cast<std::uint16_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(a.dtype));
    w.le<std::uint8_t>(static_cast<std::uint8_t>(a.shape.size()));
    for (auto d : a.shape) w.le<std::uint64_t>(d);
    w.le<std::uint64_t>(offset);
    w.le<std::uint64_t>(a.bytes.size());
    offset += a.bytes.size();
  }
  w.le<std::uint64_t>(ckpt.model_hash());
  w.le<std::uint64_t>(offset);
  for (const auto& a : ckpt.arrays) w.bytes(a.bytes.data(), a.bytes.size());
  Fnv1a64 sum;
  sum.update(w.out());
  w.le<std::uint64_t>(sum.digest());
  return std::move(w.out());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  Fnv1a64 sum;
  sum.update(bytes.first(bytes.size() - 8));
  Reader tail(bytes.last(8));
  if (tail.le<std::uint64_t>() != sum.digest()) throw FormatError("checkpoint checksum mismatch");

  Reader r(bytes.first(bytes.size() - 8));
  r.take(4);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config.width_n = static_cast<int>(r.le<std::uint32_t>());
  ckpt.config.hidden_layers_m = static_cast<int>(r.le<std::uint32_t>());
  ckpt.config.kernel_size = static_cast<int>(r.le<std::uint32_t>());
  ckpt.config.stride = static_cast<int>(r.le<std::uint32_t>());
  ckpt.config.input_channels = static_cast<int>(r.le<std::uint32_t>());
  ckpt.config.input_size = static_cast<int>(r.le<std::uint32_t>());
  const auto count = r.le<std::uint32_t>();
  struct Entry {
    std::uint64_t offset, size;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = r.le<std::uint16_t>();
    const auto name = r.take(name_len);
    a.name.assign(name.begin(), name.end());
    const auto dtype = r.le<std::uint8_t>();
    if (dtype > static_cast<std::uint8_t>(DType::kU64)) throw FormatError("unknown dtype in " + a.name);
    a.dtype = static_cast<DType>(dtype);
    const auto rank = r.le<std::uint8_t>();
    for (int d = 0; d < rank; ++d) a.shape.push_back(r.le<std::uint64_t>());
    const Entry e{r.le<std::uint64_t>(), r.le<std::uint64_t>()};
    if (e.size != a.element_count() * dtype_size(a.dtype)) {
      throw FormatError("array " + a.name + " byte count does not match its shape");
    }
    entries.push_back(e);
    ckpt.arrays.push_back(std::move(a));
  }
  const auto stored_hash = r.le<std::uint64_t>();
  const auto data_size = r.le<std::uint64_t>();
  const std::size_t data_start = r.pos();
  if (data_start + data_size != bytes.size() - 8) throw FormatError("checkpoint data section has wrong length");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].offset + entries[i].size > data_size) throw FormatError("array outside data section");
    const auto* p = bytes.data() + data_start + entries[i].offset;
    ckpt.arrays[i].bytes.assign(p, p + entries[i].size);
  }
  if (ckpt.model_hash() != stored_hash) throw FormatError("checkpoint model hash mismatch");
  return ckpt;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

void append_parameters(Checkpoint& ckpt, const ParameterStore& params, const std::string& prefix) {
  for (const auto& [name, t] : params) {
    std::vector<std::uint64_t> shape(t.shape().begin(), t.shape().end());
    ckpt.arrays.push_back(NamedArray::from<float>(prefix + name, DType::kF32, std::move(shape), t.span()));
  }
}

ParameterStore extract_parameters(const Checkpoint& ckpt, const std::string& prefix) {
  ParameterStore params;
  for (const auto& a : ckpt.arrays) {
    std::string name;
    if (prefix.empty()) {
      if (!is_model_array(a.name) || starts_with(a.name, "cdf.")) continue;
      name = a.name;
    } else {
      if (!starts_with(a.name, prefix)) continue;
      name = a.name.substr(prefix.size());
    }
    if (a.dtype != DType::kF32) throw FormatError("parameter " + a.name + " is not float32");
    Shape shape(a.shape.begin(), a.shape.end());
    params.add(name, Tensor<float>(std::move(shape), a.values<float>()));
  }
  return params;
}

void append_cdf_table(Checkpoint& ckpt, const CdfTable& table) {
  std::vector<std::int32_t> min_symbol;
  std::vector<float> offset;
  std::vector<std::uint32_t> lengths;
  std::vector<std::uint32_t> cumulative;
  for (const auto& ch : table.channels) {
    min_symbol.push_back(ch.min_symbol);
    offset.push_back(ch.offset);
    lengths.push_back(static_cast<std::uint32_t>(ch.cumulative.size()));
    cumulative.insert(cumulative.end(), ch.cumulative.begin(), ch.cumulative.end());
  }
  const std::uint64_t c = table.channels.size();
  ckpt.arrays.push_back(NamedArray::from<std::int32_t>("cdf.min_symbol", DType::kI32, {c}, min_symbol));
  ckpt.arrays.push_back(NamedArray::from<float>("cdf.offset", DType::kF32, {c}, offset));
  ckpt.arrays.push_back(NamedArray::from<std::uint32_t>("cdf.length", DType::kU32, {c}, lengths));
  ckpt.arrays.push_back(
      NamedArray::from<std::uint32_t>("cdf.cumulative", DType::kU32, {cumulative.size()}, cumulative));
}

bool has_cdf_table(const Checkpoint& ckpt) { return ckpt.find("cdf.cumulative") != nullptr; }

CdfTable extract_cdf_table(const Checkpoint& ckpt) {
  const auto min_symbol = ckpt.get("cdf.min_symbol").values<std::int32_t>();
  const auto offset = ckpt.get("cdf.offset").values<float>();
  const auto lengths = ckpt.get("cdf.length").values<std::uint32_t>();
  const auto cumulative = ckpt.get("cdf.cumulative").values<std::uint32_t>();
  if (offset.size() != min_symbol.size() || lengths.size() != min_symbol.size()) {
    throw FormatError("CDF table arrays disagree on channel count");
  }
  CdfTable table;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < min_symbol.size(); ++c) {
    if (pos + lengths[c] > cumulative.size()) throw FormatError("CDF table is truncated");
    ChannelCdf ch;
    ch.min_symbol = min_symbol[c];
    ch.offset = offset[c];
    ch.cumulative.assign(cumulative.begin() + static_cast<std::ptrdiff_t>(pos),
                         cumulative.begin() + static_cast<std::ptrdiff_t>(pos + lengths[c]));
    pos += lengths[c];
    table.channels.push_back(std::move(ch));
  }
  if (pos != cumulative.size()) throw FormatError("CDF table has trailing entries");
  table.validate();
  return table;
}

}  // namespace arc
