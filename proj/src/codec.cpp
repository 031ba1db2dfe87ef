#include "arc/codec.hpp"

#include <cstring>
#include <limits>
#include <sstream>

#include "arc/error.hpp"
#include "arc/range_coder.hpp"

namespace arc {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in[pos + i]) << (8 * i));
  pos += sizeof(T);
  return v;
}

std::uint16_t fit_u16(int v, const char* what) {
  if (v < 0 || v > std::numeric_limits<std::uint16_t>::max()) {
    throw InputError(std::string(what) + " " + std::to_string(v) + " does not fit the bitstream header");
  }
  return static_cast<std::uint16_t>(v);
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

void check_hash(const Bitstream& bs, const ModelBundle& bundle) {
  if (bs.header.model_hash != bundle.hash) {
    throw ModelMismatchError("model hash mismatch: bitstream was produced by model " + hex(bs.header.model_hash) +
                             ", decoder has " + hex(bundle.hash));
  }
  if (bs.header.width_n != bundle.config.width_n || bs.header.hidden_layers_m != bundle.config.hidden_layers_m) {
    throw ModelMismatchError("bitstream (N, M) does not match the model");
  }
}

}  // namespace

ModelBundle ModelBundle::make(const ModelConfig& config, ParameterStore params, CdfTable table) {
  check_parameters(params, config);
  if (table.channels.size() != static_cast<std::size_t>(config.width_n)) {
    throw ConfigError("CDF table has " + std::to_string(table.channels.size()) + " channels, model has " +
                      std::to_string(config.width_n));
  }
  table.validate();
  ModelBundle b{config, std::move(params), std::move(table), 0};
  b.hash = b.to_checkpoint().model_hash();
  return b;
}

ModelBundle ModelBundle::from_checkpoint(const Checkpoint& ckpt) {
  if (!has_cdf_table(ckpt)) throw FormatError("checkpoint carries no frozen CDF table");
  ModelBundle b{ckpt.config, extract_parameters(ckpt), extract_cdf_table(ckpt), ckpt.model_hash()};
  check_parameters(b.params, b.config);
  if (b.table.channels.size() != static_cast<std::size_t>(b.config.width_n)) {
    throw FormatError("CDF table channel count does not match the model");
  }
  return b;
}

ModelBundle ModelBundle::load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

Checkpoint ModelBundle::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = config;
  append_parameters(ckpt, params);
  append_cdf_table(ckpt, table);
  return ckpt;
}

std::vector<std::uint8_t> Bitstream::serialize() const {
  if (payload.size() != header.payload_length) throw ConfigError("bitstream payload length disagrees with header");
  std::vector<std::uint8_t> out;
  out.reserve(total_bytes());
  out.insert(out.end(), BitstreamHeader::kMagic.begin(), BitstreamHeader::kMagic.end());
  put_le<std::uint8_t>(out, BitstreamHeader::kVersion);
  put_le(out, header.width_n);
  put_le(out, header.hidden_layers_m);
  put_le(out, header.image_width);
  put_le(out, header.image_height);
  put_le(out, header.latent_channels);
  put_le(out, header.latent_height);
  put_le(out, header.latent_width);
  put_le(out, header.model_hash);
  put_le(out, header.payload_length);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Bitstream Bitstream::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), BitstreamHeader::kMagic.data(), 4) != 0) {
    throw FormatError("not an ARC1 bitstream (bad magic)");
  }
  if (bytes[4] != BitstreamHeader::kVersion) {
    throw FormatError("unsupported bitstream version " + std::to_string(bytes[4]));
  }
  if (bytes.size() < BitstreamHeader::kSize) throw DecodeError("bitstream header is truncated");
  Bitstream bs;
  std::size_t pos = 5;
  auto& h = bs.header;
  h.width_n = get_le<std::uint16_t>(bytes, pos);
  h.hidden_layers_m = get_le<std::uint8_t>(bytes, pos);
  h.image_width = get_le<std::uint16_t>(bytes, pos);
  h.image_height = get_le<std::uint16_t>(bytes, pos);
  h.latent_channels = get_le<std::uint16_t>(bytes, pos);
  h.latent_height = get_le<std::uint16_t>(bytes, pos);
  h.latent_width = get_le<std::uint16_t>(bytes, pos);
  h.model_hash = get_le<std::uint64_t>(bytes, pos);
  h.payload_length = get_le<std::uint32_t>(bytes, pos);

  ModelConfig shape_rule;
  shape_rule.width_n = h.width_n;
  shape_rule.hidden_layers_m = h.hidden_layers_m;
  const int factor = 1 << (h.hidden_layers_m + 2);
  if (h.hidden_layers_m < 1 || h.hidden_layers_m > 12 || h.image_width == 0 || h.image_height == 0 ||
      h.image_width % factor != 0 || h.image_height % factor != 0 || h.latent_channels != h.width_n ||
      h.latent_height != h.image_height / factor || h.latent_width != h.image_width / factor) {
    throw FormatError("bitstream header dimensions are inconsistent");
  }
  const std::size_t available = bytes.size() - BitstreamHeader::kSize;
  if (available < h.payload_length) {
    throw DecodeError("bitstream payload is truncated: header declares " + std::to_string(h.payload_length) +
                      " bytes, " + std::to_string(available) + " present");
  }
  if (available > h.payload_length) throw DecodeError("bitstream has trailing bytes after the payload");
  bs.payload.assign(bytes.begin() + BitstreamHeader::kSize, bytes.end());
  return bs;
}

QuantizedLatent encode_latent(const ImageTensor& image, const ModelBundle& bundle, Exec exec) {
  const Tensor<float> y = analysis_forward(image, bundle.params, bundle.config, exec);
  return quantize_eval(y, bundle.table.offsets());
}

Bitstream encode_image(const ImageTensor& image, const ModelBundle& bundle, Exec exec) {
  const QuantizedLatent q = encode_latent(image, bundle, exec);
  Bitstream bs;
  auto& h = bs.header;
  h.width_n = fit_u16(bundle.config.width_n, "N");
  h.hidden_layers_m = static_cast<std::uint8_t>(bundle.config.hidden_layers_m);
  h.image_width = fit_u16(image.width(), "image width");
  h.image_height = fit_u16(image.height(), "image height");
  h.latent_channels = fit_u16(q.shape[0], "latent channels");
  h.latent_height = fit_u16(q.shape[1], "latent height");
  h.latent_width = fit_u16(q.shape[2], "latent width");
  h.model_hash = bundle.hash;
  bs.payload = rc_encode(q, bundle.table);
  if (bs.payload.size() > std::numeric_limits<std::uint32_t>::max()) throw EncodeError("payload too large");
  h.payload_length = static_cast<std::uint32_t>(bs.payload.size());
  return bs;
}

QuantizedLatent decode_latent(const Bitstream& bs, const ModelBundle& bundle) {
  check_hash(bs, bundle);
  if (bs.payload.size() != bs.header.payload_length) throw DecodeError("payload length disagrees with header");
  const Shape shape{bs.header.latent_channels, bs.header.latent_height, bs.header.latent_width};
  return rc_decode(bs.payload, bundle.table, shape);
}

ImageTensor decode_image(const Bitstream& bs, const ModelBundle& bundle, Exec exec) {
  const QuantizedLatent q = decode_latent(bs, bundle);
  const Tensor<float> y = dequantize(q, bundle.table.offsets());
  return synthesis_forward(y, bundle.params, bundle.config, exec, /*clamp=*/true);
}

ImageTensor decode_image(std::span<const std::uint8_t> bytes, const ModelBundle& bundle, Exec exec) {
  return decode_image(Bitstream::parse(bytes), bundle, exec);
}

double bpp(const Bitstream& bs) {
  const double pixels = static_cast<double>(bs.header.image_width) * bs.header.image_height;
  if (pixels <= 0) return 0.0;
  return 8.0 * static_cast<double>(bs.total_bytes()) / pixels;
}

}  // namespace arc
