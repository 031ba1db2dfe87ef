#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "arc/checkpoint.hpp"
#include "arc/entropy.hpp"
#include "arc/model.hpp"
#include "arc/parallel.hpp"

namespace arc {

// Everything the encoder and decoder must share: transforms, frozen table,
// and the hash identifying them.
struct ModelBundle {
  ModelConfig config;
  ParameterStore params;
  CdfTable table;
  std::uint64_t hash = 0;

  static ModelBundle make(const ModelConfig& config, ParameterStore params, CdfTable table);
  static ModelBundle from_checkpoint(const Checkpoint& ckpt);
  static ModelBundle load(const std::filesystem::path& path);
  Checkpoint to_checkpoint() const;
};

// Fixed 30-byte little-endian header:
//   magic "ARC1" (4) | version (1) | N (2) | M (1) | image width (2) |
//   image height (2) | latent channels (2) | latent height (2) |
//   latent width (2) | model hash (8) | payload length (4)
struct BitstreamHeader {
  static constexpr std::array<char, 4> kMagic = {'A', 'R', 'C', '1'};
  static constexpr std::uint8_t kVersion = 1;
  static constexpr std::size_t kSize = 30;

  std::uint16_t width_n = 0;
  std::uint8_t hidden_layers_m = 0;
  std::uint16_t image_width = 0;
  std::uint16_t image_height = 0;
  std::uint16_t latent_channels = 0;
  std::uint16_t latent_height = 0;
  std::uint16_t latent_width = 0;
  std::uint64_t model_hash = 0;
  std::uint32_t payload_length = 0;

  friend bool operator==(const BitstreamHeader&, const BitstreamHeader&) = default;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> payload;

  std::vector<std::uint8_t> serialize() const;
  // Validates magic, version, header/latent consistency and payload length.
  static Bitstream parse(std::span<const std::uint8_t> bytes);
  std::size_t total_bytes() const { return BitstreamHeader::kSize + payload.size(); }
};

// Integer latent of an image under the bundle (analysis + rounding).
QuantizedLatent encode_latent(const ImageTensor& image, const ModelBundle& bundle,
                              Exec exec = Exec::kParallel);

Bitstream encode_image(const ImageTensor& image, const ModelBundle& bundle, Exec exec = Exec::kParallel);

// Entropy-decodes the payload (after checking the model hash).
QuantizedLatent decode_latent(const Bitstream& bs, const ModelBundle& bundle);

ImageTensor decode_image(const Bitstream& bs, const ModelBundle& bundle, Exec exec = Exec::kParallel);
ImageTensor decode_image(std::span<const std::uint8_t> bytes, const ModelBundle& bundle,
                         Exec exec = Exec::kParallel);

// Bits per pixel of the whole container (header + payload).
double bpp(const Bitstream& bs);

}  // namespace arc
