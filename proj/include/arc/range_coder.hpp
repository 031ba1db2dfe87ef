#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "arc/entropy.hpp"

namespace arc {

// Byte-oriented range coder with a 64-bit low register and 32-bit range,
// carry propagation through a cached byte, and frequencies with a fixed
// total of 2^16.
//
// Stream layout: each renormalization emits one byte, most significant
// first; finish() flushes five bytes. The first emitted byte is the initial
// cache byte (0 unless a carry reached it). The decoder primes itself with
// the first five bytes.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum_low, std::uint32_t freq);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  // Throws DecodeError if the payload is shorter than the priming bytes.
  explicit RangeDecoder(std::span<const std::uint8_t> payload);

  // Cumulative-frequency target of the next symbol, in [0, 2^16).
  std::uint32_t target();
  void consume(std::uint32_t cum_low, std::uint32_t freq);

  std::size_t bytes_consumed() const { return pos_; }

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
  std::uint32_t scaled_ = 0;
};

// Entropy-codes every symbol of `q` with its channel's table. Throws
// EncodeError naming the channel when a symbol lies outside the table.
std::vector<std::uint8_t> rc_encode(const QuantizedLatent& q, const CdfTable& table);

// Decodes exactly shape-many symbols. Throws DecodeError on truncated or
// trailing-garbage payloads.
QuantizedLatent rc_decode(std::span<const std::uint8_t> payload, const CdfTable& table,
                          const Shape& shape);

}  // namespace arc
