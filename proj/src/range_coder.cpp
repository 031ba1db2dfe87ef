#include "arc/range_coder.hpp"

#include <algorithm>
#include <string>

#include "arc/error.hpp"

namespace arc {

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr int kPrimeBytes = 5;

}  // namespace

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t cum_low, std::uint32_t freq) {
  const std::uint32_t r = range_ >> kCdfPrecisionBits;
  low_ += static_cast<std::uint64_t>(r) * cum_low;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < kPrimeBytes; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> payload) : in_(payload) {
  if (payload.size() < static_cast<std::size_t>(kPrimeBytes)) {
    throw DecodeError("range-coded payload shorter than " + std::to_string(kPrimeBytes) + " bytes");
  }
  for (int i = 0; i < kPrimeBytes; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= in_.size()) throw DecodeError("range-coded payload is truncated");
  return in_[pos_++];
}

std::uint32_t RangeDecoder::target() {
  scaled_ = range_ >> kCdfPrecisionBits;
  const std::uint32_t t = code_ / scaled_;
  if (t >= kCdfTotal) throw DecodeError("range-coded payload is corrupt");
  return t;
}

void RangeDecoder::consume(std::uint32_t cum_low, std::uint32_t freq) {
  code_ -= scaled_ * cum_low;
  range_ = scaled_ * freq;
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

std::vector<std::uint8_t> rc_encode(const QuantizedLatent& q, const CdfTable& table) {
  if (q.symbols.empty()) return {};
  if (static_cast<std::size_t>(q.channels()) != table.channels.size()) {
    throw EncodeError("latent has " + std::to_string(q.channels()) + " channels, table has " +
                      std::to_string(table.channels.size()));
  }
  const std::size_t plane = q.plane();
  RangeEncoder enc;
  for (std::size_t i = 0; i < q.symbols.size(); ++i) {
    const std::size_t c = i / plane;
    const auto& ch = table.channels[c];
    const std::int32_t s = q.symbols[i];
    if (s < ch.min_symbol || s > ch.max_symbol()) {
      throw EncodeError("symbol " + std::to_string(s) + " outside table range [" +
                        std::to_string(ch.min_symbol) + ", " + std::to_string(ch.max_symbol()) +
                        "] of channel " + std::to_string(c));
    }
    const auto idx = static_cast<std::size_t>(s - ch.min_symbol);
    enc.encode(ch.cumulative[idx], ch.cumulative[idx + 1] - ch.cumulative[idx]);
  }
  return enc.finish();
}

QuantizedLatent rc_decode(std::span<const std::uint8_t> payload, const CdfTable& table,
                          const Shape& shape) {
  QuantizedLatent q{shape, std::vector<std::int32_t>(shape_numel(shape))};
  if (q.symbols.empty()) {
    if (!payload.empty()) throw DecodeError("payload present for an empty latent");
    return q;
  }
  if (static_cast<std::size_t>(q.channels()) != table.channels.size()) {
    throw DecodeError("latent has " + std::to_string(q.channels()) + " channels, table has " +
                      std::to_string(table.channels.size()));
  }
  const std::size_t plane = q.plane();
  RangeDecoder dec(payload);
  for (std::size_t i = 0; i < q.symbols.size(); ++i) {
    const auto& ch = table.channels[i / plane];
    const std::uint32_t t = dec.target();
    // Last cumulative entry <= t.
    const auto it = std::upper_bound(ch.cumulative.begin(), ch.cumulative.end(), t);
    const auto idx = static_cast<std::size_t>(it - ch.cumulative.begin()) - 1;
    dec.consume(ch.cumulative[idx], ch.cumulative[idx + 1] - ch.cumulative[idx]);
    q.symbols[i] = ch.min_symbol + static_cast<std::int32_t>(idx);
  }
  if (dec.bytes_consumed() != payload.size()) {
    throw DecodeError("payload has " + std::to_string(payload.size() - dec.bytes_consumed()) +
                      " trailing bytes");
  }
  return q;
}

}  // namespace arc
