#include <gtest/gtest.h>

#include <filesystem>

#include "arc/checkpoint.hpp"
#include "arc/codec.hpp"
#include "arc/data.hpp"
#include "arc/error.hpp"
#include "arc/trainer.hpp"

using namespace arc;
namespace fs = std::filesystem;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.width_n = 8;
  c.hidden_layers_m = 1;
  c.input_size = 32;
  return c;
}

const std::vector<AnnotatedImage>& images() {
  static const auto set = make_synthetic_dataset(4, 3, 32);
  return set;
}

ModelBundle toy_bundle(std::uint64_t seed = 1) {
  return export_bundle(TrainState::fresh(toy_config(), seed), images());
}

}  // namespace

TEST(Checkpoint, SerializeRoundTrip) {
  const auto b = toy_bundle();
  const Checkpoint ck = b.to_checkpoint();
  const auto bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.model_hash(), ck.model_hash());
  EXPECT_EQ(extract_parameters(back), b.params);
  EXPECT_EQ(extract_cdf_table(back), b.table);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, CorruptionDetected) {
  const auto bytes = serialize_checkpoint(toy_bundle().to_checkpoint());
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint(flipped), FormatError);
  auto cut = bytes;
  cut.resize(cut.size() - 9);
  EXPECT_THROW(deserialize_checkpoint(cut), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), FormatError);
  EXPECT_THROW(deserialize_checkpoint(std::vector<std::uint8_t>{}), FormatError);
}

TEST(Checkpoint, HashIgnoresOptimizerState) {
  TrainState s = TrainState::fresh(toy_config(), 2);
  const auto h0 = to_checkpoint(s).model_hash();
  s.adam_m.at("analysis.conv0.bias")[0] = 3.0f;
  s.step = 99;
  EXPECT_EQ(to_checkpoint(s).model_hash(), h0);
  s.params.at("analysis.conv0.bias")[0] += 1.0f;
  EXPECT_NE(to_checkpoint(s).model_hash(), h0);
}

TEST(Bitstream, HeaderLayout) {
  Bitstream bs;
  bs.header = {0x0102, 2, 512, 256, 0x0102, 16, 32, 0x1122334455667788ull, 3};
  bs.payload = {7, 8, 9};
  const auto bytes = bs.serialize();
  ASSERT_EQ(bytes.size(), 33u);
  const std::vector<std::uint8_t> expected{'A', 'R', 'C', '1', 1, 0x02, 0x01, 2, 0x00, 0x02, 0x00, 0x01,
                                           0x02, 0x01, 16, 0, 32, 0, 0x88, 0x77, 0x66, 0x55, 0x44, 0x33,
                                           0x22, 0x11, 3, 0, 0, 0, 7, 8, 9};
  EXPECT_EQ(bytes, expected);
  const auto back = Bitstream::parse(bytes);
  EXPECT_EQ(back.header, bs.header);
  EXPECT_EQ(back.payload, bs.payload);
}

TEST(Bitstream, BppIncludesHeader) {
  Bitstream bs;
  bs.header.image_width = 512;
  bs.header.image_height = 512;
  bs.payload.resize(8192 - BitstreamHeader::kSize);
  EXPECT_DOUBLE_EQ(bpp(bs), 0.25);
  Bitstream twice = bs;
  twice.payload.resize(2 * bs.payload.size());
  const double header_part = 8.0 * BitstreamHeader::kSize / (512.0 * 512.0);
  EXPECT_NEAR(bpp(twice) - header_part, 2 * (bpp(bs) - header_part), 1e-12);
}

TEST(Codec, RoundTripIsLosslessInTheLatent) {
  const auto bundle = toy_bundle();
  for (const auto& item : images()) {
    const Bitstream bs = encode_image(item.image, bundle);
    EXPECT_EQ(bs.header.latent_channels, 8);
    EXPECT_EQ(bs.header.latent_height, 4);
    EXPECT_EQ(decode_latent(Bitstream::parse(bs.serialize()), bundle), encode_latent(item.image, bundle));
    const ImageTensor out = decode_image(bs.serialize(), bundle);
    EXPECT_EQ(out.shape(), item.image.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      ASSERT_GE(out[i], 0.0f);
      ASSERT_LE(out[i], 1.0f);
    }
  }
}

TEST(Codec, Deterministic) {
  const auto bundle = toy_bundle();
  const auto& x = images()[1].image;
  const auto a = encode_image(x, bundle).serialize();
  EXPECT_EQ(a, encode_image(x, bundle).serialize());
  EXPECT_EQ(decode_image(a, bundle), decode_image(a, bundle));
}

TEST(Codec, HeaderValidation) {
  const auto bundle = toy_bundle();
  const auto bytes = encode_image(images()[0].image, bundle).serialize();
  auto magic = bytes;
  magic[1] = 'Z';
  EXPECT_THROW(decode_image(magic, bundle), FormatError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_image(version, bundle), FormatError);
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_image(cut, bundle), DecodeError);
  auto dims = bytes;
  dims[16] = 5;  // latent width no longer matches the image width
  EXPECT_THROW(decode_image(dims, bundle), FormatError);
  try {
    decode_image(bytes, toy_bundle(2));
    FAIL() << "expected ModelMismatchError";
  } catch (const ModelMismatchError& e) {
    EXPECT_NE(std::string(e.what()).find("hash"), std::string::npos);
  }
}

TEST(Codec, RejectsBadImages) {
  const auto bundle = toy_bundle();
  EXPECT_THROW(encode_image(ImageTensor({3, 30, 32}), bundle), InputError);
}

TEST(Codec, BundleFileRoundTrip) {
  const auto bundle = toy_bundle();
  const auto path = fs::temp_directory_path() / "arc_test_bundle.arck";
  write_checkpoint(path, bundle.to_checkpoint());
  const auto loaded = ModelBundle::load(path);
  EXPECT_EQ(loaded.hash, bundle.hash);
  EXPECT_EQ(loaded.table, bundle.table);
  const auto bytes = encode_image(images()[2].image, bundle).serialize();
  EXPECT_EQ(decode_image(bytes, loaded), decode_image(bytes, bundle));
}
