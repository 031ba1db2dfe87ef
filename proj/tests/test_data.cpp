#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "arc/data.hpp"
#include "arc/error.hpp"
#include "arc/image_io.hpp"
#include "arc/random.hpp"

using namespace arc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("arc_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

bool inside(const BoundingBox& in, const BoundingBox& out) {
  return in.x >= out.x && in.y >= out.y && in.x + in.w <= out.x + out.w && in.y + in.h <= out.y + out.h;
}

}  // namespace

TEST(Annotations, OnePerson) {
  const auto r = parse_annotation_line(
      R"({"ID": "img1", "gtboxes": [{"tag": "person", "hbox": [10,10,20,20], "vbox": [5,5,40,80]}]})", 1);
  EXPECT_EQ(r.id, "img1");
  ASSERT_EQ(r.boxes.size(), 2u);
  EXPECT_EQ(r.boxes[0], (BoundingBox{10, 10, 20, 20, BoxRole::kHead}));
  EXPECT_EQ(r.boxes[1], (BoundingBox{5, 5, 40, 80, BoxRole::kVisible}));
}

TEST(Annotations, IgnoreFlags) {
  const auto all = parse_annotation_line(
      R"({"ID": "a", "gtboxes": [{"hbox": [1,1,2,2], "vbox": [0,0,5,5], "extra": {"ignore": 1}}]})", 1);
  EXPECT_TRUE(all.boxes.empty());
  const auto head = parse_annotation_line(
      R"({"ID": "a", "gtboxes": [{"hbox": [1,1,2,2], "vbox": [0,0,5,5], "head_attr": {"ignore": 1}}]})", 1);
  ASSERT_EQ(head.boxes.size(), 1u);
  EXPECT_EQ(head.boxes[0].role, BoxRole::kVisible);
}

TEST(Annotations, FileErrorsAndEmpty) {
  const auto dir = scratch("ann");
  write_text(dir / "empty.odgt", "");
  EXPECT_TRUE(parse_annotations(dir / "empty.odgt").empty());
  write_text(dir / "bad.odgt", "{\"ID\": \"x\"}\n\n{\"ID\": \"y\", \"gtboxes\": [{\"hbox\": [1, 2]}]}\n");
  try {
    parse_annotations(dir / "bad.odgt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  write_text(dir / "garbage.odgt", "not json\n");
  EXPECT_THROW(parse_annotations(dir / "garbage.odgt"), ParseError);
  EXPECT_THROW(parse_annotations(dir / "missing.odgt"), IoError);
}

TEST(Rescale, ScaleArithmetic) {
  const BoxSet in{{100, 200, 50, 60, BoxRole::kHead}};
  const auto out = rescale_boxes(in, 1024, 1024, 512);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (BoundingBox{50, 100, 25, 30, BoxRole::kHead}));
  EXPECT_EQ(rescale_boxes(in, 512, 512, 512), in);
}

TEST(Rescale, ClampAndDrop) {
  const BoxSet in{{900, 10, 300, 100}, {10, 10, 1, 1}};
  const auto out = rescale_boxes(in, 1024, 1024, 512);
  ASSERT_EQ(out.size(), 1u);  // the 1x1 box shrinks to 0.5x0.5 and is dropped
  EXPECT_DOUBLE_EQ(out[0].x + out[0].w, 512.0);
  EXPECT_DOUBLE_EQ(out[0].x, 450.0);
}

TEST(Rescale, AreaRatioOnUnclampedBoxes) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const int w = 100 + static_cast<int>(rng.below(900)), h = 100 + static_cast<int>(rng.below(900));
    const BoundingBox b{rng.uniform(0, w / 2.0), rng.uniform(0, h / 2.0), rng.uniform(10, w / 2.0 - 1),
                        rng.uniform(10, h / 2.0 - 1)};
    const auto out = rescale_boxes({b}, w, h, 512);
    ASSERT_EQ(out.size(), 1u);
    const double sx = 512.0 / w, sy = 512.0 / h;
    EXPECT_NEAR(out[0].area() / b.area(), sx * sy, 1e-6);
    EXPECT_TRUE(out[0].valid_for(512, 512));
  }
}

TEST(Rescale, ImageResize) {
  ImageTensor img({3, 8, 16}, 0.25f);
  const auto r = rescale(img, {{2, 2, 4, 4}}, 32);
  EXPECT_EQ(r.image.shape(), (Shape{3, 32, 32}));
  for (std::size_t i = 0; i < r.image.size(); ++i) EXPECT_NEAR(r.image[i], 0.25f, 1e-6f);
  EXPECT_EQ(r.boxes[0], (BoundingBox{4, 8, 8, 16}));
  EXPECT_EQ(r.original_width, 16);
  EXPECT_THROW(rescale(ImageTensor({3, 0, 4}), {}, 32), InputError);
  // identity size is an exact copy
  Rng rng(1);
  ImageTensor rnd({3, 8, 8});
  for (std::size_t i = 0; i < rnd.size(); ++i) rnd[i] = static_cast<float>(rng.uniform());
  EXPECT_EQ(resize_bilinear(rnd, 8, 8), rnd);
}

TEST(Synthetic, DeterministicAndWellFormed) {
  const auto a = make_synthetic_dataset(1, 9, 64);
  const auto b = make_synthetic_dataset(1, 9, 64);
  EXPECT_EQ(a[0].image, b[0].image);
  EXPECT_EQ(a[0].boxes, b[0].boxes);

  const auto set = make_synthetic_dataset(100, 4, 64);
  ASSERT_EQ(set.size(), 100u);
  for (const auto& item : set) {
    const auto heads = filter_role(item.boxes, BoxRole::kHead);
    const auto bodies = filter_role(item.boxes, BoxRole::kVisible);
    ASSERT_GE(heads.size(), 1u);
    ASSERT_GE(bodies.size(), 1u);
    for (std::size_t i = 0; i < heads.size(); ++i) EXPECT_TRUE(inside(heads[i], bodies[i]));
    for (const auto& box : item.boxes) EXPECT_TRUE(box.valid_for(64, 64));
    EXPECT_TRUE(item.image.all_finite());
    for (std::size_t i = 0; i < item.image.size(); ++i) {
      ASSERT_GE(item.image[i], 0.0f);
      ASSERT_LE(item.image[i], 1.0f);
    }
  }
}

TEST(Synthetic, WriteParseLoadRoundTrip) {
  const auto dir = scratch("roundtrip");
  const auto set = make_synthetic_dataset(5, 2, 32);
  const auto manifest = write_dataset(dir, set);
  const auto records = parse_annotations(manifest.annotations);
  ASSERT_EQ(records.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(records[i], to_record(set[i]));

  const auto loaded = load_dataset(manifest);
  ASSERT_EQ(loaded.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(loaded[i].boxes, set[i].boxes);
    for (std::size_t j = 0; j < set[i].image.size(); ++j) {
      ASSERT_NEAR(loaded[i].image[j], set[i].image[j], 0.5f / 255 + 1e-6f);
    }
  }
}

TEST(Dataset, MissingImageIsAnIoError) {
  const auto dir = scratch("missing");
  fs::create_directories(dir / "images");
  write_text(dir / "a.odgt", R"({"ID": "nope", "gtboxes": []})" "\n");
  EXPECT_THROW(load_dataset({dir / "a.odgt", dir / "images", 32}), IoError);
}

TEST(ImageIo, PngAndPpmRoundTrip) {
  const auto dir = scratch("io");
  Rng rng(5);
  ImageTensor img({3, 5, 7});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.below(256)) / 255.0f;
  for (const char* name : {"a.png", "a.ppm"}) {
    write_image(dir / name, img);
    const auto back = read_image(dir / name);
    ASSERT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_FLOAT_EQ(back[i], img[i]);
  }
  write_text(dir / "junk.png", "definitely not a png");
  EXPECT_THROW(read_image(dir / "junk.png"), Error);
}

TEST(ImageIo, ReadsJpeg) {
  const auto img = read_image(fs::path(ARC_TEST_DATA_DIR) / "gradient_8x4.jpg");
  ASSERT_EQ(img.shape(), (Shape{3, 4, 8}));
  // Reference pixels decoded independently with Pillow; chroma subsampling
  // on an 8x4 image moves them well away from the encoded ramp.
  EXPECT_NEAR(img.at(0, 0, 7), 184.0f / 255, 2.0f / 255);
  EXPECT_NEAR(img.at(1, 3, 0), 163.0f / 255, 2.0f / 255);
  EXPECT_NEAR(img.at(2, 0, 0), 104.0f / 255, 2.0f / 255);
}
