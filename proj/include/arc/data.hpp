#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "arc/loss.hpp"
#include "arc/tensor.hpp"

namespace arc {

// One annotation record before image loading: boxes in original pixels.
struct AnnotationRecord {
  std::string id;
  BoxSet boxes;
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct AnnotatedImage {
  std::string id;
  ImageTensor image;
  BoxSet boxes;  // valid for image's (rescaled) dims
  int original_width = 0;
  int original_height = 0;
};

struct DatasetManifest {
  std::filesystem::path annotations;
  std::filesystem::path image_dir;
  int target_size = 512;
};

// Parses one ODGT line: {"ID": ..., "gtboxes": [{"hbox": [x,y,w,h], "vbox": [...],
// "head_attr": {"ignore": 0|1}, "extra": {"ignore": 0|1}}, ...]}.
// extra.ignore drops the whole entry; head_attr.ignore drops only its hbox.
AnnotationRecord parse_annotation_line(const std::string& line, std::size_t line_number);

// Parses a whole ODGT file; blank lines are skipped. Throws IoError or a
// ParseError naming the first malformed line.
std::vector<AnnotationRecord> parse_annotations(const std::filesystem::path& path);

// Serializes a record; heads and visible boxes are paired into gtboxes
// entries in order.
std::string to_annotation_line(const AnnotationRecord& record);
void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);

// Bilinear resample (half-pixel centers) to target x target without keeping
// the aspect ratio; boxes scale by (target/W, target/H), are clamped to the
// image and dropped when narrower or shorter than one pixel.
AnnotatedImage rescale(const ImageTensor& image, const BoxSet& boxes, int target);
BoxSet rescale_boxes(const BoxSet& boxes, int width, int height, int target);
ImageTensor resize_bilinear(const ImageTensor& image, int out_w, int out_h);

// Loads every record of the manifest, looking up "<image_dir>/<ID>.{jpg,jpeg,png,ppm}".
std::vector<AnnotatedImage> load_dataset(const DatasetManifest& manifest);

// Synthetic stand-in for a pedestrian dataset: smooth textured background,
// one or two "body" rectangles (vbox) each with a high-contrast "head" patch
// (hbox) in its top region. Deterministic in seed.
std::vector<AnnotatedImage> make_synthetic_dataset(int n, std::uint64_t seed, int size);

// Writes images as <dir>/images/<ID>.png and <dir>/annotations.odgt.
DatasetManifest write_dataset(const std::filesystem::path& dir,
                              const std::vector<AnnotatedImage>& images);

AnnotationRecord to_record(const AnnotatedImage& image);

}  // namespace arc
