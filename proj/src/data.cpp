#include "arc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "arc/error.hpp"
#include "arc/image_io.hpp"
#include "arc/random.hpp"
#include "json.hpp"

namespace arc {

using json = nlohmann::json;

namespace {

BoundingBox parse_box(const json& v, BoxRole role, std::size_t line_number, const char* key) {
  if (!v.is_array() || v.size() != 4) {
    throw ParseError("line " + std::to_string(line_number) + ": \"" + key +
                     "\" must be an array [x, y, w, h]");
  }
  BoundingBox b;
  double* dst[] = {&b.x, &b.y, &b.w, &b.h};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_number()) {
      throw ParseError("line " + std::to_string(line_number) + ": \"" + key + "\" has a non-numeric entry");
    }
    *dst[i] = v[i].get<double>();
  }
  b.role = role;
  return b;
}

bool ignored(const json& entry, const char* attr) {
  if (!entry.contains(attr) || !entry[attr].is_object()) return false;
  const auto& a = entry[attr];
  if (!a.contains("ignore")) return false;
  const auto& flag = a["ignore"];
  return flag.is_number() ? flag.get<double>() != 0.0 : (flag.is_boolean() && flag.get<bool>());
}

json box_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

}  // namespace

AnnotationRecord parse_annotation_line(const std::string& line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("line " + std::to_string(line_number) + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("ID") || !j["ID"].is_string()) {
    throw ParseError("line " + std::to_string(line_number) + ": missing string field \"ID\"");
  }
  AnnotationRecord rec;
  rec.id = j["ID"].get<std::string>();
  if (!j.contains("gtboxes")) return rec;
  if (!j["gtboxes"].is_array()) {
    throw ParseError("line " + std::to_string(line_number) + ": \"gtboxes\" must be an array");
  }
  for (const auto& entry : j["gtboxes"]) {
    if (!entry.is_object()) {
      throw ParseError("line " + std::to_string(line_number) + ": gtboxes entry is not an object");
    }
    if (ignored(entry, "extra")) continue;
    if (entry.contains("hbox") && !ignored(entry, "head_attr")) {
      rec.boxes.push_back(parse_box(entry["hbox"], BoxRole::kHead, line_number, "hbox"));
    }
    if (entry.contains("vbox")) {
      rec.boxes.push_back(parse_box(entry["vbox"], BoxRole::kVisible, line_number, "vbox"));
    }
  }
  return rec;
}

std::vector<AnnotationRecord> parse_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file " + path.string());
  std::vector<AnnotationRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    out.push_back(parse_annotation_line(line, n));
  }
  return out;
}

std::string to_annotation_line(const AnnotationRecord& record) {
  const BoxSet heads = filter_role(record.boxes, BoxRole::kHead);
  const BoxSet bodies = filter_role(record.boxes, BoxRole::kVisible);
  json entries = json::array();
  for (std::size_t i = 0; i < std::max(heads.size(), bodies.size()); ++i) {
    json e = {{"tag", "person"}, {"head_attr", {{"ignore", 0}}}, {"extra", {{"ignore", 0}}}};
    if (i < heads.size()) e["hbox"] = box_json(heads[i]);
    if (i < bodies.size()) e["vbox"] = box_json(bodies[i]);
    entries.push_back(std::move(e));
  }
  return json{{"ID", record.id}, {"gtboxes", std::move(entries)}}.dump();
}

void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << to_annotation_line(r) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

ImageTensor resize_bilinear(const ImageTensor& image, int out_w, int out_h) {
  if (image.rank() != 3 || image.width() <= 0 || image.height() <= 0) {
    throw InputError("cannot resize an image with a zero dimension");
  }
  if (out_w <= 0 || out_h <= 0) throw InputError("resize target must be positive");
  const int in_w = image.width();
  const int in_h = image.height();
  if (in_w == out_w && in_h == out_h) return image;
  const double sx = static_cast<double>(in_w) / out_w;
  const double sy = static_cast<double>(in_h) / out_h;
  ImageTensor out({image.channels(), out_h, out_w});
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels(); ++c) {
        const double top = (1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
        const double bot = (1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

BoxSet rescale_boxes(const BoxSet& boxes, int width, int height, int target) {
  if (width <= 0 || height <= 0) throw InputError("image has a zero dimension");
  const double sx = static_cast<double>(target) / width;
  const double sy = static_cast<double>(target) / height;
  BoxSet out;
  for (const auto& b : boxes) {
    const double x0 = std::max(0.0, b.x * sx);
    const double y0 = std::max(0.0, b.y * sy);
    const double x1 = std::min(static_cast<double>(target), (b.x + b.w) * sx);
    const double y1 = std::min(static_cast<double>(target), (b.y + b.h) * sy);
    if (x1 - x0 < 1.0 || y1 - y0 < 1.0) continue;
    out.push_back({x0, y0, x1 - x0, y1 - y0, b.role});
  }
  return out;
}

AnnotatedImage rescale(const ImageTensor& image, const BoxSet& boxes, int target) {
  if (image.rank() != 3 || image.empty()) throw InputError("cannot rescale an empty image");
  if (target <= 0) throw InputError("rescale target must be positive");
  AnnotatedImage out;
  out.original_width = image.width();
  out.original_height = image.height();
  out.image = resize_bilinear(image, target, target);
  out.boxes = rescale_boxes(boxes, image.width(), image.height(), target);
  return out;
}

std::vector<AnnotatedImage> load_dataset(const DatasetManifest& manifest) {
  const auto records = parse_annotations(manifest.annotations);
  std::vector<AnnotatedImage> out(records.size());
  std::vector<std::string> errors(records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      std::filesystem::path found;
      for (const char* ext : {".jpg", ".jpeg", ".png", ".ppm"}) {
        const auto p = manifest.image_dir / (records[i].id + ext);
        if (std::filesystem::exists(p)) {
          found = p;
          break;
        }
      }
      if (found.empty()) throw IoError("no image file for ID " + records[i].id);
      out[i] = rescale(read_image(found), records[i].boxes, manifest.target_size);
      out[i].id = records[i].id;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw IoError(e);
  }
  return out;
}

namespace {

void fill_rect(ImageTensor& img, int x0, int y0, int x1, int y1, const float rgb[3]) {
  for (int c = 0; c < 3; ++c) {
    for (int y = std::max(0, y0); y < std::min(img.height(), y1); ++y) {
      for (int x = std::max(0, x0); x < std::min(img.width(), x1); ++x) img.at(c, y, x) = rgb[c];
    }
  }
}

// Bright skin-toned square with dark eyes and mouth.
void draw_head(ImageTensor& img, int x0, int y0, int side, Rng& rng) {
  const float tone = static_cast<float>(rng.uniform(0.85, 1.0));
  const float skin[3] = {tone, tone * 0.82f, tone * 0.68f};
  fill_rect(img, x0, y0, x0 + side, y0 + side, skin);
  const float dark[3] = {0.05f, 0.04f, 0.04f};
  const int e = std::max(1, side / 5);
  const int ey = y0 + side / 3;
  fill_rect(img, x0 + side / 4 - e / 2, ey, x0 + side / 4 - e / 2 + e, ey + e, dark);
  fill_rect(img, x0 + 3 * side / 4 - e / 2, ey, x0 + 3 * side / 4 - e / 2 + e, ey + e, dark);
  const int my = y0 + (3 * side) / 4;
  fill_rect(img, x0 + side / 4, my, x0 + 3 * side / 4, my + std::max(1, side / 10), dark);
  const float hair[3] = {0.1f, 0.07f, 0.05f};
  fill_rect(img, x0, y0, x0 + side, y0 + std::max(1, side / 6), hair);
}

}  // namespace

std::vector<AnnotatedImage> make_synthetic_dataset(int n, std::uint64_t seed, int size) {
  if (n < 1) throw ConfigError("synthetic dataset needs at least one image");
  if (size < 32) throw ConfigError("synthetic images must be at least 32 pixels");
  std::vector<AnnotatedImage> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    AnnotatedImage a;
    a.id = "synth_" + std::to_string(seed) + "_" + std::to_string(i);
    a.original_width = size;
    a.original_height = size;
    a.image = ImageTensor({3, size, size});

    // Low-frequency sinusoidal texture.
    double base[3], amp[3], phase[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = rng.uniform(0.3, 0.6);
      amp[c] = rng.uniform(0.05, 0.15);
      phase[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double t = 2.0 * std::numbers::pi * (fx * x + fy * y) / size + phase[c];
          a.image.at(c, y, x) = static_cast<float>(base[c] + amp[c] * std::sin(t));
        }
      }
    }

    const int people = 1 + static_cast<int>(rng.below(2));
    const int slot_w = size / people;
    for (int p = 0; p < people; ++p) {
      const int body_w = std::max(6, static_cast<int>(slot_w * rng.uniform(0.3, 0.55)));
      const int body_h = std::max(12, static_cast<int>(size * rng.uniform(0.45, 0.75)));
      const int bx = p * slot_w + static_cast<int>(rng.below(static_cast<std::uint64_t>(slot_w - body_w + 1)));
      const int by = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - body_h + 1)));
      float cloth[3];
      for (float& v : cloth) v = static_cast<float>(rng.uniform(0.15, 0.55));
      fill_rect(a.image, bx, by, bx + body_w, by + body_h, cloth);

      const int side = std::max(4, std::min(body_w - 2, static_cast<int>(body_w * rng.uniform(0.55, 0.75))));
      const int hx = bx + (body_w - side) / 2;
      const int hy = by + 1;
      draw_head(a.image, hx, hy, side, rng);

      a.boxes.push_back({static_cast<double>(hx), static_cast<double>(hy), static_cast<double>(side),
                         static_cast<double>(side), BoxRole::kHead});
      a.boxes.push_back({static_cast<double>(bx), static_cast<double>(by), static_cast<double>(body_w),
                         static_cast<double>(body_h), BoxRole::kVisible});
    }
    out.push_back(std::move(a));
  }
  return out;
}

AnnotationRecord to_record(const AnnotatedImage& image) { return {image.id, image.boxes}; }

DatasetManifest write_dataset(const std::filesystem::path& dir, const std::vector<AnnotatedImage>& images) {
  std::filesystem::create_directories(dir / "images");
  std::vector<AnnotationRecord> records;
  records.reserve(images.size());
  for (const auto& a : images) {
    write_image(dir / "images" / (a.id + ".png"), a.image);
    records.push_back(to_record(a));
  }
  DatasetManifest m;
  m.annotations = dir / "annotations.odgt";
  m.image_dir = dir / "images";
  m.target_size = images.empty() ? 512 : images.front().image.width();
  write_annotations(m.annotations, records);
  return m;
}

}  // namespace arc
