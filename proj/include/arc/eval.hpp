#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "arc/loss.hpp"

namespace arc {

struct Rect {
  double x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

inline Rect rect_of(const BoundingBox& b) { return {b.x, b.y, b.w, b.h}; }

struct Detection {
  std::string image_id;
  Rect box;
  double confidence = 0;
  std::string label;
};

struct APResult {
  double ap = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t num_gt = 0;
};

struct LatencyStats {
  double min = 0;
  double mean = 0;
  double std = 0;  // sample std (n - 1)
  std::size_t samples = 0;
  bool std_undefined = false;  // set when samples < 2; std is then reported as 0
};

// Intersection over union; 0 when either rectangle is degenerate.
double iou(const Rect& a, const Rect& b);

using GroundTruth = std::map<std::string, std::vector<Rect>>;

// Per-detection TP flags, index-aligned with `dets`. Detections are visited by
// descending confidence (stable on input order); each takes the GT with the
// highest IoU in its image (lowest index on ties) and is a TP if that IoU
// reaches the threshold and the GT is still unmatched.
std::vector<bool> match_detections(const std::vector<Detection>& dets, const GroundTruth& gts,
                                   double threshold = 0.5);

// Pascal VOC all-point interpolated AP.
APResult voc_ap(const std::vector<Detection>& dets, const GroundTruth& gts, double threshold = 0.5);

// Area under the all-point interpolated PR curve of confidence-ordered TP flags.
double all_point_ap(const std::vector<bool>& ordered_tp, std::size_t num_gt);

// Newline-delimited JSON: {"id", "class", "box": [x, y, w, h], "score"}.
std::vector<Detection> ingest_detections(const std::filesystem::path& path);
std::vector<Detection> parse_detections(const std::string& text);

GroundTruth ground_truth_for(const std::vector<std::pair<std::string, BoxSet>>& records, BoxRole role);

LatencyStats latency_stats(const std::vector<double>& samples);

// Times op(i) for every image index, `repeats` times each, after one untimed
// warm-up call. Samples are seconds read from `now` (steady clock when
// empty), pooled over all images.
using SecondsClock = std::function<double()>;
LatencyStats latency_bench(const std::function<void(std::size_t)>& op, std::size_t images, int repeats = 10,
                           std::vector<double>* samples_out = nullptr, const SecondsClock& now = {});

struct ReportRow {
  std::string method;
  std::string preset;
  double mean_bpp = 0;
  double bpp_std = 0;
  double ap = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
};

// CSV with columns method,preset,mean_bpp,bpp_std,ap,tp,fp.
std::string rate_precision_csv(const std::vector<ReportRow>& rows);
void write_rate_precision_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

}  // namespace arc
