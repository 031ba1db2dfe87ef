#include "arc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "arc/error.hpp"

namespace arc {

double iou(const Rect& a, const Rect& b) {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0) return 0.0;
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

namespace {

std::vector<std::size_t> by_confidence(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  return order;
}

}  // namespace

std::vector<bool> match_detections(const std::vector<Detection>& dets, const GroundTruth& gts,
                                   double threshold) {
  std::vector<bool> tp(dets.size(), false);
  std::map<std::string, std::vector<bool>> used;
  for (const auto& [id, boxes] : gts) used[id].assign(boxes.size(), false);
  for (std::size_t i : by_confidence(dets)) {
    const auto it = gts.find(dets[i].image_id);
    if (it == gts.end() || it->second.empty()) continue;
    double best = -1;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < it->second.size(); ++j) {
      const double v = iou(dets[i].box, it->second[j]);
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    auto& flags = used[it->first];
    if (best >= threshold && !flags[best_j]) {
      flags[best_j] = true;
      tp[i] = true;
    }
  }
  return tp;
}

double all_point_ap(const std::vector<bool>& ordered_tp, std::size_t num_gt) {
  if (num_gt == 0 || ordered_tp.empty()) return 0.0;
  const std::size_t n = ordered_tp.size();
  // Sentinels as in the VOC devkit: recall 0 and 1 bracket the curve. Recall
  // moves in steps of 1/num_gt, so the area is accumulated as hit counts
  // times precision in extended precision and divided once at the end; this
  // keeps hand-derivable cases such as 5/6 correctly rounded.
  std::vector<std::size_t> hits(n + 2);
  std::vector<long double> prec(n + 2);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ordered_tp[i] ? 1 : 0;
    hits[i + 1] = tp;
    prec[i + 1] = static_cast<long double>(tp) / static_cast<long double>(i + 1);
  }
  hits[n + 1] = num_gt;
  prec[n + 1] = 0;
  for (std::size_t i = n + 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
  long double area = 0;
  for (std::size_t i = 1; i < n + 2; ++i) {
    if (hits[i] != hits[i - 1]) area += static_cast<long double>(hits[i] - hits[i - 1]) * prec[i];
  }
  return static_cast<double>(area / static_cast<long double>(num_gt));
}

APResult voc_ap(const std::vector<Detection>& dets, const GroundTruth& gts, double threshold) {
  APResult r;
  for (const auto& [id, boxes] : gts) r.num_gt += boxes.size();
  const std::vector<bool> tp = match_detections(dets, gts, threshold);
  std::vector<bool> ordered;
  ordered.reserve(dets.size());
  for (std::size_t i : by_confidence(dets)) ordered.push_back(tp[i]);
  r.tp = static_cast<std::size_t>(std::count(tp.begin(), tp.end(), true));
  r.fp = dets.size() - r.tp;
  r.ap = all_point_ap(ordered, r.num_gt);
  return r;
}

std::vector<Detection> parse_detections(const std::string& text) {
  std::vector<Detection> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fail = [&](const std::string& why) {
      return ParseError("detections line " + std::to_string(line_number) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(e.what());
    }
    if (!j.is_object()) throw fail("expected an object");
    if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string \"id\"");
    if (!j.contains("class") || !j["class"].is_string()) throw fail("missing string \"class\"");
    if (!j.contains("score") || !j["score"].is_number()) throw fail("missing numeric \"score\"");
    if (!j.contains("box") || !j["box"].is_array() || j["box"].size() != 4) throw fail("\"box\" must be [x, y, w, h]");
    Detection d;
    d.image_id = j["id"].get<std::string>();
    d.label = j["class"].get<std::string>();
    d.confidence = j["score"].get<double>();
    if (!std::isfinite(d.confidence) || d.confidence < 0 || d.confidence > 1) {
      throw fail("score must lie in [0, 1]");
    }
    for (const auto& v : j["box"]) {
      if (!v.is_number()) throw fail("box entries must be numbers");
    }
    d.box = {j["box"][0].get<double>(), j["box"][1].get<double>(), j["box"][2].get<double>(),
             j["box"][3].get<double>()};
    if (!std::isfinite(d.box.x) || !std::isfinite(d.box.y) || !(d.box.w > 0) || !(d.box.h > 0) ||
        !std::isfinite(d.box.w) || !std::isfinite(d.box.h)) {
      throw fail("box is degenerate");
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> ingest_detections(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read detections " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_detections(s.str());
}

GroundTruth ground_truth_for(const std::vector<std::pair<std::string, BoxSet>>& records, BoxRole role) {
  GroundTruth gt;
  for (const auto& [id, boxes] : records) {
    auto& list = gt[id];
    for (const auto& b : boxes) {
      if (b.role == role) list.push_back(rect_of(b));
    }
  }
  return gt;
}

LatencyStats latency_stats(const std::vector<double>& samples) {
  LatencyStats s;
  s.samples = samples.size();
  if (samples.empty()) {
    s.std_undefined = true;
    return s;
  }
  s.min = *std::min_element(samples.begin(), samples.end());
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  if (samples.size() < 2) {
    s.std_undefined = true;
    return s;
  }
  double ss = 0;
  for (double v : samples) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(samples.size() - 1));
  // Summation error can leave mean a hair off min for identical samples.
  if (std::all_of(samples.begin(), samples.end(), [&](double v) { return v == samples.front(); })) {
    s.mean = samples.front();
    s.std = 0;
  }
  return s;
}

LatencyStats latency_bench(const std::function<void(std::size_t)>& op, std::size_t images, int repeats,
                           std::vector<double>* samples_out, const SecondsClock& now) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  std::vector<double> samples;
  if (images == 0) return latency_stats(samples);
  op(0);  // warm-up, untimed
  samples.reserve(images * static_cast<std::size_t>(repeats));
  const SecondsClock clock = now ? now : [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  };
  for (std::size_t i = 0; i < images; ++i) {
    for (int r = 0; r < repeats; ++r) {
      const double t0 = clock();
      op(i);
      samples.push_back(clock() - t0);
    }
  }
  if (samples_out) *samples_out = samples;
  return latency_stats(samples);
}

std::string rate_precision_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "method,preset,mean_bpp,bpp_std,ap,tp,fp\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.method << ',' << r.preset << ',' << r.mean_bpp << ',' << r.bpp_std << ',' << r.ap << ',' << r.tp
        << ',' << r.fp << '\n';
  }
  return out.str();
}

void write_rate_precision_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report " + path.string());
  out << rate_precision_csv(rows);
}

}  // namespace arc
