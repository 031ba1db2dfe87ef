// Command-line frontend: train, encode, decode, eval-ap, bench, synth.
//
// Exit codes: 0 success, 1 usage/configuration, 2 data or format error,
// 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "arc/checkpoint.hpp"
#include "arc/codec.hpp"
#include "arc/data.hpp"
#include "arc/error.hpp"
#include "arc/eval.hpp"
#include "arc/image_io.hpp"
#include "arc/parallel.hpp"
#include "arc/trainer.hpp"

namespace fs = std::filesystem;
using namespace arc;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct TrainArgs {
  std::string data;
  int synthetic = 0;
  int val = 0;
  std::string out = "model.arck";
  std::string log;
  std::string resume;
  int n = 128;
  int m = 1;
  int size = 512;
  int epochs = 100;
  int batch = 8;
  double lr = 1e-4;
  double lambda_r = 0.04, lambda_bg = 1.0, lambda_hbox = 0.6, lambda_vbox = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
};

struct CodecArgs {
  std::string model, in, out;
};

struct EvalArgs {
  std::string gt, dets, cls = "person", role = "vbox", report, method = "arc", preset;
  double iou = 0.5, bpp = 0.0, bpp_std = 0.0;
};

struct BenchArgs {
  std::string model, images, op = "encode", csv;
  int repeats = 10;
};

struct SynthArgs {
  std::string out;
  int count = 100;
  int size = 64;
  std::uint64_t seed = 0;
};

std::vector<AnnotatedImage> split_tail(std::vector<AnnotatedImage>& all, int count) {
  if (count <= 0) return {};
  if (static_cast<std::size_t>(count) >= all.size()) throw ConfigError("--val must leave training images");
  std::vector<AnnotatedImage> tail(all.end() - count, all.end());
  all.resize(all.size() - static_cast<std::size_t>(count));
  return tail;
}

int run_train(const TrainArgs& a) {
  ModelConfig mc;
  mc.width_n = a.n;
  mc.hidden_layers_m = a.m;
  mc.input_size = a.size;
  mc.validate();
  TrainConfig tc;
  tc.weights = {a.lambda_r, a.lambda_bg, a.lambda_hbox, a.lambda_vbox};
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  tc.checkpoint_interval = a.checkpoint_every;
  tc.validate();
  if (a.data.empty() == (a.synthetic == 0)) throw ConfigError("give exactly one of --data or --synthetic");

  std::vector<AnnotatedImage> images;
  if (a.synthetic > 0) {
    images = make_synthetic_dataset(a.synthetic + a.val, a.seed, a.size);
  } else {
    const fs::path dir(a.data);
    images = load_dataset({dir / "annotations.odgt", dir / "images", a.size});
    if (images.empty()) throw InputError("dataset " + a.data + " has no images");
  }
  const auto val = split_tail(images, a.val);

  TrainState state = a.resume.empty() ? TrainState::fresh(mc, a.seed) : restore_state(a.resume, mc);
  const fs::path out(a.out);
  const fs::path log = a.log.empty() ? fs::path(a.out + ".csv") : fs::path(a.log);
  const EpochResult last = train(state, images, tc, TrainRun{out, log, val.empty() ? nullptr : &val});

  // Final file: training state plus a table frozen on the training images,
  // usable both for --resume and as a codec bundle.
  Checkpoint ckpt = to_checkpoint(state);
  append_cdf_table(ckpt, freeze_for(state, images));
  write_checkpoint(out, ckpt);

  const auto& l = last.loss;
  std::printf("epoch %d: rate %.6f bpp, bg %.6f, hbox %.6f, vbox %.6f, total %.6f\n", state.epoch, l.rate, l.bg,
              l.hbox, l.vbox, l.total);
  std::printf("wrote %s (model hash %016llx) and %s\n", out.string().c_str(),
              static_cast<unsigned long long>(ckpt.model_hash()), log.string().c_str());
  return 0;
}

int run_encode(const CodecArgs& a) {
  const ModelBundle bundle = ModelBundle::load(a.model);
  const ImageTensor image = read_image(a.in);
  const auto bytes = encode_image(image, bundle).serialize();
  write_file(a.out, bytes);
  const double file_bpp = 8.0 * static_cast<double>(fs::file_size(a.out)) / (image.width() * image.height());
  std::printf("%s: %dx%d, %zu bytes, %.6f bpp\n", a.out.c_str(), image.width(), image.height(), bytes.size(),
              file_bpp);
  return 0;
}

int run_decode(const CodecArgs& a) {
  const ModelBundle bundle = ModelBundle::load(a.model);
  const ImageTensor image = decode_image(read_file(a.in), bundle);
  write_image(a.out, image);
  std::printf("%s: %dx%d\n", a.out.c_str(), image.width(), image.height());
  return 0;
}

int run_eval_ap(const EvalArgs& a) {
  BoxRole role;
  if (a.role == "hbox") {
    role = BoxRole::kHead;
  } else if (a.role == "vbox") {
    role = BoxRole::kVisible;
  } else {
    throw ConfigError("--role must be hbox or vbox");
  }
  std::vector<std::pair<std::string, BoxSet>> records;
  for (auto& r : parse_annotations(a.gt)) records.emplace_back(r.id, std::move(r.boxes));
  const GroundTruth gt = ground_truth_for(records, role);
  std::vector<Detection> dets;
  for (auto& d : ingest_detections(a.dets)) {
    if (d.label == a.cls) dets.push_back(std::move(d));
  }
  const APResult r = voc_ap(dets, gt, a.iou);
  std::printf("class %s vs %s @ IoU %.2f: AP %.10g, TP %zu, FP %zu, GT %zu\n", a.cls.c_str(), a.role.c_str(), a.iou,
              r.ap, r.tp, r.fp, r.num_gt);
  const std::vector<ReportRow> rows{{a.method, a.preset, a.bpp, a.bpp_std, r.ap, r.tp, r.fp}};
  if (!a.report.empty()) write_rate_precision_report(a.report, rows);
  std::cout << rate_precision_csv(rows);
  return 0;
}

std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int run_bench(const BenchArgs& a) {
  if (a.op != "encode" && a.op != "decode") throw ConfigError("--op must be encode or decode");
  if (a.repeats < 1) throw ConfigError("--repeats must be >= 1");
  const ModelBundle bundle = ModelBundle::load(a.model);
  const auto files = image_files(a.images);
  if (files.empty()) throw InputError("no images in " + a.images);
  std::vector<ImageTensor> images;
  std::vector<std::vector<std::uint8_t>> streams;
  for (const auto& f : files) {
    images.push_back(read_image(f));
    streams.push_back(encode_image(images.back(), bundle).serialize());
  }
  // Timed samples run one at a time on one worker.
  set_worker_count(1);
  std::vector<double> samples;
  LatencyStats s;
  if (a.op == "encode") {
    s = latency_bench([&](std::size_t i) { (void)encode_image(images[i], bundle); }, images.size(), a.repeats,
                      &samples);
  } else {
    s = latency_bench([&](std::size_t i) { (void)decode_image(streams[i], bundle); }, images.size(), a.repeats,
                      &samples);
  }
  std::printf("%s: %zu samples, min %.9g s, mean %.9g s, std %.9g s%s\n", a.op.c_str(), s.samples, s.min, s.mean,
              s.std, s.std_undefined ? " (single sample, std undefined)" : "");
  if (!a.csv.empty()) {
    std::FILE* out = std::fopen(a.csv.c_str(), "w");
    if (!out) throw IoError("cannot write " + a.csv);
    std::fprintf(out, "op,samples,min,mean,std,std_undefined\n%s,%zu,%.9g,%.9g,%.9g,%d\n", a.op.c_str(), s.samples,
                 s.min, s.mean, s.std, s.std_undefined ? 1 : 0);
    std::fclose(out);
  }
  return 0;
}

int run_synth(const SynthArgs& a) {
  const auto m = write_dataset(a.out, make_synthetic_dataset(a.count, a.seed, a.size));
  std::printf("wrote %d images to %s\n", a.count, m.image_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"ROI-loss learned image codec"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", ta.data, "directory with annotations.odgt and images/");
  train_cmd->add_option("--synthetic", ta.synthetic, "train on N synthetic images instead")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--val", ta.val, "hold out the last N images for validation bpp");
  train_cmd->add_option("--out", ta.out, "output checkpoint")->capture_default_str();
  train_cmd->add_option("--log", ta.log, "CSV log (default <out>.csv)");
  train_cmd->add_option("--resume", ta.resume, "continue from a checkpoint");
  train_cmd->add_option("--n", ta.n, "channel width N")->capture_default_str();
  train_cmd->add_option("--m", ta.m, "hidden layers M")->capture_default_str();
  train_cmd->add_option("--size", ta.size, "training image size")->capture_default_str();
  train_cmd->add_option("--epochs", ta.epochs)->capture_default_str();
  train_cmd->add_option("--batch", ta.batch)->capture_default_str();
  train_cmd->add_option("--lr", ta.lr)->capture_default_str();
  train_cmd->add_option("--lambda-r", ta.lambda_r)->capture_default_str();
  train_cmd->add_option("--lambda-bg", ta.lambda_bg)->capture_default_str();
  train_cmd->add_option("--lambda-hbox", ta.lambda_hbox)->capture_default_str();
  train_cmd->add_option("--lambda-vbox", ta.lambda_vbox)->capture_default_str();
  train_cmd->add_option("--seed", ta.seed)->capture_default_str();
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "epochs between checkpoints (0: end only)");

  CodecArgs ea, da;
  auto* encode_cmd = app.add_subcommand("encode", "image -> .arc bitstream");
  encode_cmd->add_option("--model", ea.model)->required();
  encode_cmd->add_option("--in", ea.in)->required();
  encode_cmd->add_option("--out", ea.out)->required();
  auto* decode_cmd = app.add_subcommand("decode", ".arc bitstream -> image");
  decode_cmd->add_option("--model", da.model)->required();
  decode_cmd->add_option("--in", da.in)->required();
  decode_cmd->add_option("--out", da.out)->required();

  EvalArgs va;
  auto* eval_cmd = app.add_subcommand("eval-ap", "Pascal VOC AP of detections against annotations");
  eval_cmd->add_option("--gt", va.gt, "annotation file (ODGT lines)")->required();
  eval_cmd->add_option("--dets", va.dets, "detections (JSON lines)")->required();
  eval_cmd->add_option("--class", va.cls, "detection class to keep")->capture_default_str();
  eval_cmd->add_option("--role", va.role, "ground-truth role: hbox or vbox")->capture_default_str();
  eval_cmd->add_option("--iou", va.iou, "IoU threshold")->capture_default_str();
  eval_cmd->add_option("--report", va.report, "write the CSV row to this file");
  eval_cmd->add_option("--method", va.method)->capture_default_str();
  eval_cmd->add_option("--preset", va.preset);
  eval_cmd->add_option("--bpp", va.bpp, "mean bpp of the evaluated images (report column)");
  eval_cmd->add_option("--bpp-std", va.bpp_std);

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "encode/decode latency");
  bench_cmd->add_option("--model", ba.model)->required();
  bench_cmd->add_option("--images", ba.images, "directory of images")->required();
  bench_cmd->add_option("--repeats", ba.repeats)->capture_default_str();
  bench_cmd->add_option("--op", ba.op, "encode or decode")->capture_default_str();
  bench_cmd->add_option("--csv", ba.csv);

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic annotated dataset");
  synth_cmd->add_option("--out", sa.out)->required();
  synth_cmd->add_option("--count", sa.count)->capture_default_str();
  synth_cmd->add_option("--size", sa.size)->capture_default_str();
  synth_cmd->add_option("--seed", sa.seed)->capture_default_str();

  // --config FILE may follow the subcommand; keys live in a [train],
  // [encode], ... section named after it.
  app.set_config("--config", "", "TOML/INI file mirroring the flags");
  for (auto* sub : {train_cmd, encode_cmd, decode_cmd, eval_cmd, bench_cmd, synth_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*encode_cmd) return run_encode(ea);
    if (*decode_cmd) return run_decode(da);
    if (*eval_cmd) return run_eval_ap(va);
    if (*bench_cmd) return run_bench(ba);
    if (*synth_cmd) return run_synth(sa);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
