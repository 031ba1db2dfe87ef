#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include "arc/codec.hpp"
#include "arc/data.hpp"
#include "arc/loss.hpp"
#include "arc/model.hpp"
#include "arc/parallel.hpp"

namespace arc {

struct TrainConfig {
  LossWeights weights;
  int epochs = 100;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // epochs; 0 disables periodic checkpoints
  Exec exec = Exec::kParallel;

  void validate() const;
};

// Parameters plus Adam state. `epoch` counts completed epochs.
struct TrainState {
  ModelConfig config;
  ParameterStore params;
  ParameterStore adam_m;
  ParameterStore adam_v;
  std::uint64_t step = 0;
  int epoch = 0;

  static TrainState fresh(const ModelConfig& config, std::uint64_t seed);
};

struct EpochResult {
  LossBreakdown loss;  // sample-weighted mean over batches
  int batches = 0;
};

// One optimizer pass over `data` in an order shuffled by Rng(seed, epoch);
// the same stream draws the quantization noise.
EpochResult train_epoch(TrainState& state, const std::vector<AnnotatedImage>& data,
                        const TrainConfig& config);

struct EvalResult {
  LossBreakdown loss;    // mean per image, rate = actual bitstream bpp
  double mean_bpp = 0;
  double bpp_std = 0;    // sample std, 0 for a single image
  double hbox_mse = 0;   // mean over images with heads of the MSE on head pixels
  double outside_mse = 0;  // mean over images of the MSE on pixels outside every box
  std::size_t images = 0;
};

// Freezes a CDF table for the current parameters, widened by the latent range
// observed on `data`.
CdfTable freeze_for(const TrainState& state, const std::vector<AnnotatedImage>& data,
                    Exec exec = Exec::kParallel);

// Codes every image through real bitstreams with a freshly frozen table.
EvalResult evaluate(const TrainState& state, const std::vector<AnnotatedImage>& data,
                    const LossWeights& weights, Exec exec = Exec::kParallel);

ModelBundle export_bundle(const TrainState& state, const std::vector<AnnotatedImage>& data,
                          Exec exec = Exec::kParallel);

struct RegionErrors {
  std::optional<double> head;  // empty when the image has no head pixels
  std::optional<double> outside;
};

// MSE over the union of head boxes and over pixels covered by no box.
RegionErrors region_errors(const ImageTensor& x, const ImageTensor& x_hat, const BoxSet& boxes);

Checkpoint to_checkpoint(const TrainState& state);
TrainState from_checkpoint(const Checkpoint& ckpt);
void save_state(const std::filesystem::path& path, const TrainState& state);
// Throws ModelMismatchError when `expected` is given and differs.
TrainState restore_state(const std::filesystem::path& path,
                         const std::optional<ModelConfig>& expected = std::nullopt);

// CSV log with columns epoch,rate,bg,hbox,vbox,total,val_bpp.
class TrainLog {
 public:
  explicit TrainLog(const std::filesystem::path& path);
  void append(int epoch, const LossBreakdown& loss, std::optional<double> val_bpp);

 private:
  std::ofstream out_;
};

struct TrainRun {
  std::filesystem::path checkpoint;  // written at the end (and every interval when set)
  std::filesystem::path log;
  const std::vector<AnnotatedImage>* validation = nullptr;
};

// Trains state.epoch -> config.epochs. Returns the last epoch's result.
EpochResult train(TrainState& state, const std::vector<AnnotatedImage>& data, const TrainConfig& config,
                  const TrainRun& run = {});

}  // namespace arc
