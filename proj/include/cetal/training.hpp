#pragma once

// Target assignment, focal + IoU detection loss, AdamW with warmup/cosine
// schedule, the training loop, and binary checkpointing.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cetal/data.hpp"
#include "cetal/eval.hpp"
#include "cetal/heads.hpp"

namespace cetal {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.05;
  std::size_t epochs = 300;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::optional<double> clip_grad_norm;
  std::size_t eval_every = 10;  // epochs between validation passes

  void validate() const;  // throws ConfigError
};

// ---- model = backbone + heads ------------------------------------------------

struct Model {
  Backbone backbone;
  DecoderHeads heads;

  Model(const ModelConfig& cfg, std::mt19937& rng);

  DenseOutputs forward(const Tensor& x) const;  // x: [1,C,T]
  std::vector<Tensor> parameters() const;
  std::size_t num_parameters() const;
  const ModelConfig& config() const { return backbone.config(); }
};

std::size_t model_param_count(const ModelConfig& cfg);

// features of one sequence as a [1,C,T] tensor
Tensor sequence_tensor(const AnnotatedSequence& seq);

// full inference path: forward, decode, NMS
std::vector<Segment> predict(const Model& model, const AnnotatedSequence& seq,
                             const DecodeConfig& dec = {}, const NmsConfig& nms_cfg = {});

// ---- target assignment --------------------------------------------------------

struct LevelGeometry {
  std::vector<std::size_t> lengths;                  // T_l per level
  std::vector<std::size_t> strides;                  // cumulative, input timesteps
  std::vector<std::pair<double, double>> ranges;     // [lo,hi) on max offset
};

LevelGeometry level_geometry(const ModelConfig& cfg, std::size_t input_len);

struct DenseTargets {
  // per level, row-major over the model's output layout
  std::vector<std::vector<double>> cls;       // [C*T_l], one-hot rows
  std::vector<std::vector<double>> offsets;   // [2*T_l], level-timestep units;
                                              // 1.0 placeholder at negatives
  std::vector<std::vector<double>> positive;  // [T_l], 0/1 mask
  std::size_t num_positive = 0;
};

// A timestep is positive for the class of the smallest-duration GT segment
// containing its center whose max boundary offset (in input timesteps) falls
// inside the level's range band.
DenseTargets assign_targets(const std::vector<Segment>& gt, double rate_hz,
                            std::size_t num_classes, const LevelGeometry& geo);

// ---- loss ---------------------------------------------------------------------

struct LossConfig {
  double focal_alpha = 0.25;
  int focal_gamma = 2;
  double lambda_reg = 1.0;
};

// focal classification over every position plus (1 - IoU) regression over
// positives, both normalized by max(num_positive, 1)
Tensor detection_loss(const DenseOutputs& d, const DenseTargets& t,
                      const LossConfig& cfg = {});

// ---- optimizer ------------------------------------------------------------------

struct AdamWState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
};

// decoupled decay applied separately from the adaptive step;
// beta1=0.9, beta2=0.999, eps=1e-8
void adamw_step(const std::vector<Tensor>& params, AdamWState& st, double lr_t,
                double wd);

// linear warmup to lr over warmup_epochs, then cosine decay to 0
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

// ---- checkpointing ---------------------------------------------------------------

std::string config_fingerprint(const ModelConfig& cfg);

void save_checkpoint(const std::string& path, const Model& model,
                     const AdamWState& st, std::size_t epoch);
// Restores parameters and optimizer state; throws ConfigError when the stored
// fingerprint disagrees with the model's config, DataError on a bad file.
// Returns the stored epoch.
std::size_t load_checkpoint(const std::string& path, Model& model, AdamWState& st);

// ---- training loop -----------------------------------------------------------------

struct TrainResult {
  std::vector<double> epoch_loss;
  double best_avg_map = 0.0;
  std::size_t best_epoch = 0;
  std::size_t final_epoch = 0;
};

// Trains in place, logging one JSON object per line to log_stream when set.
// Validation runs every eval_every epochs (and on the last) against val, or
// against train when val is null; the best parameters by validation avg mAP
// are restored into the model on return and written to checkpoint_path when
// non-empty. start_epoch supports resuming. Throws NumericError on NaN loss.
TrainResult train(Model& model, const Dataset& train_ds, const Dataset* val_ds,
                  const TrainConfig& cfg,
                  const std::vector<double>& thresholds = default_tiou_thresholds(),
                  const std::string& checkpoint_path = "",
                  std::ostream* log_stream = nullptr, AdamWState* state = nullptr,
                  std::size_t start_epoch = 0);

}  // namespace cetal
