#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "optree/funcimg.hpp"
#include "optree/losses.hpp"
#include "optree/model.hpp"
#include "optree/teacher.hpp"

namespace optree {

// One aligned training example across all modalities.
struct Triple {
  Ots ots;
  ConstVec consts;
  FuncImage img;
  std::string formula;
};

struct TrainConfig {
  LossWeights weights;
  int batch = 8;
  int total_steps = 2000;
  int steps_per_epoch = 25;
  double lr_warm_start = 1e-6;
  double lr_max = 1e-4;
  double decay = 0.9;
  int decay_every_epochs = 5;
  double warmup_frac = 0.05;
  int queue_capacity = 256;
  int n_neg = 64;
  std::uint64_t seed = 0;
  bool positive_in_denominator = true;
  bool train_encoder = true;

  void validate() const;
  int warmup_steps() const;
};

double lr_schedule(std::int64_t step, const TrainConfig& cfg);

struct TrainState {
  FeatureQueue qi, qo, qs;
  std::int64_t step = 0;

  static TrainState init(const NetConfig& net, const TrainConfig& cfg);
};

struct StepResult {
  LossParts parts;
  double total = 0;
  double lr = 0;
};

// One Algorithm-1 step: forward, losses, Adam update, then queue pushes.
StepResult pretrain_step(Model& model, const std::vector<Triple>& batch, TrainState& state,
                         const Teacher& teacher, const TrainConfig& cfg);

// Graph-free forward pass over [begin, end) of the batch; per-loss partial
// sums in the same accumulation order as the scalar kernels. Negatives and
// FOM pairing are global over the full batch.
struct ShardSums {
  double foc = 0, fom = 0, om = 0, kd = 0;
  int n_samples = 0;
  int n_match_rows = 0;
};
ShardSums pretrain_shard_sums(Model& model, const std::vector<Triple>& batch, int begin, int end,
                              const TrainState& state, const Teacher& teacher,
                              const TrainConfig& cfg, std::uint64_t step_seed);
LossParts reduce_shards(const std::vector<ShardSums>& shards);

// Differentiable total pre-training loss for the current step; with_grad
// leaves fresh gradients in the parameter store. No update, no queue push.
double pretrain_loss_grad(Model& model, const std::vector<Triple>& batch,
                          const TrainState& state, const Teacher& teacher,
                          const TrainConfig& cfg, bool with_grad);

// Monolithic forward losses for the current step (no update).
LossParts pretrain_forward(Model& model, const std::vector<Triple>& batch,
                           const TrainState& state, const Teacher& teacher,
                           const TrainConfig& cfg);

struct StepLog {
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;
};

void write_loss_csv(const std::vector<StepLog>& log, const std::string& path);

// Next-token fine-tuning with the decoder conditioned on image features.
std::vector<StepLog> finetune_funcimg_ots(Model& model, const std::vector<Triple>& data,
                                          const TrainConfig& cfg);

// Next-token fine-tuning with the decoder conditioned on embedded teacher
// features of the formula string.
std::vector<StepLog> finetune_formula_ots(Model& model, const std::vector<Triple>& data,
                                          const Teacher& teacher, const TrainConfig& cfg);

enum class DecodeMode { greedy, beam };

Ots generate_ots(Model& model, const FeatureMatrix& cond, DecodeMode mode = DecodeMode::greedy,
                 int beam_width = 4);

}  // namespace optree
