#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rgen/model.hpp"
#include "rgen/tensor.hpp"

namespace rgen {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global-norm gradient clip; <= 0 disables
  bool select_best_val = false;
  void validate() const;
};

// One training pair: image feature grid plus its tokenized report.
struct Sample {
  std::string id;
  Tensor image;  // [h, w, c]
  std::string report;
  std::vector<int> token_ids;        // BOS ... EOS
  std::vector<std::string> labels;   // finding ids, used only for surrogate evaluation
};

struct TeacherForcingPair {
  std::vector<int> input;   // ids[0 .. L-1)
  std::vector<int> target;  // ids[1 .. L)
};

TeacherForcingPair make_teacher_forcing_pair(const std::vector<int>& token_ids);

struct AdamState {
  std::vector<std::vector<double>> m;  // parallel to named_params order
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

AdamState make_adam_state(const ModelParams& params);

// standard Adam with bias correction; empty gradients count as zero
void adam_step(const ModelParams& params, AdamState& state, const TrainConfig& config);

// returns the pre-clip global norm
double clip_gradients(const ModelParams& params, double max_norm);

struct EpochStats {
  double mean_loss = 0.0;      // over non-pad tokens
  double token_accuracy = 0.0;
  std::size_t tokens = 0;
};

// Seeded teacher-forcing training loop. Owns the optimizer state and the
// RNG streams so repeated runs from one seed are bit-identical.
class Trainer {
 public:
  Trainer(ModelParams& params, const ModelConfig& model_config, const TrainConfig& train_config);

  EpochStats train_epoch(const std::vector<Sample>& samples);
  EpochStats evaluate(const std::vector<Sample>& samples);  // eval mode, no updates

  const AdamState& adam_state() const { return adam_; }

 private:
  ModelParams& params_;
  ModelConfig model_config_;
  TrainConfig train_config_;
  AdamState adam_;
  Rng shuffle_rng_;
  Rng dropout_rng_;
};

}  // namespace rgen
