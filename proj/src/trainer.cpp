#include "rgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rgen/bpe.hpp"

namespace rgen {

void TrainConfig::validate() const {
  // lr 0 is allowed: it must run a full epoch without touching parameters
  if (learning_rate < 0.0) throw std::invalid_argument("train config: learning_rate must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw std::invalid_argument("train config: betas must lie in [0,1)");
  }
}

TeacherForcingPair make_teacher_forcing_pair(const std::vector<int>& token_ids) {
  if (token_ids.size() < 2) {
    throw std::invalid_argument("trainer: degenerate sample, need >= 2 tokens, got " +
                                std::to_string(token_ids.size()));
  }
  TeacherForcingPair pair;
  pair.input.assign(token_ids.begin(), token_ids.end() - 1);
  pair.target.assign(token_ids.begin() + 1, token_ids.end());
  return pair;
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState state;
  for (const auto& [name, tensor] : named_params(params)) {
    state.m.emplace_back(tensor.size(), 0.0);
    state.v.emplace_back(tensor.size(), 0.0);
  }
  return state;
}

void adam_step(const ModelParams& params, AdamState& state, const TrainConfig& config) {
  const auto named = named_params(params);
  if (named.size() != state.m.size()) {
    throw std::logic_error("adam: optimizer state does not match parameter set");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor tensor = named[i].second;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != tensor.size()) {
      throw std::logic_error("adam: state shape mismatch for " + named[i].first);
    }
    const bool has_grad = tensor.has_grad();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = has_grad ? tensor.node()->grad[j] : 0.0;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      tensor.data()[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

double clip_gradients(const ModelParams& params, double max_norm) {
  double sq = 0.0;
  const auto named = named_params(params);
  for (const auto& [name, tensor] : named) {
    if (!tensor.has_grad()) continue;
    for (double g : tensor.node()->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& [name, tensor] : named) {
      if (!tensor.has_grad()) continue;
      for (double& g : tensor.node()->grad) g *= factor;
    }
  }
  return norm;
}

Trainer::Trainer(ModelParams& params, const ModelConfig& model_config,
                 const TrainConfig& train_config)
    : params_(params),
      model_config_(model_config),
      train_config_(train_config),
      adam_(make_adam_state(params)),
      shuffle_rng_(train_config.seed),
      dropout_rng_(train_config.seed ^ 0x9e3779b97f4a7c15ULL) {
  model_config_.validate();
  train_config_.validate();
}

namespace {

struct Batch {
  Tensor images;                 // [B, h, w, c]
  std::vector<int> inputs;       // [B * len] padded
  std::vector<int> targets;      // [B * len] padded
  std::size_t size = 0;
  std::size_t len = 0;
};

Batch assemble_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                     std::size_t begin, std::size_t end, const ModelConfig& config) {
  Batch batch;
  batch.size = end - begin;

  std::vector<TeacherForcingPair> pairs;
  pairs.reserve(batch.size);
  for (std::size_t i = begin; i < end; ++i) {
    pairs.push_back(make_teacher_forcing_pair(samples[idx[i]].token_ids));
    batch.len = std::max(batch.len, pairs.back().input.size());
  }

  batch.inputs.assign(batch.size * batch.len, kPadId);
  batch.targets.assign(batch.size * batch.len, kPadId);
  for (std::size_t b = 0; b < batch.size; ++b) {
    std::copy(pairs[b].input.begin(), pairs[b].input.end(),
              batch.inputs.begin() + static_cast<std::ptrdiff_t>(b * batch.len));
    std::copy(pairs[b].target.begin(), pairs[b].target.end(),
              batch.targets.begin() + static_cast<std::ptrdiff_t>(b * batch.len));
  }

  batch.images = Tensor::zeros({batch.size, config.grid_h, config.grid_w, config.grid_c});
  const std::size_t cell = config.grid_h * config.grid_w * config.grid_c;
  for (std::size_t b = 0; b < batch.size; ++b) {
    const Tensor& img = samples[idx[b + begin]].image;
    if (img.size() != cell) {
      throw std::invalid_argument("trainer: sample '" + samples[idx[b + begin]].id +
                                  "' image shape " + shape_str(img.shape()) +
                                  " does not match config grid");
    }
    std::copy(img.data().begin(), img.data().end(),
              batch.images.data().begin() + static_cast<std::ptrdiff_t>(b * cell));
  }
  return batch;
}

void accumulate_accuracy(const Tensor& logits, const std::vector<int>& targets,
                         std::size_t vocab, std::size_t& correct, std::size_t& live) {
  const std::size_t rows = logits.size() / vocab;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == kPadId) continue;
    const double* row = logits.data().data() + r * vocab;
    std::size_t best = 0;
    for (std::size_t v = 1; v < vocab; ++v) {
      if (row[v] > row[best]) best = v;
    }
    if (static_cast<int>(best) == targets[r]) ++correct;
    ++live;
  }
}

std::size_t count_live(const std::vector<int>& targets) {
  return static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](int t) { return t != kPadId; }));
}

}  // namespace

EpochStats Trainer::train_epoch(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("trainer: empty dataset");

  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  shuffle_rng_.shuffle(idx);

  double loss_sum = 0.0;
  std::size_t token_total = 0, correct_total = 0;

  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < idx.size(); begin += train_config_.batch_size) {
    const std::size_t end = std::min(begin + train_config_.batch_size, idx.size());
    Batch batch = assemble_batch(samples, idx, begin, end, model_config_);

    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      Tensor image_seq =
          embed_image(batch.images, params_, model_config_, true, &dropout_rng_);
      ForwardResult fwd = decoder_forward_batch(image_seq, batch.inputs, batch.size, batch.len,
                                                params_, model_config_, true, &dropout_rng_);
      loss = cross_entropy_from_logits(fwd.logits, batch.targets, kPadId);
      if (!std::isfinite(loss.value())) {
        throw std::runtime_error("trainer: loss diverged (non-finite) at batch index " +
                                 std::to_string(batch_index));
      }
      tape.backward(loss);

      const std::size_t live = count_live(batch.targets);
      loss_sum += loss.value() * static_cast<double>(live);
      accumulate_accuracy(fwd.logits, batch.targets, model_config_.vocab_size, correct_total,
                          token_total);
    }

    clip_gradients(params_, train_config_.clip_norm);
    adam_step(params_, adam_, train_config_);
    zero_grads(params_);
    if (!params_all_finite(params_)) {
      throw std::runtime_error("trainer: parameters became non-finite at batch index " +
                               std::to_string(batch_index));
    }
    ++batch_index;
  }

  EpochStats stats;
  stats.tokens = token_total;
  stats.mean_loss = loss_sum / static_cast<double>(token_total);
  stats.token_accuracy = static_cast<double>(correct_total) / static_cast<double>(token_total);
  return stats;
}

EpochStats Trainer::evaluate(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("trainer: empty dataset");

  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);

  double loss_sum = 0.0;
  std::size_t token_total = 0, correct_total = 0;
  for (std::size_t begin = 0; begin < idx.size(); begin += train_config_.batch_size) {
    const std::size_t end = std::min(begin + train_config_.batch_size, idx.size());
    Batch batch = assemble_batch(samples, idx, begin, end, model_config_);

    Tensor image_seq = embed_image(batch.images, params_, model_config_, false, nullptr);
    ForwardResult fwd = decoder_forward_batch(image_seq, batch.inputs, batch.size, batch.len,
                                              params_, model_config_, false, nullptr);
    Tensor loss = cross_entropy_from_logits(fwd.logits, batch.targets, kPadId);

    const std::size_t live = count_live(batch.targets);
    loss_sum += loss.value() * static_cast<double>(live);
    accumulate_accuracy(fwd.logits, batch.targets, model_config_.vocab_size, correct_total,
                        token_total);
  }

  EpochStats stats;
  stats.tokens = token_total;
  stats.mean_loss = loss_sum / static_cast<double>(token_total);
  stats.token_accuracy = static_cast<double>(correct_total) / static_cast<double>(token_total);
  return stats;
}

}  // namespace rgen
