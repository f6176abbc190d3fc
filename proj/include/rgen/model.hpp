#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rgen/tensor.hpp"

namespace rgen {

constexpr double kLayerNormEps = 1e-5;
constexpr double kMaskedScore = -1e9;

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t n_head = 4;
  std::size_t d_model = 64;
  std::size_t dff = 128;
  double dropout = 0.1;
  std::size_t vocab_size = 512;
  std::size_t max_len = 128;
  std::size_t grid_h = 7;
  std::size_t grid_w = 7;
  std::size_t grid_c = 16;
  bool image_pos_encoding = true;

  std::size_t head_dim() const { return d_model / n_head; }
  std::size_t image_len() const { return grid_h * grid_w; }
  void validate() const;
};

// One multi-head attention block: per-head projections plus the output
// projection applied to the concatenated heads.
struct AttentionParams {
  std::vector<Tensor> wq, wk, wv;  // n_head matrices [d_model, head_dim]
  Tensor wh;                       // [n_head * head_dim, d_model]
};

struct LayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  Tensor ln1_gain, ln1_bias;  // after self-attention
  Tensor ln2_gain, ln2_bias;  // after cross-attention
  Tensor ln3_gain, ln3_bias;  // after feed-forward
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct ModelParams {
  Tensor token_embedding;    // [vocab_size, d_model]
  Tensor patch_embedding;    // [grid_c, d_model]
  std::vector<LayerParams> layers;
  Tensor output_projection;  // [d_model, vocab_size]
};

ModelParams init_params(const ModelConfig& config, Rng& rng);
ModelParams zero_params(const ModelConfig& config);

// Stable enumeration used by the optimizer, checkpoints and gradient checks.
std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& params);

void zero_grads(const ModelParams& params);
bool params_all_finite(const ModelParams& params);

// Additive mask, entries 0 (permitted) or kMaskedScore (forbidden).
struct AttentionMask {
  Tensor grid;
  static AttentionMask causal(std::size_t len);
};

Tensor positional_encoding(std::size_t length, std::size_t d_model);

// [h, w, c] -> [h*w, c]; cell (r, col) maps to sequence index r*w + col
Tensor flatten_image_features(const Tensor& grid);

struct AttentionResult {
  Tensor output;
  Tensor weights;
};

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const AttentionMask* mask);

struct MultiHeadResult {
  Tensor output;
  std::vector<Tensor> head_weights;
};

MultiHeadResult multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                                     const AttentionParams& params, const AttentionMask* mask);

// grid [h,w,c] -> [Li, d_model] (or [B,h,w,c] -> [B, Li, d_model]):
// flatten, patch-embed, add positional encoding when configured
Tensor embed_image(const Tensor& grid, const ModelParams& params, const ModelConfig& config,
                   bool train_mode = false, Rng* rng = nullptr);

struct ForwardResult {
  Tensor logits;  // [.., Lt, vocab_size]
  // cross-attention weights per layer, per head, each [.., Lt, Li]
  std::vector<std::vector<Tensor>> cross_attention;
};

// image_seq must already be patch-embedded and position-encoded
ForwardResult decoder_forward(const Tensor& image_seq, const std::vector<int>& token_ids,
                              const ModelParams& params, const ModelConfig& config,
                              bool train_mode, Rng* rng = nullptr);

// batched variant: image_seq [B, Li, d_model], ids row-major [B * len]
ForwardResult decoder_forward_batch(const Tensor& image_seq, const std::vector<int>& token_ids,
                                    std::size_t batch, std::size_t len,
                                    const ModelParams& params, const ModelConfig& config,
                                    bool train_mode, Rng* rng = nullptr);

// Binary checkpoint: "RCKT" magic, version byte, config, named tensors with
// 32-bit float payloads (little-endian).
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

}  // namespace rgen
