#pragma once

#include <string>
#include <vector>

#include "rgen/bpe.hpp"
#include "rgen/model.hpp"

namespace rgen {

// Per generated token: the raw per-head cross-attention rows of the last
// decoder layer plus their head-mean, a probability map over image positions.
struct AttentionTrace {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  struct Step {
    std::vector<std::vector<double>> head_rows;  // [n_head][h*w]
    std::vector<double> mean_map;                // [h*w]
  };
  std::vector<Step> steps;
};

struct GenerationResult {
  std::string text;            // specials stripped
  std::vector<int> token_ids;  // generated ids, including the final EOS when produced
  AttentionTrace trace;        // one step per generated token
};

// BOS-seeded greedy decoding; halts on EOS or after max_len generated tokens.
// The full prefix is re-run each step; ties break to the lowest token id.
GenerationResult greedy_generate(const Tensor& image_grid, const ModelParams& params,
                                 const ModelConfig& config, const Vocab& vocab);

// head-mean map for generated token t, unflattened row-major to [h][w]
std::vector<std::vector<double>> attention_map_for_token(const AttentionTrace& trace,
                                                         std::size_t t);

// Re-scores the final generated prefix in one pass and checks that every
// position's argmax reproduces the token the greedy loop chose there.
bool verify_greedy_equivalence(const Tensor& image_grid, const std::vector<int>& generated,
                               const ModelParams& params, const ModelConfig& config);

struct AttentionDump {
  std::string report;
  std::vector<std::string> tokens;
  std::vector<int> token_ids;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::vector<double>> maps;  // per token, h*w head-mean weights
};

AttentionDump make_attention_dump(const GenerationResult& result, const Vocab& vocab);
void save_attention_dump(const std::string& path, const AttentionDump& dump);
AttentionDump load_attention_dump(const std::string& path);

}  // namespace rgen
