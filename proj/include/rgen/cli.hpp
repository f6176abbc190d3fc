#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rgen::cli {

inline const std::string kToolVersion = "rgen 1.0.0";

// Reproducibility record written next to every output ("<output>.manifest.json").
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // role -> path

  void write_sibling(const std::string& output_path) const;
};

struct SynthArgs {
  std::string out;
  std::string config_path;    // optional JSON GeneratorConfig
  std::string ontology_path;  // optional, default ontology otherwise
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_samples;
  std::string command_echo;
};

struct TokenizeArgs {
  std::string dataset;
  std::string out;
  std::size_t vocab_size = 512;
  std::string command_echo;
};

struct TrainArgs {
  std::string dataset;
  std::string vocab;
  std::string out_dir;
  std::string model_config_path;  // optional JSON
  std::string train_config_path;  // optional JSON
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> clip_norm;
  std::optional<bool> select_best_val;
  double split_train = 0.8, split_val = 0.1, split_test = 0.1;
  std::uint64_t split_seed = 42;
  std::string command_echo;
};

struct GenerateArgs {
  std::string checkpoint;
  std::string vocab;
  std::string dataset;
  std::string split = "test";  // train | val | test | all
  std::string out;
  double split_train = 0.8, split_val = 0.1, split_test = 0.1;
  std::uint64_t split_seed = 42;
  std::string command_echo;
};

struct EvaluateArgs {
  std::string predictions;
  std::string ontology_path;  // optional
  std::string out;
  std::string command_echo;
};

struct AttentionArgs {
  std::string checkpoint;
  std::string vocab;
  std::string dataset;
  std::string sample_id;
  std::string out;
  std::string command_echo;
};

void cmd_synth(const SynthArgs& args);
void cmd_tokenize(const TokenizeArgs& args);
void cmd_train(const TrainArgs& args);
void cmd_generate(const GenerateArgs& args);
void cmd_evaluate(const EvaluateArgs& args);
void cmd_attention(const AttentionArgs& args);

}  // namespace rgen::cli
