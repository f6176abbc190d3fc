#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rgen/cli.hpp"

namespace {

std::string echo_command(int argc, char** argv) {
  std::string echo;
  for (int i = 0; i < argc; ++i) {
    if (i) echo += ' ';
    echo += argv[i];
  }
  return echo;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image-conditioned radiology report generation pipeline"};
  app.require_subcommand(1);
  const std::string command_echo = echo_command(argc, argv);

  rgen::cli::SynthArgs synth;
  synth.command_echo = command_echo;
  std::uint64_t synth_seed = 0;
  std::size_t synth_n = 0;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "output dataset (JSON-lines)")->required();
  synth_cmd->add_option("--config", synth.config_path, "generator config JSON");
  synth_cmd->add_option("--ontology", synth.ontology_path, "ontology JSON-lines");
  auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed, "generator seed");
  auto* synth_n_opt = synth_cmd->add_option("--n-samples", synth_n, "number of samples");

  rgen::cli::TokenizeArgs tokenize;
  tokenize.command_echo = command_echo;
  auto* tokenize_cmd = app.add_subcommand("tokenize", "train the BPE tokenizer on a dataset");
  tokenize_cmd->add_option("--dataset", tokenize.dataset, "dataset JSON-lines")->required();
  tokenize_cmd->add_option("--out", tokenize.out, "output vocab file")->required();
  tokenize_cmd->add_option("--vocab-size", tokenize.vocab_size,
                           "target vocabulary size (default 512)");

  rgen::cli::TrainArgs train;
  train.command_echo = command_echo;
  std::size_t train_epochs = 0, train_batch = 0;
  double train_lr = 0.0, train_clip = 0.0;
  std::uint64_t train_seed = 0;
  bool train_best_val = false;
  auto* train_cmd = app.add_subcommand("train", "train the captioning model");
  train_cmd->add_option("--dataset", train.dataset, "dataset JSON-lines")->required();
  train_cmd->add_option("--vocab", train.vocab, "trained vocab file")->required();
  train_cmd->add_option("--out-dir", train.out_dir, "output directory")->required();
  train_cmd->add_option("--model-config", train.model_config_path, "model config JSON");
  train_cmd->add_option("--train-config", train.train_config_path, "train config JSON");
  auto* epochs_opt = train_cmd->add_option("--epochs", train_epochs, "epoch count override");
  auto* lr_opt = train_cmd->add_option("--learning-rate", train_lr, "learning rate override");
  auto* batch_opt = train_cmd->add_option("--batch-size", train_batch, "batch size override");
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "training seed override");
  auto* clip_opt =
      train_cmd->add_option("--clip-norm", train_clip, "gradient clip norm; 0 disables");
  auto* best_val_opt = train_cmd->add_flag("--select-best-val", train_best_val,
                                           "track the best validation epoch");
  train_cmd->add_option("--split-seed", train.split_seed, "split shuffle seed (default 42)");

  rgen::cli::GenerateArgs generate;
  generate.command_echo = command_echo;
  auto* generate_cmd = app.add_subcommand("generate", "greedy-decode reports for a split");
  generate_cmd->add_option("--checkpoint", generate.checkpoint, "model checkpoint")->required();
  generate_cmd->add_option("--vocab", generate.vocab, "trained vocab file")->required();
  generate_cmd->add_option("--dataset", generate.dataset, "dataset JSON-lines")->required();
  generate_cmd->add_option("--split", generate.split, "train | val | test | all (default test)");
  generate_cmd->add_option("--out", generate.out, "output predictions JSON-lines")->required();
  generate_cmd->add_option("--split-seed", generate.split_seed, "split shuffle seed (default 42)");

  rgen::cli::EvaluateArgs evaluate;
  evaluate.command_echo = command_echo;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score predictions (NLP + classification)");
  evaluate_cmd->add_option("--predictions", evaluate.predictions, "predictions JSON-lines")
      ->required();
  evaluate_cmd->add_option("--ontology", evaluate.ontology_path, "ontology JSON-lines");
  evaluate_cmd->add_option("--out", evaluate.out, "output metrics JSON")->required();

  rgen::cli::AttentionArgs attention;
  attention.command_echo = command_echo;
  auto* attention_cmd = app.add_subcommand("attention", "dump per-token attention maps");
  attention_cmd->add_option("--checkpoint", attention.checkpoint, "model checkpoint")->required();
  attention_cmd->add_option("--vocab", attention.vocab, "trained vocab file")->required();
  attention_cmd->add_option("--dataset", attention.dataset, "dataset JSON-lines")->required();
  attention_cmd->add_option("--sample-id", attention.sample_id, "sample id to explain")
      ->required();
  attention_cmd->add_option("--out", attention.out, "output attention dump")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      if (*synth_seed_opt) synth.seed = synth_seed;
      if (*synth_n_opt) synth.n_samples = synth_n;
      rgen::cli::cmd_synth(synth);
    } else if (tokenize_cmd->parsed()) {
      rgen::cli::cmd_tokenize(tokenize);
    } else if (train_cmd->parsed()) {
      if (*epochs_opt) train.epochs = train_epochs;
      if (*lr_opt) train.learning_rate = train_lr;
      if (*batch_opt) train.batch_size = train_batch;
      if (*seed_opt) train.seed = train_seed;
      if (*clip_opt) train.clip_norm = train_clip;
      if (*best_val_opt) train.select_best_val = train_best_val;
      rgen::cli::cmd_train(train);
    } else if (generate_cmd->parsed()) {
      rgen::cli::cmd_generate(generate);
    } else if (evaluate_cmd->parsed()) {
      rgen::cli::cmd_evaluate(evaluate);
    } else if (attention_cmd->parsed()) {
      rgen::cli::cmd_attention(attention);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
