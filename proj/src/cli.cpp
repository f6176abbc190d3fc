#include "rgen/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "rgen/bpe.hpp"
#include "rgen/generate.hpp"
#include "rgen/labeler.hpp"
#include "rgen/metrics.hpp"
#include "rgen/model.hpp"
#include "rgen/synth.hpp"
#include "rgen/trainer.hpp"

namespace rgen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(std::string(what) + ": cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string(what) + " '" + path + "': " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& content, const char* what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(std::string(what) + ": cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw std::runtime_error(std::string(what) + ": write to '" + path + "' failed");
}

GeneratorConfig load_generator_config(const std::string& path) {
  GeneratorConfig config = default_generator_config();
  const json j = parse_json_file(path, "generator config");
  config.seed = j.value("seed", config.seed);
  config.n_samples = j.value("n_samples", config.n_samples);
  if (j.contains("grid")) {
    const auto grid = j.at("grid").get<std::vector<std::size_t>>();
    if (grid.size() != 3) {
      throw std::runtime_error("generator config '" + path + "': grid must be [h,w,c]");
    }
    config.grid_h = grid[0];
    config.grid_w = grid[1];
    config.grid_c = grid[2];
  }
  if (j.contains("prevalences")) {
    config.prevalences.clear();
    for (const auto& [id, p] : j.at("prevalences").items()) {
      config.prevalences[id] = p.get<double>();
    }
  }
  config.template_variants = j.value("template_variants", config.template_variants);
  config.blob_amplitude = j.value("blob_amplitude", config.blob_amplitude);
  config.noise_amplitude = j.value("noise_amplitude", config.noise_amplitude);
  return config;
}

ModelConfig load_model_config(const std::string& path) {
  ModelConfig config;
  const json j = parse_json_file(path, "model config");
  config.num_layers = j.value("num_layers", config.num_layers);
  config.n_head = j.value("n_head", config.n_head);
  config.d_model = j.value("d_model", config.d_model);
  config.dff = j.value("dff", config.dff);
  config.dropout = j.value("dropout", config.dropout);
  config.vocab_size = j.value("vocab_size", config.vocab_size);
  config.max_len = j.value("max_len", config.max_len);
  if (j.contains("image_grid")) {
    const auto grid = j.at("image_grid").get<std::vector<std::size_t>>();
    if (grid.size() != 3) {
      throw std::runtime_error("model config '" + path + "': image_grid must be [h,w,c]");
    }
    config.grid_h = grid[0];
    config.grid_w = grid[1];
    config.grid_c = grid[2];
  }
  config.image_pos_encoding = j.value("image_pos_encoding", config.image_pos_encoding);
  return config;
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig config;
  const json j = parse_json_file(path, "train config");
  config.learning_rate = j.value("learning_rate", config.learning_rate);
  config.batch_size = j.value("batch_size", config.batch_size);
  config.epochs = j.value("epochs", config.epochs);
  config.seed = j.value("seed", config.seed);
  config.beta1 = j.value("beta1", config.beta1);
  config.beta2 = j.value("beta2", config.beta2);
  config.eps = j.value("eps", config.eps);
  config.clip_norm = j.value("clip_norm", config.clip_norm);
  config.select_best_val = j.value("select_best_val", config.select_best_val);
  return config;
}

FindingOntology ontology_or_default(const std::string& path) {
  return path.empty() ? default_ontology() : load_ontology(path);
}

void require_exists(const std::string& path, const char* role) {
  if (!fs::exists(path)) {
    throw std::runtime_error(std::string("manifest: ") + role + " path '" + path +
                             "' does not exist");
  }
}

SplitResult split_dataset(const std::vector<Sample>& samples, const GenerateArgs& args) {
  return split(samples, args.split_train, args.split_val, args.split_test, args.split_seed);
}

std::vector<Sample> tokenize_samples(std::vector<Sample> samples, const Bpe& bpe,
                                     const ModelConfig& config) {
  for (Sample& sample : samples) {
    sample.token_ids = encode(sample.report, bpe.merges, bpe.vocab, true);
    if (sample.token_ids.size() > config.max_len) {
      throw std::runtime_error("train: sample '" + sample.id + "' encodes to " +
                               std::to_string(sample.token_ids.size()) +
                               " tokens, exceeding max_len " + std::to_string(config.max_len));
    }
  }
  return samples;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void RunManifest::write_sibling(const std::string& output_path) const {
  for (const auto& [role, path] : inputs) require_exists(path, role.c_str());
  json j = {{"tool_version", kToolVersion},
            {"command", command},
            {"seed", seed},
            {"inputs", json::object()},
            {"output", output_path}};
  for (const auto& [role, path] : inputs) j["inputs"][role] = path;
  write_text_file(output_path + ".manifest.json", j.dump(2) + "\n", "manifest");
}

void cmd_synth(const SynthArgs& args) {
  GeneratorConfig config = args.config_path.empty() ? default_generator_config()
                                                    : load_generator_config(args.config_path);
  if (args.seed) config.seed = *args.seed;
  if (args.n_samples) config.n_samples = *args.n_samples;

  const FindingOntology ontology = ontology_or_default(args.ontology_path);
  const std::vector<Sample> samples = generate(config, ontology);
  save_dataset(args.out, samples);

  RunManifest manifest{args.command_echo, config.seed, {}};
  if (!args.config_path.empty()) manifest.inputs.emplace_back("config", args.config_path);
  if (!args.ontology_path.empty()) manifest.inputs.emplace_back("ontology", args.ontology_path);
  manifest.write_sibling(args.out);
}

void cmd_tokenize(const TokenizeArgs& args) {
  const std::vector<Sample> samples = load_dataset(args.dataset);
  std::vector<std::string> corpus;
  corpus.reserve(samples.size());
  for (const Sample& s : samples) corpus.push_back(s.report);

  const Bpe bpe = train_bpe(corpus, args.vocab_size);
  save_vocab(bpe, args.out);

  RunManifest manifest{args.command_echo, 0, {{"dataset", args.dataset}}};
  manifest.write_sibling(args.out);
}

void cmd_train(const TrainArgs& args) {
  const Bpe bpe = load_vocab(args.vocab);

  ModelConfig model_config =
      args.model_config_path.empty() ? ModelConfig{} : load_model_config(args.model_config_path);
  model_config.vocab_size = bpe.vocab.size();
  model_config.validate();

  TrainConfig train_config =
      args.train_config_path.empty() ? TrainConfig{} : load_train_config(args.train_config_path);
  if (args.epochs) train_config.epochs = *args.epochs;
  if (args.learning_rate) train_config.learning_rate = *args.learning_rate;
  if (args.batch_size) train_config.batch_size = *args.batch_size;
  if (args.seed) train_config.seed = *args.seed;
  if (args.clip_norm) train_config.clip_norm = *args.clip_norm;
  if (args.select_best_val) train_config.select_best_val = *args.select_best_val;
  train_config.validate();

  const std::vector<Sample> samples =
      tokenize_samples(load_dataset(args.dataset), bpe, model_config);
  const SplitResult splits =
      split(samples, args.split_train, args.split_val, args.split_test, args.split_seed);
  if (splits.train.empty()) throw std::runtime_error("train: training split is empty");

  fs::create_directories(args.out_dir);
  auto ckpt_path = [&](std::size_t epoch) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_epoch_%04zu.bin", epoch);
    return (fs::path(args.out_dir) / name).string();
  };

  Rng init_rng(train_config.seed);
  ModelParams params = init_params(model_config, init_rng);
  save_checkpoint(ckpt_path(0), model_config, params);

  Trainer trainer(params, model_config, train_config);
  std::string log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;

  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const EpochStats stats = trainer.train_epoch(splits.train);
    const double wallclock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log += std::to_string(epoch) + "\t" + format_double(stats.mean_loss) + "\t" +
           format_double(stats.token_accuracy) + "\t" + format_double(wallclock) + "\n";
    save_checkpoint(ckpt_path(epoch), model_config, params);

    if (train_config.select_best_val && !splits.val.empty()) {
      const double val_loss = trainer.evaluate(splits.val).mean_loss;
      if (best_epoch == 0 || val_loss < best_val_loss) {
        best_epoch = epoch;
        best_val_loss = val_loss;
      }
    }
  }

  write_text_file((fs::path(args.out_dir) / "train.log").string(), log, "train log");
  const std::size_t final_epoch = train_config.epochs;
  fs::copy_file(ckpt_path(final_epoch), fs::path(args.out_dir) / "checkpoint_final.bin",
                fs::copy_options::overwrite_existing);
  if (train_config.select_best_val && best_epoch > 0) {
    fs::copy_file(ckpt_path(best_epoch), fs::path(args.out_dir) / "checkpoint_best.bin",
                  fs::copy_options::overwrite_existing);
  }

  RunManifest manifest{args.command_echo,
                       train_config.seed,
                       {{"dataset", args.dataset}, {"vocab", args.vocab}}};
  if (!args.model_config_path.empty()) {
    manifest.inputs.emplace_back("model_config", args.model_config_path);
  }
  if (!args.train_config_path.empty()) {
    manifest.inputs.emplace_back("train_config", args.train_config_path);
  }
  manifest.write_sibling((fs::path(args.out_dir) / "run").string());
}

void cmd_generate(const GenerateArgs& args) {
  auto [model_config, params] = load_checkpoint(args.checkpoint);
  const Bpe bpe = load_vocab(args.vocab);
  if (bpe.vocab.size() != model_config.vocab_size) {
    throw std::runtime_error("generate: vocab has " + std::to_string(bpe.vocab.size()) +
                             " tokens but checkpoint expects " +
                             std::to_string(model_config.vocab_size));
  }

  const std::vector<Sample> samples = load_dataset(args.dataset);
  const SplitResult splits = split_dataset(samples, args);
  const std::vector<Sample>* selected = nullptr;
  if (args.split == "train") selected = &splits.train;
  else if (args.split == "val") selected = &splits.val;
  else if (args.split == "test") selected = &splits.test;
  else if (args.split == "all") selected = &samples;
  else throw std::runtime_error("generate: unknown split '" + args.split + "'");

  std::string out;
  for (const Sample& sample : *selected) {
    const GenerationResult result =
        greedy_generate(sample.image, params, model_config, bpe.vocab);
    const json record = {{"id", sample.id},
                         {"candidate", result.text},
                         {"references", std::vector<std::string>{sample.report}},
                         {"token_ids", result.token_ids}};
    out += record.dump() + "\n";
  }
  write_text_file(args.out, out, "predictions");

  RunManifest manifest{args.command_echo,
                       args.split_seed,
                       {{"checkpoint", args.checkpoint},
                        {"vocab", args.vocab},
                        {"dataset", args.dataset}}};
  manifest.write_sibling(args.out);
}

void cmd_evaluate(const EvaluateArgs& args) {
  const std::vector<EvalPair> pairs = load_eval_pairs(args.predictions);
  const FindingOntology ontology = ontology_or_default(args.ontology_path);

  const NlpScores nlp = score_nlp(pairs);

  std::vector<std::set<std::string>> predicted, truth;
  predicted.reserve(pairs.size());
  truth.reserve(pairs.size());
  for (const EvalPair& pair : pairs) {
    predicted.push_back(label_report(pair.candidate, ontology));
    std::set<std::string> combined;
    for (const std::string& ref : pair.references) {
      for (const auto& id : label_report(ref, ontology)) combined.insert(id);
    }
    truth.push_back(std::move(combined));
  }
  const ClassificationReport report = classification_report(predicted, truth, ontology);

  json per_finding = json::object();
  for (const FindingScore& s : report.per_finding) {
    per_finding[s.id] = {{"precision", s.precision},
                         {"recall", s.recall},
                         {"f1", s.f1},
                         {"prevalence", s.prevalence}};
  }
  const json out = {
      {"nlp",
       {{"bleu_1", nlp.bleu_1},
        {"bleu_2", nlp.bleu_2},
        {"bleu_3", nlp.bleu_3},
        {"bleu_4", nlp.bleu_4},
        {"rouge_l", nlp.rouge_l},
        {"cider", nlp.cider},
        {"n_pairs", nlp.n_pairs}}},
      {"classification", {{"per_finding", per_finding}, {"accuracy", report.accuracy}}},
  };
  write_text_file(args.out, out.dump(2) + "\n", "metrics report");

  RunManifest manifest{args.command_echo, 0, {{"predictions", args.predictions}}};
  if (!args.ontology_path.empty()) manifest.inputs.emplace_back("ontology", args.ontology_path);
  manifest.write_sibling(args.out);
}

void cmd_attention(const AttentionArgs& args) {
  auto [model_config, params] = load_checkpoint(args.checkpoint);
  const Bpe bpe = load_vocab(args.vocab);
  const std::vector<Sample> samples = load_dataset(args.dataset);

  const Sample* sample = nullptr;
  for (const Sample& s : samples) {
    if (s.id == args.sample_id) {
      sample = &s;
      break;
    }
  }
  if (sample == nullptr) {
    throw std::runtime_error("attention: sample id '" + args.sample_id + "' not found in '" +
                             args.dataset + "'");
  }

  const GenerationResult result =
      greedy_generate(sample->image, params, model_config, bpe.vocab);
  save_attention_dump(args.out, make_attention_dump(result, bpe.vocab));

  RunManifest manifest{args.command_echo,
                       0,
                       {{"checkpoint", args.checkpoint},
                        {"vocab", args.vocab},
                        {"dataset", args.dataset}}};
  manifest.write_sibling(args.out);
}

}  // namespace rgen::cli
