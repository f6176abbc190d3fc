#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kBin = RGEN_BIN;

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("rgen_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args, const std::string& stderr_file = "") {
  std::string cmd = kBin + " " + args;
  if (!stderr_file.empty()) cmd += " 2> " + stderr_file;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("the full pipeline runs end to end on a 200-sample corpus") {
  Workspace ws;
  const std::string data = ws.path("data.jsonl");
  const std::string vocab = ws.path("vocab.txt");
  const std::string run_dir = ws.path("run");
  const std::string preds = ws.path("preds.jsonl");
  const std::string preds2 = ws.path("preds2.jsonl");
  const std::string metrics = ws.path("metrics.json");

  // model small enough for a smoke train; max_len covers the longest report
  const std::string model_cfg = ws.path("model.json");
  {
    std::ofstream out(model_cfg);
    out << R"({"num_layers":1,"n_head":2,"d_model":16,"dff":32,"dropout":0.1,)"
        << R"("max_len":96,"image_grid":[7,7,16]})";
  }

  REQUIRE(run("synth --out " + data + " --seed 5 --n-samples 200") == 0);
  CHECK(fs::exists(data));
  CHECK(fs::exists(data + ".manifest.json"));

  REQUIRE(run("tokenize --dataset " + data + " --out " + vocab + " --vocab-size 200") == 0);
  CHECK(fs::exists(vocab));

  SUBCASE("epoch 0 writes only the initial checkpoint and an empty log") {
    const std::string dir0 = ws.path("run0");
    REQUIRE(run("train --dataset " + data + " --vocab " + vocab + " --out-dir " + dir0 +
                " --model-config " + model_cfg + " --epochs 0") == 0);
    CHECK(fs::exists(dir0 + "/ckpt_epoch_0000.bin"));
    CHECK(fs::exists(dir0 + "/checkpoint_final.bin"));
    CHECK(read_file(dir0 + "/train.log").empty());
  }

  SUBCASE("--select-best-val tracks the best validation epoch") {
    const std::string dirb = ws.path("run_best");
    REQUIRE(run("train --dataset " + data + " --vocab " + vocab + " --out-dir " + dirb +
                " --model-config " + model_cfg + " --epochs 2 --select-best-val") == 0);
    CHECK(fs::exists(dirb + "/checkpoint_best.bin"));
  }

  REQUIRE(run("train --dataset " + data + " --vocab " + vocab + " --out-dir " + run_dir +
              " --model-config " + model_cfg +
              " --epochs 2 --batch-size 16 --learning-rate 0.003 --seed 11") == 0);
  CHECK(fs::exists(run_dir + "/ckpt_epoch_0002.bin"));
  const std::string log = read_file(run_dir + "/train.log");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);  // one line per epoch

  const std::string ckpt = run_dir + "/checkpoint_final.bin";
  REQUIRE(run("generate --checkpoint " + ckpt + " --vocab " + vocab + " --dataset " + data +
              " --split test --out " + preds) == 0);
  REQUIRE(run("generate --checkpoint " + ckpt + " --vocab " + vocab + " --dataset " + data +
              " --split test --out " + preds2) == 0);
  CHECK(read_file(preds) == read_file(preds2));  // byte-identical reruns

  // one record per test sample with the contracted fields
  {
    std::istringstream lines(read_file(preds));
    std::string line;
    std::size_t records = 0;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const json record = json::parse(line);
      CHECK(record.contains("id"));
      CHECK(record.contains("candidate"));
      CHECK(record.contains("references"));
      CHECK(record.contains("token_ids"));
      ++records;
    }
    CHECK(records == 20);
  }

  REQUIRE(run("evaluate --predictions " + preds + " --out " + metrics) == 0);
  const json scores = json::parse(read_file(metrics));
  for (const char* field : {"bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l", "cider"}) {
    CHECK(scores.at("nlp").contains(field));
  }
  CHECK(scores.at("nlp").at("n_pairs").get<int>() == 20);
  const auto& per_finding = scores.at("classification").at("per_finding");
  CHECK(per_finding.size() == 5);
  for (const char* finding : {"cardiomegaly", "edema", "consolidation", "atelectasis",
                              "pleural_effusion"}) {
    CHECK(per_finding.contains(finding));
    CHECK(per_finding.at(finding).contains("f1"));
  }
  CHECK(scores.at("classification").contains("accuracy"));

  // attention dump for a known sample id
  const std::string att = ws.path("att.txt");
  REQUIRE(run("attention --checkpoint " + ckpt + " --vocab " + vocab + " --dataset " + data +
              " --sample-id s00003 --out " + att) == 0);
  CHECK(fs::exists(att));
  CHECK(fs::exists(att + ".manifest.json"));
  const std::string dump = read_file(att);
  CHECK(dump.rfind("report: ", 0) == 0);
}

TEST_CASE("missing files fail with a single-line error and nonzero exit") {
  Workspace ws;
  const std::string err_file = ws.path("stderr.txt");
  CHECK(run("tokenize --dataset " + ws.path("nope.jsonl") + " --out " + ws.path("v.txt"),
            err_file) != 0);
  const std::string err = read_file(err_file);
  CHECK(err.rfind("error: ", 0) == 0);
  CHECK(std::count(err.begin(), err.end(), '\n') == 1);
  CHECK(err.find("nope.jsonl") != std::string::npos);
}

TEST_CASE("corrupt checkpoints are reported with the offending path") {
  Workspace ws;
  const std::string data = ws.path("tiny.jsonl");
  const std::string vocab = ws.path("tiny_vocab.txt");
  REQUIRE(run("synth --out " + data + " --seed 1 --n-samples 12") == 0);
  REQUIRE(run("tokenize --dataset " + data + " --out " + vocab + " --vocab-size 150") == 0);

  const std::string bad = ws.path("bad.bin");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "junkjunkjunk";
  }
  const std::string err_file = ws.path("stderr2.txt");
  CHECK(run("generate --checkpoint " + bad + " --vocab " + vocab + " --dataset " + data +
            " --split test --out " + ws.path("p.jsonl"), err_file) != 0);
  const std::string err = read_file(err_file);
  CHECK(err.find("bad.bin") != std::string::npos);
}

TEST_CASE("unknown split names are rejected") {
  Workspace ws;
  const std::string data = ws.path("d.jsonl");
  const std::string vocab = ws.path("v.txt");
  const std::string dir = ws.path("r");
  REQUIRE(run("synth --out " + data + " --seed 2 --n-samples 12") == 0);
  REQUIRE(run("tokenize --dataset " + data + " --out " + vocab + " --vocab-size 150") == 0);
  REQUIRE(run("train --dataset " + data + " --vocab " + vocab + " --out-dir " + dir +
              " --epochs 0") == 0);
  CHECK(run("generate --checkpoint " + dir + "/checkpoint_final.bin --vocab " + vocab +
            " --dataset " + data + " --split holdout --out " + ws.path("p.jsonl")) != 0);
}
