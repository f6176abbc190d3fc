#include "rgen/generate.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rgen {

namespace {

std::size_t argmax_row(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t v = 1; v < n; ++v) {
    if (row[v] > row[best]) best = v;
  }
  return best;
}

AttentionTrace::Step capture_step(const ForwardResult& fwd, std::size_t position,
                                  std::size_t image_len) {
  AttentionTrace::Step step;
  const auto& last_layer = fwd.cross_attention.back();
  step.mean_map.assign(image_len, 0.0);
  for (const Tensor& head : last_layer) {
    const double* row = head.data().data() + position * image_len;
    step.head_rows.emplace_back(row, row + image_len);
    for (std::size_t i = 0; i < image_len; ++i) step.mean_map[i] += row[i];
  }
  const double inv = 1.0 / static_cast<double>(last_layer.size());
  for (double& v : step.mean_map) v *= inv;
  return step;
}

}  // namespace

GenerationResult greedy_generate(const Tensor& image_grid, const ModelParams& params,
                                 const ModelConfig& config, const Vocab& vocab) {
  GenerationResult result;
  result.trace.grid_h = config.grid_h;
  result.trace.grid_w = config.grid_w;

  const Tensor image_seq = embed_image(image_grid, params, config);

  std::vector<int> prefix = {kBosId};
  while (result.token_ids.size() < config.max_len) {
    const ForwardResult fwd = decoder_forward(image_seq, prefix, params, config, false);
    const std::size_t last = prefix.size() - 1;
    const double* row = fwd.logits.data().data() + last * config.vocab_size;
    const int next = static_cast<int>(argmax_row(row, config.vocab_size));

    result.trace.steps.push_back(capture_step(fwd, last, config.image_len()));
    result.token_ids.push_back(next);
    if (next == kEosId) break;
    prefix.push_back(next);
  }

  result.text = decode(result.token_ids, vocab);
  return result;
}

std::vector<std::vector<double>> attention_map_for_token(const AttentionTrace& trace,
                                                         std::size_t t) {
  if (t >= trace.steps.size()) {
    throw std::out_of_range("attention trace: token index " + std::to_string(t) +
                            " out of range for " + std::to_string(trace.steps.size()) +
                            " steps");
  }
  std::vector<std::vector<double>> grid(trace.grid_h, std::vector<double>(trace.grid_w));
  for (std::size_t r = 0; r < trace.grid_h; ++r) {
    for (std::size_t c = 0; c < trace.grid_w; ++c) {
      grid[r][c] = trace.steps[t].mean_map[r * trace.grid_w + c];
    }
  }
  return grid;
}

bool verify_greedy_equivalence(const Tensor& image_grid, const std::vector<int>& generated,
                               const ModelParams& params, const ModelConfig& config) {
  if (generated.empty()) return true;
  const Tensor image_seq = embed_image(image_grid, params, config);

  std::vector<int> prefix = {kBosId};
  prefix.insert(prefix.end(), generated.begin(), generated.end() - 1);
  const ForwardResult fwd = decoder_forward(image_seq, prefix, params, config, false);
  for (std::size_t p = 0; p < prefix.size(); ++p) {
    const double* row = fwd.logits.data().data() + p * config.vocab_size;
    if (static_cast<int>(argmax_row(row, config.vocab_size)) != generated[p]) return false;
  }
  return true;
}

AttentionDump make_attention_dump(const GenerationResult& result, const Vocab& vocab) {
  AttentionDump dump;
  dump.report = result.text;
  dump.grid_h = result.trace.grid_h;
  dump.grid_w = result.trace.grid_w;
  dump.token_ids = result.token_ids;
  for (int id : result.token_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw std::out_of_range("attention dump: id " + std::to_string(id) + " outside vocab");
    }
    dump.tokens.push_back(vocab.tokens[static_cast<std::size_t>(id)]);
  }
  for (const auto& step : result.trace.steps) dump.maps.push_back(step.mean_map);
  return dump;
}

void save_attention_dump(const std::string& path, const AttentionDump& dump) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("attention dump: cannot open '" + path + "' for writing");

  out << "report: " << dump.report << "\n";
  out << "tokens:";
  for (const auto& tok : dump.tokens) out << " " << tok;
  out << "\n";
  out << "token_ids:";
  for (int id : dump.token_ids) out << " " << id;
  out << "\n";
  out << "grid: " << dump.grid_h << " " << dump.grid_w << "\n";

  char buf[40];
  for (const auto& map : dump.maps) {
    for (std::size_t i = 0; i < map.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", map[i]);
      if (i) out << " ";
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("attention dump: write to '" + path + "' failed");
}

AttentionDump load_attention_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("attention dump: cannot open '" + path + "'");

  auto fail = [&](std::size_t line_no, const std::string& why) -> std::runtime_error {
    return std::runtime_error("attention dump '" + path + "': parse error at line " +
                              std::to_string(line_no) + ": " + why);
  };

  AttentionDump dump;
  std::string line;
  std::size_t line_no = 0;

  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw fail(line_no + 1, std::string("missing ") + what);
    ++line_no;
  };

  next_line("report header");
  if (line.rfind("report: ", 0) != 0 && line != "report:") throw fail(line_no, "expected 'report: ...'");
  dump.report = line.size() > 8 ? line.substr(8) : "";

  next_line("tokens header");
  if (line.rfind("tokens:", 0) != 0) throw fail(line_no, "expected 'tokens: ...'");
  {
    std::istringstream ss(line.substr(7));
    std::string tok;
    while (ss >> tok) dump.tokens.push_back(tok);
  }

  next_line("token_ids header");
  if (line.rfind("token_ids:", 0) != 0) throw fail(line_no, "expected 'token_ids: ...'");
  {
    std::istringstream ss(line.substr(10));
    int id;
    while (ss >> id) dump.token_ids.push_back(id);
  }

  next_line("grid header");
  {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag >> dump.grid_h >> dump.grid_w) || tag != "grid:") {
      throw fail(line_no, "expected 'grid: <h> <w>'");
    }
  }

  const std::size_t cells = dump.grid_h * dump.grid_w;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> map;
    double v;
    while (ss >> v) map.push_back(v);
    if (map.size() != cells) {
      throw fail(line_no, "expected " + std::to_string(cells) + " weights, got " +
                              std::to_string(map.size()));
    }
    dump.maps.push_back(std::move(map));
  }
  if (dump.maps.size() != dump.token_ids.size()) {
    throw fail(line_no, "have " + std::to_string(dump.maps.size()) + " maps for " +
                            std::to_string(dump.token_ids.size()) + " tokens");
  }
  return dump;
}

}  // namespace rgen
