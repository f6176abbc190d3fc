#include "rgen/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace rgen {

namespace {

constexpr double kRougeBetaSq = 1.2;
constexpr double kCiderSigma = 6.0;
constexpr std::size_t kCiderMaxOrder = 4;

using Counts = std::map<std::string, std::size_t>;

std::string join_gram(const std::vector<std::string>& tokens, std::size_t begin, std::size_t n) {
  std::string key = tokens[begin];
  for (std::size_t i = 1; i < n; ++i) {
    key += '\x1f';
    key += tokens[begin + i];
  }
  return key;
}

Counts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  Counts counts;
  if (tokens.size() >= n && n > 0) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[join_gram(tokens, i, n)];
  }
  return counts;
}

void require_pairs(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("metrics: empty corpus");
  for (const EvalPair& p : pairs) {
    if (p.references.empty()) {
      throw std::invalid_argument("metrics: pair '" + p.id + "' has no references");
    }
  }
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::vector<std::string> metric_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      tokens.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  flush();
  return tokens;
}

double bleu_n(const std::vector<EvalPair>& pairs, std::size_t n) {
  if (n < 1) throw std::invalid_argument("bleu: order must be >= 1");
  require_pairs(pairs);

  std::vector<std::size_t> clipped(n, 0), total(n, 0);
  std::size_t cand_len = 0, ref_len = 0;

  for (const EvalPair& pair : pairs) {
    const auto cand = metric_tokenize(pair.candidate);
    std::vector<std::vector<std::string>> refs;
    refs.reserve(pair.references.size());
    for (const auto& r : pair.references) refs.push_back(metric_tokenize(r));

    cand_len += cand.size();
    // effective reference length: closest to the candidate, ties -> shorter
    std::size_t best_ref = refs[0].size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (diff(r.size()) < diff(best_ref) || (diff(r.size()) == diff(best_ref) && r.size() < best_ref)) {
        best_ref = r.size();
      }
    }
    ref_len += best_ref;

    for (std::size_t k = 1; k <= n; ++k) {
      const Counts cand_counts = ngram_counts(cand, k);
      Counts max_ref;
      for (const auto& r : refs) {
        for (const auto& [gram, count] : ngram_counts(r, k)) {
          max_ref[gram] = std::max(max_ref[gram], count);
        }
      }
      for (const auto& [gram, count] : cand_counts) {
        total[k - 1] += count;
        auto it = max_ref.find(gram);
        clipped[k - 1] += std::min(count, it == max_ref.end() ? 0 : it->second);
      }
    }
  }

  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (clipped[k] == 0 || total[k] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped[k]) / static_cast<double>(total[k]));
  }
  const double precision = std::exp(log_sum / static_cast<double>(n));
  const double brevity =
      cand_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return brevity * precision;
}

double rouge_l(const std::vector<EvalPair>& pairs) {
  require_pairs(pairs);
  double sum = 0.0;
  for (const EvalPair& pair : pairs) {
    const auto cand = metric_tokenize(pair.candidate);
    double best = 0.0;
    for (const auto& ref_text : pair.references) {
      const auto ref = metric_tokenize(ref_text);
      if (cand.empty() || ref.empty()) continue;
      const double lcs = static_cast<double>(lcs_length(cand, ref));
      const double precision = lcs / static_cast<double>(cand.size());
      const double recall = lcs / static_cast<double>(ref.size());
      if (precision + recall > 0.0) {
        const double f = (1.0 + kRougeBetaSq) * precision * recall /
                         (recall + kRougeBetaSq * precision);
        best = std::max(best, f);
      }
    }
    sum += best;
  }
  return sum / static_cast<double>(pairs.size());
}

double cider(const std::vector<EvalPair>& pairs) {
  require_pairs(pairs);
  std::set<std::string> distinct_refs;
  for (const EvalPair& pair : pairs) {
    std::string key;
    for (const auto& r : pair.references) {
      for (const auto& tok : metric_tokenize(r)) {
        key += tok;
        key += '\x1f';
      }
      key += '\x1e';
    }
    distinct_refs.insert(key);
  }
  if (pairs.size() < 2 || distinct_refs.size() < 2) {
    throw std::invalid_argument(
        "metrics: CIDEr needs at least 2 distinct reference documents (degenerate IDF)");
  }

  // document frequency over reference sets
  std::vector<Counts> df(kCiderMaxOrder);
  for (const EvalPair& pair : pairs) {
    std::vector<std::set<std::string>> seen(kCiderMaxOrder);
    for (const auto& r : pair.references) {
      const auto toks = metric_tokenize(r);
      for (std::size_t k = 1; k <= kCiderMaxOrder; ++k) {
        for (const auto& [gram, count] : ngram_counts(toks, k)) seen[k - 1].insert(gram);
      }
    }
    for (std::size_t k = 0; k < kCiderMaxOrder; ++k) {
      for (const auto& gram : seen[k]) ++df[k][gram];
    }
  }

  const double log_docs = std::log(static_cast<double>(pairs.size()));
  auto tfidf = [&](const Counts& counts, std::size_t k) {
    std::map<std::string, double> vec;
    for (const auto& [gram, count] : counts) {
      auto it = df[k].find(gram);
      const double doc_freq = it == df[k].end() ? 0.0 : static_cast<double>(it->second);
      const double idf = log_docs - std::log(std::max(1.0, doc_freq));
      vec[gram] = static_cast<double>(count) * idf;
    }
    return vec;
  };
  auto norm = [](const std::map<std::string, double>& vec) {
    double sq = 0.0;
    for (const auto& [gram, v] : vec) sq += v * v;
    return std::sqrt(sq);
  };

  double corpus_sum = 0.0;
  for (const EvalPair& pair : pairs) {
    const auto cand = metric_tokenize(pair.candidate);
    std::vector<std::map<std::string, double>> cand_vec(kCiderMaxOrder);
    std::vector<double> cand_norm(kCiderMaxOrder);
    for (std::size_t k = 0; k < kCiderMaxOrder; ++k) {
      cand_vec[k] = tfidf(ngram_counts(cand, k + 1), k);
      cand_norm[k] = norm(cand_vec[k]);
    }

    std::vector<double> order_sum(kCiderMaxOrder, 0.0);
    for (const auto& ref_text : pair.references) {
      const auto ref = metric_tokenize(ref_text);
      const double delta = static_cast<double>(cand.size()) - static_cast<double>(ref.size());
      const double length_penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
      for (std::size_t k = 0; k < kCiderMaxOrder; ++k) {
        const auto ref_vec = tfidf(ngram_counts(ref, k + 1), k);
        const double ref_norm = norm(ref_vec);
        if (cand_norm[k] == 0.0 || ref_norm == 0.0) continue;
        double dot = 0.0;
        for (const auto& [gram, cv] : cand_vec[k]) {
          auto it = ref_vec.find(gram);
          if (it != ref_vec.end()) dot += std::min(cv, it->second) * it->second;
        }
        order_sum[k] += dot / (cand_norm[k] * ref_norm) * length_penalty;
      }
    }

    double pair_score = 0.0;
    for (std::size_t k = 0; k < kCiderMaxOrder; ++k) {
      pair_score += 10.0 * order_sum[k] / static_cast<double>(pair.references.size());
    }
    corpus_sum += pair_score / static_cast<double>(kCiderMaxOrder);
  }
  return corpus_sum / static_cast<double>(pairs.size());
}

NlpScores score_nlp(const std::vector<EvalPair>& pairs) {
  NlpScores scores;
  scores.bleu_1 = bleu_n(pairs, 1);
  scores.bleu_2 = bleu_n(pairs, 2);
  scores.bleu_3 = bleu_n(pairs, 3);
  scores.bleu_4 = bleu_n(pairs, 4);
  scores.rouge_l = rouge_l(pairs);
  scores.cider = cider(pairs);
  scores.n_pairs = pairs.size();
  return scores;
}

std::vector<EvalPair> load_eval_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("predictions: cannot open '" + path + "'");

  std::vector<EvalPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("predictions '" + path + "' line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    EvalPair pair;
    try {
      pair.id = record.at("id").get<std::string>();
      pair.candidate = record.at("candidate").get<std::string>();
      pair.references = record.at("references").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("predictions '" + path + "' line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace rgen
