#pragma once

#include <string>
#include <vector>

namespace rgen {

struct EvalPair {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;  // non-empty
};

// Shared metric tokenization: lowercase, punctuation isolated, whitespace
// split. Deliberately independent of the learned BPE vocabulary.
std::vector<std::string> metric_tokenize(const std::string& text);

// corpus-level modified n-gram precision (orders 1..n, geometric mean) with
// brevity penalty
double bleu_n(const std::vector<EvalPair>& pairs, std::size_t n);

// LCS F-measure with beta^2 = 1.2, max over references, mean over corpus
double rouge_l(const std::vector<EvalPair>& pairs);

// CIDEr-D: TF-IDF n-gram cosine (n = 1..4, clipped counts) with a Gaussian
// length penalty (sigma = 6), averaged over references and orders, x10
double cider(const std::vector<EvalPair>& pairs);

struct NlpScores {
  double bleu_1 = 0.0, bleu_2 = 0.0, bleu_3 = 0.0, bleu_4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::size_t n_pairs = 0;
};

NlpScores score_nlp(const std::vector<EvalPair>& pairs);

// JSON-lines records {id, candidate, references[]}
std::vector<EvalPair> load_eval_pairs(const std::string& path);

}  // namespace rgen
