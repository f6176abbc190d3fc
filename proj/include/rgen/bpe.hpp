#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rgen {

// Reserved token ids, never produced by merge learning.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kUnkId = 3;

// End-of-word marker attached to the last base symbol of every word during
// pre-splitting and stripped again on decode.
inline const std::string kWordEnd = "</w>";

// Ordered merge pairs; rank = position in the list.
struct MergeTable {
  std::vector<std::pair<std::string, std::string>> pairs;
};

struct Vocab {
  std::vector<std::string> tokens;             // id -> token string
  std::unordered_map<std::string, int> ids;    // token string -> id

  int id_of(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? -1 : it->second;
  }
  std::size_t size() const { return tokens.size(); }
};

struct Bpe {
  MergeTable merges;
  Vocab vocab;
};

// Normalization shared by training and encoding: lowercase, whitespace split,
// punctuation and digits isolated as standalone single-symbol words.
std::vector<std::vector<std::string>> pre_split(const std::string& text);

Bpe train_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab_size);

std::vector<int> encode(const std::string& text, const MergeTable& merges, const Vocab& vocab,
                        bool add_specials);
std::string decode(const std::vector<int>& ids, const Vocab& vocab);

void save_vocab(const Bpe& bpe, const std::string& path);
Bpe load_vocab(const std::string& path);

}  // namespace rgen
