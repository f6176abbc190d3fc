#include "rgen/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rgen {

namespace {

const char* kSpecialTokens[4] = {"<PAD>", "<BOS>", "<EOS>", "<UNK>"};
const std::string kUnkGlyph = "\xEF\xBF\xBD";  // U+FFFD replacement character

bool is_word_char(unsigned char c) { return std::isalpha(c) != 0; }

void add_token(Vocab& vocab, const std::string& token) {
  if (vocab.ids.count(token)) {
    throw std::logic_error("tokenizer: duplicate token '" + token + "'");
  }
  vocab.ids[token] = static_cast<int>(vocab.tokens.size());
  vocab.tokens.push_back(token);
}

// Replace every non-overlapping (left, right) occurrence left to right.
void apply_merge(std::vector<std::string>& symbols, const std::string& left,
                 const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  std::size_t i = 0;
  while (i < symbols.size()) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
    } else {
      out.push_back(std::move(symbols[i]));
      ++i;
    }
  }
  symbols = std::move(out);
}

}  // namespace

std::vector<std::vector<std::string>> pre_split(const std::string& text) {
  std::vector<std::vector<std::string>> words;
  std::vector<std::string> current;

  auto flush = [&]() {
    if (!current.empty()) {
      current.back() += kWordEnd;
      words.push_back(std::move(current));
      current.clear();
    }
  };

  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (is_word_char(c)) {
      current.push_back(std::string(1, static_cast<char>(std::tolower(c))));
    } else {
      // digits and punctuation become standalone single-symbol words
      flush();
      current.push_back(std::string(1, static_cast<char>(c)));
      flush();
    }
  }
  flush();
  return words;
}

Bpe train_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab_size) {
  // distinct pre-split words with frequencies, deterministically ordered
  std::map<std::vector<std::string>, std::size_t> word_freq;
  for (const std::string& text : corpus) {
    for (auto& word : pre_split(text)) ++word_freq[word];
  }
  if (word_freq.empty()) {
    throw std::invalid_argument("tokenizer: empty corpus, nothing to train on");
  }

  // Both marker variants of every corpus character enter the base vocab, so
  // any text over the training alphabet encodes without OOV regardless of
  // which word positions the character was seen in.
  std::set<std::string> base_symbols;
  for (const auto& [word, freq] : word_freq) {
    for (const auto& sym : word) {
      std::string ch = sym;
      if (ch.size() > kWordEnd.size() &&
          ch.compare(ch.size() - kWordEnd.size(), kWordEnd.size(), kWordEnd) == 0) {
        ch.resize(ch.size() - kWordEnd.size());
      }
      base_symbols.insert(ch);
      base_symbols.insert(ch + kWordEnd);
    }
  }
  if (target_vocab_size <= base_symbols.size() + 4) {
    throw std::invalid_argument("tokenizer: target vocab size " +
                                std::to_string(target_vocab_size) + " too small; corpus has " +
                                std::to_string(base_symbols.size()) +
                                " base symbols plus 4 reserved tokens");
  }

  Bpe bpe;
  for (const char* tok : kSpecialTokens) add_token(bpe.vocab, tok);
  for (const auto& sym : base_symbols) add_token(bpe.vocab, sym);

  std::vector<std::pair<std::vector<std::string>, std::size_t>> words(word_freq.begin(),
                                                                      word_freq.end());

  while (bpe.vocab.size() < target_vocab_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
    for (const auto& [word, freq] : words) {
      for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        pair_freq[{word[i], word[i + 1]}] += freq;
      }
    }

    // highest frequency, ties broken lexicographically on (left, right);
    // std::map iteration order makes the first max the lexicographic winner
    std::pair<std::string, std::string> best;
    std::size_t best_freq = 0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq > best_freq) {
        best = pair;
        best_freq = freq;
      }
    }
    if (best_freq < 2) break;  // no pair worth merging; halt early

    bpe.merges.pairs.push_back(best);
    add_token(bpe.vocab, best.first + best.second);
    for (auto& [word, freq] : words) apply_merge(word, best.first, best.second);
  }
  return bpe;
}

std::vector<int> encode(const std::string& text, const MergeTable& merges, const Vocab& vocab,
                        bool add_specials) {
  std::map<std::pair<std::string, std::string>, std::size_t> rank;
  for (std::size_t r = 0; r < merges.pairs.size(); ++r) rank[merges.pairs[r]] = r;

  std::vector<int> out;
  if (add_specials) out.push_back(kBosId);

  for (auto& word : pre_split(text)) {
    // repeatedly apply the lowest-rank merge present anywhere in the word
    while (word.size() > 1) {
      std::size_t best_rank = merges.pairs.size();
      for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        auto it = rank.find({word[i], word[i + 1]});
        if (it != rank.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == merges.pairs.size()) break;
      apply_merge(word, merges.pairs[best_rank].first, merges.pairs[best_rank].second);
    }
    for (const auto& sym : word) {
      const int id = vocab.id_of(sym);
      out.push_back(id < 0 ? kUnkId : id);
    }
  }

  if (add_specials) out.push_back(kEosId);
  return out;
}

std::string decode(const std::vector<int>& ids, const Vocab& vocab) {
  std::string text;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw std::out_of_range("tokenizer: id " + std::to_string(id) +
                              " outside vocab of size " + std::to_string(vocab.size()));
    }
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (id == kUnkId) {
      text += kUnkGlyph;
      continue;
    }
    text += vocab.tokens[static_cast<std::size_t>(id)];
  }
  // restore word boundaries
  std::string result;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text.compare(pos, kWordEnd.size(), kWordEnd) == 0) {
      result += ' ';
      pos += kWordEnd.size();
    } else {
      result += text[pos++];
    }
  }
  while (!result.empty() && result.back() == ' ') result.pop_back();
  return result;
}

void save_vocab(const Bpe& bpe, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocab file: cannot open '" + path + "' for writing");
  out << "BPE-V1 " << bpe.vocab.size() << "\n";
  for (const auto& [left, right] : bpe.merges.pairs) out << left << " " << right << "\n";
  out << "#VOCAB\n";
  for (std::size_t id = 0; id < bpe.vocab.size(); ++id) {
    out << bpe.vocab.tokens[id] << "\t" << id << "\n";
  }
  if (!out) throw std::runtime_error("vocab file: write to '" + path + "' failed");
}

Bpe load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("vocab file: cannot open '" + path + "'");

  auto fail = [&](std::size_t line_no, const std::string& why) -> std::runtime_error {
    return std::runtime_error("vocab file '" + path + "': parse error at line " +
                              std::to_string(line_no) + ": " + why);
  };

  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw fail(1, "missing header");
  ++line_no;
  std::istringstream header(line);
  std::string magic;
  std::size_t declared_size = 0;
  if (!(header >> magic >> declared_size) || magic != "BPE-V1") {
    throw fail(line_no, "expected 'BPE-V1 <vocab_size>'");
  }

  Bpe bpe;
  bool in_vocab = false;
  std::size_t listed = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!in_vocab) {
      if (line == "#VOCAB") {
        in_vocab = true;
        continue;
      }
      const std::size_t space = line.find(' ');
      if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
          line.find(' ', space + 1) != std::string::npos) {
        throw fail(line_no, "expected merge pair 'left right'");
      }
      bpe.merges.pairs.emplace_back(line.substr(0, space), line.substr(space + 1));
    } else {
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos || tab == 0) throw fail(line_no, "expected 'token<TAB>id'");
      const std::string token = line.substr(0, tab);
      std::size_t id = 0;
      try {
        id = std::stoul(line.substr(tab + 1));
      } catch (const std::exception&) {
        throw fail(line_no, "bad id field");
      }
      if (id != listed) throw fail(line_no, "ids must be consecutive from 0");
      if (bpe.vocab.ids.count(token)) throw fail(line_no, "duplicate token '" + token + "'");
      bpe.vocab.ids[token] = static_cast<int>(id);
      bpe.vocab.tokens.push_back(token);
      ++listed;
    }
  }
  if (!in_vocab) throw fail(line_no + 1, "unexpected end of file before #VOCAB sentinel");
  if (listed != declared_size) {
    throw fail(line_no + 1, "header declares " + std::to_string(declared_size) +
                                " tokens but " + std::to_string(listed) + " listed");
  }
  for (int id = 0; id < 4; ++id) {
    if (static_cast<std::size_t>(id) >= bpe.vocab.size() ||
        bpe.vocab.tokens[static_cast<std::size_t>(id)] != kSpecialTokens[id]) {
      throw fail(line_no + 1, std::string("reserved id ") + std::to_string(id) + " must be " +
                                  kSpecialTokens[id]);
    }
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& pair : bpe.merges.pairs) {
    if (!seen.insert(pair).second) {
      throw fail(line_no + 1, "duplicate merge pair '" + pair.first + " " + pair.second + "'");
    }
  }
  return bpe;
}

}  // namespace rgen
