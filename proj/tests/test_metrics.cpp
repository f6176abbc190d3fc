#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "metric_oracles.hpp"
#include "rgen/metrics.hpp"
#include "rgen/rand.hpp"

using namespace rgen;

namespace {

std::vector<EvalPair> hand_cases() {
  return {
      {"p0", "the heart is mildly enlarged .", {"the heart is mildly enlarged ."}},
      {"p1", "the the the the", {"the cat"}},
      {"p2", "the cat", {"the cat is on the mat"}},
      {"p3", "a b c d", {"a c d e"}},
      {"p4", "no acute process", {"there is no acute process", "lungs are clear"}},
      {"p5", "small left effusion is seen", {"a small left pleural effusion is seen"}},
      {"p6", "lungs are grossly clear", {"the lungs are clear", "clear lungs bilaterally"}},
      {"p7", "patchy opacity in the right base", {"patchy opacity at the right lung base"}},
      {"p8", "stable cardiomegaly without edema", {"cardiomegaly is stable . no edema ."}},
      {"p9", "x y z", {"entirely different words here"}},
      {"p10", "one two three four five", {"one two three four five six seven"}},
      {"p11", "alpha beta gamma . delta", {"alpha beta . gamma delta", "alpha beta gamma delta"}},
  };
}

std::vector<std::string> word_pool() {
  return {"the",  "heart", "lungs", "clear",  "effusion", "small", "right",
          "left", "base",  "is",    "seen",   "stable",   "acute", "process",
          "no",   ".",     "mild",  "opacity"};
}

std::vector<EvalPair> random_pairs(Rng& rng, std::size_t count) {
  const auto pool = word_pool();
  auto sentence = [&]() {
    std::string text;
    const std::size_t len = 2 + rng.bounded(8);
    for (std::size_t i = 0; i < len; ++i) {
      if (i) text += ' ';
      text += pool[rng.bounded(pool.size())];
    }
    return text;
  };
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < count; ++i) {
    EvalPair pair;
    pair.id = "r" + std::to_string(i);
    pair.candidate = sentence();
    const std::size_t refs = 1 + rng.bounded(2);
    for (std::size_t r = 0; r < refs; ++r) pair.references.push_back(sentence());
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace

TEST_CASE("metric tokenization lowercases, isolates punctuation and splits on space") {
  const auto toks = metric_tokenize("The heart, is Enlarged.");
  CHECK(toks == std::vector<std::string>{"the", "heart", ",", "is", "enlarged", "."});
}

TEST_CASE("a candidate equal to its single reference scores 1 for every BLEU order") {
  const std::vector<EvalPair> pairs = {
      {"a", "the heart is mildly enlarged today", {"the heart is mildly enlarged today"}}};
  for (std::size_t n = 1; n <= 4; ++n) CHECK(bleu_n(pairs, n) == doctest::Approx(1.0));
}

TEST_CASE("clipped counts cap repeated candidate tokens") {
  // "the the the the" vs "the cat": one clipped match of four unigrams
  const std::vector<EvalPair> pairs = {{"a", "the the the the", {"the cat"}}};
  // candidate longer than reference, so no brevity penalty: BLEU-1 = 1/4
  CHECK(bleu_n(pairs, 1) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("the brevity penalty is exp(1 - r/c) for short candidates") {
  // c = 2, r = 4, perfect unigram precision -> BLEU-1 = e^-1
  const std::vector<EvalPair> pairs = {{"a", "the cat", {"the cat is on mat"}}};
  // reference has 5 tokens; craft r = 4 exactly
  const std::vector<EvalPair> exact = {{"a", "the cat", {"the cat sat down"}}};
  CHECK(bleu_n(exact, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  (void)pairs;
}

TEST_CASE("bleu rejects bad input") {
  CHECK_THROWS_AS(bleu_n({}, 1), std::invalid_argument);
  CHECK_THROWS_AS(bleu_n({{"a", "x", {}}}, 1), std::invalid_argument);
  CHECK_THROWS_AS(bleu_n({{"a", "x", {"x"}}}, 0), std::invalid_argument);
}

TEST_CASE("identical sentences give ROUGE-L of 1") {
  const std::vector<EvalPair> pairs = {{"a", "lungs are clear today", {"lungs are clear today"}}};
  CHECK(rouge_l(pairs) == doctest::Approx(1.0));
}

TEST_CASE("rouge matches the LCS dynamic-programming oracle on a b c d") {
  const std::vector<EvalPair> pairs = {{"a", "a b c d", {"a c d e"}}};
  // LCS = 3, P = R = 3/4, so F equals 3/4 for any beta
  CHECK(rouge_l(pairs) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(rouge_l(pairs) == doctest::Approx(oracle::rouge_oracle(pairs)).epsilon(1e-12));
}

TEST_CASE("disjoint token sets give ROUGE-L of 0") {
  const std::vector<EvalPair> pairs = {{"a", "x y z", {"p q r"}}};
  CHECK(rouge_l(pairs) == doctest::Approx(0.0));
}

TEST_CASE("echoing every distinct reference maximizes CIDEr at 10") {
  const std::vector<EvalPair> pairs = {
      {"a", "the heart is big today", {"the heart is big today"}},
      {"b", "lungs are fully clear now", {"lungs are fully clear now"}},
      {"c", "small effusion on the left", {"small effusion on the left"}},
  };
  CHECK(cider(pairs) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("an n-gram present in every reference document has zero IDF") {
  const std::vector<EvalPair> pairs = {
      {"a", "common", {"common alpha beta"}},
      {"b", "common", {"common gamma delta"}},
  };
  // the lone candidate token appears in every document: idf 0, vector 0
  CHECK(cider(pairs) == doctest::Approx(0.0));
}

TEST_CASE("cider matches the brute-force oracle on a 3-document corpus") {
  const std::vector<EvalPair> pairs = {
      {"a", "the heart is enlarged", {"the heart is very enlarged", "cardiomegaly is seen"}},
      {"b", "lungs are clear", {"the lungs are clear"}},
      {"c", "there is a small effusion", {"small pleural effusion", "effusion on the left"}},
  };
  CHECK(std::abs(cider(pairs) - oracle::cider_oracle(pairs)) <= 1e-9);
}

TEST_CASE("cider requires at least two distinct reference documents") {
  CHECK_THROWS_AS(cider({{"a", "x", {"just one doc"}}}), std::invalid_argument);
  const std::vector<EvalPair> twins = {{"a", "x", {"same words"}}, {"b", "y", {"same words"}}};
  CHECK_THROWS_AS(cider(twins), std::invalid_argument);
}

TEST_CASE("all three metrics agree with their oracles on the hand-constructed cases") {
  const auto pairs = hand_cases();
  REQUIRE(pairs.size() >= 10);
  for (std::size_t n = 1; n <= 4; ++n) {
    CHECK(std::abs(bleu_n(pairs, n) - oracle::bleu_oracle(pairs, n)) <= 1e-9);
  }
  CHECK(std::abs(rouge_l(pairs) - oracle::rouge_oracle(pairs)) <= 1e-9);
  CHECK(std::abs(cider(pairs) - oracle::cider_oracle(pairs)) <= 1e-9);
}

TEST_CASE("metrics agree with the oracles on random corpora") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto pairs = random_pairs(rng, 6);
    for (std::size_t n = 1; n <= 4; ++n) {
      CHECK(std::abs(bleu_n(pairs, n) - oracle::bleu_oracle(pairs, n)) <= 1e-9);
    }
    CHECK(std::abs(rouge_l(pairs) - oracle::rouge_oracle(pairs)) <= 1e-9);
    CHECK(std::abs(cider(pairs) - oracle::cider_oracle(pairs)) <= 1e-9);
  }
}

TEST_CASE("scores are permutation-invariant over the corpus") {
  Rng rng(23);
  auto pairs = random_pairs(rng, 8);
  const double b = bleu_n(pairs, 4);
  const double r = rouge_l(pairs);
  const double c = cider(pairs);

  rng.shuffle(pairs);
  CHECK(bleu_n(pairs, 4) == doctest::Approx(b).epsilon(1e-12));
  CHECK(rouge_l(pairs) == doctest::Approx(r).epsilon(1e-12));
  CHECK(cider(pairs) == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("scores stay within their documented ranges") {
  Rng rng(27);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pairs = random_pairs(rng, 5);
    for (std::size_t n = 1; n <= 4; ++n) {
      const double b = bleu_n(pairs, n);
      CHECK(b >= 0.0);
      CHECK(b <= 1.0);
    }
    const double r = rouge_l(pairs);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    CHECK(cider(pairs) >= 0.0);
  }
}
