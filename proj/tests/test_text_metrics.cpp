#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "kinject/errors.hpp"
#include "kinject/text_metrics.hpp"
#include "support.hpp"

using namespace kinject;

namespace {

// Entropy of the n-gram distribution computed from an ordered map.
double oracle_entropy(const std::vector<TokenSeq>& seqs, std::size_t n) {
  std::map<std::vector<std::string>, double> counts;
  double total = 0.0;
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      counts[std::vector<std::string>(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i + n))] += 1.0;
      total += 1.0;
    }
  }
  double h = 0.0;
  for (const auto& [_, c] : counts) h -= (c / total) * std::log(c / total);
  return h;
}

TokenSeq random_seq(test::Rng& rng, std::size_t len, std::size_t alphabet) {
  TokenSeq s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(std::string(1, static_cast<char>('a' + rng.index(alphabet))));
  return s;
}

}  // namespace

TEST_SUITE("text-metrics") {

TEST_CASE("tokenize splits punctuation and lowercases") {
  CHECK(tokenize("The cat, the cat.") == TokenSeq{"the", "cat", "the", "cat"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("  ,;. ").empty());
}

TEST_CASE("tokenize keeps inner apostrophes") {
  CHECK(tokenize("Don't stop") == TokenSeq{"don't", "stop"});
  CHECK(tokenize("Don’t") == TokenSeq{"don't"});
  CHECK(tokenize("'quoted' words'") == TokenSeq{"quoted", "words"});
}

TEST_CASE("tokenize uses Unicode categories") {
  CHECK(tokenize("Café MÜNCHEN 42km") == TokenSeq{"café", "münchen", "42km"});
  CHECK(tokenize("a\u2014b") == TokenSeq{"a", "b"});
}

TEST_CASE("tokenize of join of tokenize is tokenize") {
  test::Rng rng(11);
  const std::string alphabet = "ab C,.'é-!  ’x";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const auto len = rng.index(30);
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng.index(alphabet.size())]);
    const auto t = tokenize(s);
    CHECK(tokenize(join(t)) == t);
    for (const auto& tok : t) {
      CHECK_FALSE(tok.empty());
      CHECK(tok.find(' ') == std::string::npos);
    }
  }
}

TEST_CASE("distinct_n examples") {
  CHECK(distinct_n(TokenSeq{"the", "cat", "the", "cat"}, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(distinct_n(TokenSeq{"a"}, 2) == 0.0);
  CHECK(distinct_n(TokenSeq{"a", "b", "c"}, 1) == 1.0);
  CHECK(distinct_n(TokenSeq{}, 1) == 0.0);
  CHECK_THROWS_AS(distinct_n(TokenSeq{"a"}, 0), InvalidArgument);
}

TEST_CASE("distinct_n over several sequences does not count boundary n-grams") {
  const std::vector<TokenSeq> seqs = {{"a", "b"}, {"b", "a"}};
  // bigrams: a-b, b-a (no b-b across the boundary)
  CHECK(distinct_n(seqs, 2) == 1.0);
  CHECK(count_ngrams(seqs, 2).size() == 2);
}

TEST_CASE("duplicating a sequence never increases distinct_n") {
  test::Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_seq(rng, 1 + rng.index(12), 4);
    for (std::size_t n = 1; n <= 3; ++n) {
      const double base = distinct_n(s, n);
      for (std::size_t k = 2; k <= 4; ++k) {
        std::vector<TokenSeq> copies(k, s);
        CHECK(distinct_n(copies, n) <= base + 1e-15);
      }
    }
  }
}

TEST_CASE("entr examples") {
  CHECK(entr(TokenSeq{"a", "a", "a", "a"}) == 0.0);
  const double expected = std::cbrt(std::log(4.0) * std::log(3.0) * std::log(2.0));
  CHECK(entr(TokenSeq{"a", "b", "c", "d"}) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(1.01822).epsilon(1e-5));
  CHECK_THROWS_AS(entr(TokenSeq{"a", "a"}), InvalidArgument);
}

TEST_CASE("entr matches an independent entropy oracle") {
  test::Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenSeq> seqs;
    const auto count = 1 + rng.index(3);
    for (std::size_t i = 0; i < count; ++i) seqs.push_back(random_seq(rng, 3 + rng.index(15), 5));
    const double expected = std::cbrt(oracle_entropy(seqs, 1) * oracle_entropy(seqs, 2) * oracle_entropy(seqs, 3));
    const double got = entr(std::span<const TokenSeq>(seqs));
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("entr is zero exactly when some n-gram distribution is a point mass") {
  test::Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_seq(rng, 3 + rng.index(6), 2);
    const std::vector<TokenSeq> one = {s};
    const bool degenerate = oracle_entropy(one, 1) == 0.0 || oracle_entropy(one, 2) == 0.0 ||
                            oracle_entropy(one, 3) == 0.0;
    CHECK((entr(s) == 0.0) == degenerate);
  }
}

TEST_CASE("ngram entropy uses natural log") {
  NgramCounts c{{"x", 1}, {"y", 1}};
  CHECK(ngram_entropy(c) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

}  // TEST_SUITE
