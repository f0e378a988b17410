#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kinject {

/// Lowercase word tokens. No token is empty or contains whitespace.
using TokenSeq = std::vector<std::string>;

/// Splits on maximal runs of non-alphanumeric code points (Unicode categories)
/// and lowercases. Apostrophes (' and U+2019) survive only between two word
/// characters, and U+2019 is normalized to '.
TokenSeq tokenize(std::string_view text);

/// Space-joined tokens; tokenize(join(tokenize(s))) == tokenize(s).
std::string join(const TokenSeq& tokens);

/// n-gram -> count. Keys join the n tokens with '\x1f'.
using NgramCounts = std::unordered_map<std::string, std::size_t>;

/// Counts n-grams in each sequence separately and pools them; n-grams never
/// span sequence boundaries.
NgramCounts count_ngrams(std::span<const TokenSeq> seqs, std::size_t n);

/// Unique n-grams / total n-grams, 0 when there are no n-grams.
double distinct_n(const TokenSeq& seq, std::size_t n);
double distinct_n(std::span<const TokenSeq> seqs, std::size_t n);

/// Natural-log Shannon entropy of an n-gram count table.
double ngram_entropy(const NgramCounts& counts);

/// Geometric mean of the 1-, 2- and 3-gram entropies (natural log).
/// Throws InvalidArgument when no trigram exists.
double entr(const TokenSeq& seq);
double entr(std::span<const TokenSeq> seqs);

}  // namespace kinject
