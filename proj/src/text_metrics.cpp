#include "kinject/text_metrics.hpp"

#include <cmath>
#include <string>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "kinject/errors.hpp"

namespace kinject {
namespace {

bool is_word_char(UChar32 c) {
  if (c < 0) return false;
  if (u_isalnum(c)) return true;
  // Combining marks stay attached to the letter they decorate.
  return (U_GET_GC_MASK(c) & U_GC_M_MASK) != 0;
}

bool is_apostrophe(UChar32 c) { return c == 0x27 || c == 0x2019; }

void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  U8_APPEND_UNSAFE(buf, len, c);
  out.append(buf, static_cast<std::size_t>(len));
}

}  // namespace

TokenSeq tokenize(std::string_view text) {
  const auto* bytes = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());

  std::vector<UChar32> cps;
  cps.reserve(text.size());
  for (int32_t i = 0; i < length;) {
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    cps.push_back(c);  // invalid sequences arrive as negative values
  }

  TokenSeq tokens;
  std::string current;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const UChar32 c = cps[i];
    if (is_word_char(c)) {
      append_utf8(current, u_tolower(c));
    } else if (is_apostrophe(c) && !current.empty() && i + 1 < cps.size() &&
               is_word_char(cps[i + 1])) {
      current.push_back('\'');
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string join(const TokenSeq& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

NgramCounts count_ngrams(std::span<const TokenSeq> seqs, std::size_t n) {
  if (n == 0) throw InvalidArgument("n-gram order must be >= 1");
  NgramCounts counts;
  for (const auto& seq : seqs) {
    if (seq.size() < n) continue;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
      std::string key = seq[i];
      for (std::size_t j = 1; j < n; ++j) {
        key.push_back('\x1f');
        key += seq[i + j];
      }
      ++counts[key];
    }
  }
  return counts;
}

double distinct_n(std::span<const TokenSeq> seqs, std::size_t n) {
  const auto counts = count_ngrams(seqs, n);
  std::size_t total = 0;
  for (const auto& [_, c] : counts) total += c;
  if (total == 0) return 0.0;
  return static_cast<double>(counts.size()) / static_cast<double>(total);
}

double distinct_n(const TokenSeq& seq, std::size_t n) {
  return distinct_n(std::span<const TokenSeq>(&seq, 1), n);
}

double ngram_entropy(const NgramCounts& counts) {
  double total = 0.0;
  for (const auto& [_, c] : counts) total += static_cast<double>(c);
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  // A point mass gives -1 * log(1) = -0.0; report +0.
  return h <= 0.0 ? 0.0 : h;
}

double entr(std::span<const TokenSeq> seqs) {
  double product = 1.0;
  for (std::size_t n = 1; n <= 3; ++n) {
    const auto counts = count_ngrams(seqs, n);
    if (n == 3 && counts.empty()) {
      throw InvalidArgument("ENTR needs at least 3 tokens in one sequence");
    }
    product *= ngram_entropy(counts);
  }
  return std::cbrt(product);
}

double entr(const TokenSeq& seq) { return entr(std::span<const TokenSeq>(&seq, 1)); }

}  // namespace kinject
