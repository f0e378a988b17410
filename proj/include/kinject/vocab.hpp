#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kinject/text_metrics.hpp"

namespace kinject {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

/// Ids 0..6 are reserved; corpus words start at kFirstWordId.
namespace token {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kSpeakerUser = 4;
inline constexpr TokenId kSpeakerSystem = 5;
inline constexpr TokenId kKnowledgeSep = 6;
inline constexpr TokenId kFirstWordId = 7;
}  // namespace token

class Vocab {
 public:
  /// Reserved entries only.
  Vocab();

  /// Reserved entries followed by every distinct word, most frequent first
  /// (ties alphabetical).
  static Vocab build(std::span<const TokenSeq> corpus, std::size_t min_count = 1);
  /// One token per line, line number = id. The reserved names must come first.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  /// kUnk for unknown words.
  TokenId id(std::string_view word) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view word) const;

  TokenIds encode(const TokenSeq& words) const;
  TokenIds encode_text(std::string_view text) const { return encode(tokenize(text)); }
  /// Drops reserved ids.
  TokenSeq decode(std::span<const TokenId> ids) const;

  static bool is_reserved(TokenId id) noexcept { return id >= 0 && id < token::kFirstWordId; }

 private:
  void add(std::string word);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace kinject
