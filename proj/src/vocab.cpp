#include "kinject/vocab.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>

#include "kinject/errors.hpp"

namespace kinject {
namespace {

constexpr std::array<std::string_view, token::kFirstWordId> kReservedNames = {
    "<pad>", "<bos>", "<eos>", "<unk>", "<user>", "<system>", "<ksep>"};

}  // namespace

Vocab::Vocab() {
  for (auto name : kReservedNames) add(std::string(name));
}

void Vocab::add(std::string word) {
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!ids_.emplace(word, id).second) throw InvalidArgument("duplicate vocabulary entry: " + word);
  tokens_.push_back(std::move(word));
}

Vocab Vocab::build(std::span<const TokenSeq> corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& seq : corpus) {
    for (const auto& w : seq) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (auto& [word, count] : entries) {
    if (count >= min_count && !vocab.contains(word)) vocab.add(word);
  }
  return vocab;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open vocab file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < kReservedNames.size()) {
    throw ArtifactError(path.string() + ": vocab shorter than the reserved block");
  }
  for (std::size_t i = 0; i < kReservedNames.size(); ++i) {
    if (lines[i] != kReservedNames[i]) {
      throw ArtifactError(path.string() + ": line " + std::to_string(i + 1) + " should be " +
                          std::string(kReservedNames[i]));
    }
  }
  Vocab vocab;
  try {
    for (std::size_t i = kReservedNames.size(); i < lines.size(); ++i) vocab.add(lines[i]);
  } catch (const InvalidArgument& e) {
    throw ArtifactError(path.string() + ": " + e.what());
  }
  return vocab;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write vocab file: " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocab::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? token::kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InvalidToken("token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view word) const { return ids_.contains(std::string(word)); }

TokenIds Vocab::encode(const TokenSeq& words) const {
  TokenIds ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

TokenSeq Vocab::decode(std::span<const TokenId> ids) const {
  TokenSeq words;
  for (auto id : ids) {
    if (!is_reserved(id)) words.push_back(token(id));
  }
  return words;
}

}  // namespace kinject
