#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "kinject/corpus_index.hpp"
#include "kinject/dialog.hpp"
#include "kinject/lm.hpp"
#include "kinject/text_metrics.hpp"

namespace kinject {

using WordSet = std::unordered_set<std::string>;

/// One token per line; blank lines and surrounding whitespace are ignored.
/// Throws ArtifactError when the file cannot be opened.
WordSet read_word_list(const std::filesystem::path& path);

struct KeyPhrase {
  std::string text;  // tokens joined by single spaces
  double score = 0.0;  // lower is better
};

inline constexpr std::size_t kMaxPhraseTokens = 4;

/// YAKE-style key phrases from the history turns and the initial response.
/// Each turn is split into sentences; candidates are 1-4 token windows inside
/// a sentence that neither start nor end with a stopword. Term weights combine
/// frequency, first-occurrence position, context diversity and sentence
/// spread. Returns at most `max_phrases` phrases, best first.
std::vector<KeyPhrase> extract_keyphrases(const DialogHistory& history, const TokenSeq& initial,
                                          const WordSet& stopwords, std::size_t max_phrases);

inline constexpr std::array<std::string_view, 9> kPromptTemplates = {
    "{} is famous for",
    "The popular opinion about {} is",
    "Here is what I know about {}:",
    "My friend says that {} is:",
    "Here is some information about {}:",
    "Here are some reviews about {}:",
    "I think {} is:",
    "I read on the internet about {} and found that",
    "Today I learned about {} that",
};

std::vector<std::string> build_prompts(const KeyPhrase& phrase);

enum class SnippetSource { kParametric, kNonParametric };
std::string_view to_string(SnippetSource source);

inline constexpr std::size_t kMaxSnippetWords = 100;

struct KnowledgeSnippet {
  std::string text;
  SnippetSource source = SnippetSource::kNonParametric;
  std::string origin;  // prompt text or document id
  double raw_score = 0.0;
};

/// Cuts text to at most `max_tokens` tokens, at the last sentence end inside
/// the budget when there is one. The result is re-joined from tokens.
std::string truncate_snippet(std::string_view text, std::size_t max_tokens = kMaxSnippetWords);

/// Text generator used for the parametric source.
class KnowledgeGenerator {
 public:
  virtual ~KnowledgeGenerator() = default;
  /// `n` completions of `prompt` (without the prompt itself). Throws
  /// SourceUnavailable when the generator cannot be reached.
  virtual std::vector<std::string> complete(const std::string& prompt, std::size_t max_tokens,
                                            std::size_t n, double top_p, std::uint64_t seed) = 0;
};

/// Nucleus sampling from the bundled language model. Sample i of a call uses
/// a seed derived from (seed, i).
class LocalGenerator : public KnowledgeGenerator {
 public:
  explicit LocalGenerator(const LanguageModel& lm, double tau = 1.0) : lm_(lm), tau_(tau) {}
  std::vector<std::string> complete(const std::string& prompt, std::size_t max_tokens,
                                    std::size_t n, double top_p, std::uint64_t seed) override;

 private:
  const LanguageModel& lm_;
  double tau_;
};

/// Client for an external generation service speaking JSON over HTTP:
///   POST <path> {"prompt", "max_tokens", "n", "top_p", "seed"}
///   -> {"completions": [string, ...]}
class HttpGenerator : public KnowledgeGenerator {
 public:
  /// `url` like http://host:port/path.
  HttpGenerator(std::string url, double timeout_seconds);
  ~HttpGenerator() override;
  std::vector<std::string> complete(const std::string& prompt, std::size_t max_tokens,
                                    std::size_t n, double top_p, std::uint64_t seed) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ParametricOptions {
  std::size_t per_phrase = 5;
  double top_p = 0.95;
  std::size_t max_tokens = kMaxSnippetWords;
  std::uint64_t seed = 0;
};

struct ParametricResult {
  std::vector<KnowledgeSnippet> snippets;
  bool no_keyphrases = false;
};

/// Generates per_phrase completions for each of the 9 prompts of every phrase,
/// keeps "prompt completion" as the snippet text, and scores it by the scorer's
/// log-likelihood of the snippet followed by the history. Sorted by score
/// descending; ties keep generation order.
ParametricResult parametric_snippets(KnowledgeGenerator& generator, const LanguageModel& scorer,
                                     const DialogHistory& history,
                                     std::span<const KeyPhrase> phrases,
                                     const ParametricOptions& options);

/// log p(snippet <ksep> history) under the scorer.
double parametric_score(const LanguageModel& scorer, const DialogHistory& history,
                        std::string_view snippet);

/// Retrieves with the history text and the initial response as one query.
/// An empty index gives an empty list; a query without tokens throws EmptyQuery.
std::vector<KnowledgeSnippet> nonparametric_snippets(const TfIdfIndex& index,
                                                     const DialogHistory& history,
                                                     const TokenSeq& initial, std::size_t top_n);

struct FilterResult {
  std::vector<KnowledgeSnippet> kept;
  std::size_t dropped = 0;
};

FilterResult filter_snippets(std::vector<KnowledgeSnippet> snippets, const WordSet& blocklist);

/// Non-parametric first, then parametric; later duplicates of a text are dropped.
std::vector<KnowledgeSnippet> merge_snippet_pools(std::vector<KnowledgeSnippet> nonparametric,
                                                  std::vector<KnowledgeSnippet> parametric,
                                                  std::size_t* duplicates = nullptr);

}  // namespace kinject
