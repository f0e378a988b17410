#include "kinject/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include "kinject/errors.hpp"
#include "seeding.hpp"

namespace kinject {
namespace {

std::vector<TokenSeq> sentences_of(std::string_view text) {
  std::vector<TokenSeq> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '.' || text[i] == '!' || text[i] == '?') {
      auto toks = tokenize(text.substr(start, i - start));
      if (!toks.empty()) out.push_back(std::move(toks));
      start = i + 1;
    }
  }
  return out;
}

struct TermStats {
  std::size_t tf = 0;
  std::vector<std::size_t> sentences;  // sentence index per occurrence
  std::map<std::string, std::size_t> left, right;
  std::size_t left_total = 0, right_total = 0;
};

double median(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? static_cast<double>(v[n / 2])
               : 0.5 * static_cast<double>(v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

WordSet read_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open word list: " + path.string());
  WordSet words;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    words.insert(line.substr(b, e - b + 1));
  }
  return words;
}

std::vector<KeyPhrase> extract_keyphrases(const DialogHistory& history, const TokenSeq& initial,
                                          const WordSet& stopwords, std::size_t max_phrases) {
  std::vector<TokenSeq> sentences;
  for (const auto& turn : history.turns) {
    for (auto& s : sentences_of(turn.text)) sentences.push_back(std::move(s));
  }
  if (!initial.empty()) sentences.push_back(initial);
  if (sentences.empty() || max_phrases == 0) return {};

  auto is_stop = [&](const std::string& w) { return stopwords.count(w) > 0; };

  std::unordered_map<std::string, TermStats> terms;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const auto& sent = sentences[s];
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (is_stop(sent[i])) continue;
      auto& st = terms[sent[i]];
      ++st.tf;
      st.sentences.push_back(s);
      if (i > 0) {
        ++st.left[sent[i - 1]];
        ++st.left_total;
      }
      if (i + 1 < sent.size()) {
        ++st.right[sent[i + 1]];
        ++st.right_total;
      }
    }
  }
  if (terms.empty()) return {};

  double mean_tf = 0.0, max_tf = 0.0;
  for (const auto& [_, st] : terms) {
    mean_tf += static_cast<double>(st.tf);
    max_tf = std::max(max_tf, static_cast<double>(st.tf));
  }
  mean_tf /= static_cast<double>(terms.size());
  double var_tf = 0.0;
  for (const auto& [_, st] : terms) var_tf += std::pow(static_cast<double>(st.tf) - mean_tf, 2);
  const double std_tf = std::sqrt(var_tf / static_cast<double>(terms.size()));

  std::unordered_map<std::string, double> weight;
  for (const auto& [word, st] : terms) {
    const double tf = static_cast<double>(st.tf);
    const double t_pos = std::log(std::log(3.0 + median(st.sentences)));
    const double t_freq = tf / (mean_tf + std_tf);
    const double wl = st.left_total ? static_cast<double>(st.left.size()) / static_cast<double>(st.left_total) : 0.0;
    const double wr = st.right_total ? static_cast<double>(st.right.size()) / static_cast<double>(st.right_total) : 0.0;
    const double t_rel = 1.0 + (wl + wr) * tf / max_tf;
    auto spread = st.sentences;
    spread.erase(std::unique(spread.begin(), spread.end()), spread.end());
    const double t_sent = static_cast<double>(spread.size()) / static_cast<double>(sentences.size());
    weight[word] = t_rel * t_pos / (t_freq / t_rel + t_sent / t_rel);
  }

  // Candidate n-grams with their occurrence counts, in first-seen order.
  std::vector<TokenSeq> order;
  std::unordered_map<std::string, std::size_t> count;
  for (const auto& sent : sentences) {
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (is_stop(sent[i])) continue;
      for (std::size_t n = 1; n <= kMaxPhraseTokens && i + n <= sent.size(); ++n) {
        if (is_stop(sent[i + n - 1])) continue;
        TokenSeq gram(sent.begin() + static_cast<std::ptrdiff_t>(i),
                      sent.begin() + static_cast<std::ptrdiff_t>(i + n));
        if (count[join(gram)]++ == 0) order.push_back(std::move(gram));
      }
    }
  }

  std::vector<KeyPhrase> phrases;
  phrases.reserve(order.size());
  for (const auto& gram : order) {
    double prod = 1.0, sum = 0.0;
    for (const auto& w : gram) {
      if (is_stop(w)) continue;
      prod *= weight.at(w);
      sum += weight.at(w);
    }
    const auto text = join(gram);
    phrases.push_back({text, prod / (static_cast<double>(count.at(text)) * (1.0 + sum))});
  }
  std::stable_sort(phrases.begin(), phrases.end(), [](const KeyPhrase& a, const KeyPhrase& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.text < b.text;
  });
  if (phrases.size() > max_phrases) phrases.resize(max_phrases);
  return phrases;
}

std::vector<std::string> build_prompts(const KeyPhrase& phrase) {
  std::vector<std::string> prompts;
  prompts.reserve(kPromptTemplates.size());
  for (auto tmpl : kPromptTemplates) {
    const auto at = tmpl.find("{}");
    std::string p(tmpl.substr(0, at));
    p += phrase.text;
    p += tmpl.substr(at + 2);
    prompts.push_back(std::move(p));
  }
  return prompts;
}

std::string_view to_string(SnippetSource source) {
  return source == SnippetSource::kParametric ? "parametric" : "nonparametric";
}

std::string truncate_snippet(std::string_view text, std::size_t max_tokens) {
  std::vector<TokenSeq> sents = sentences_of(text);
  TokenSeq kept;
  for (const auto& s : sents) {
    if (kept.size() + s.size() > max_tokens) {
      if (kept.empty()) kept.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(max_tokens));
      break;
    }
    kept.insert(kept.end(), s.begin(), s.end());
  }
  return join(kept);
}

std::vector<std::string> LocalGenerator::complete(const std::string& prompt, std::size_t max_tokens,
                                                  std::size_t n, double top_p, std::uint64_t seed) {
  const auto context = lm_.vocab.encode_text(prompt);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ids =
        sample_nucleus(lm_.params, context, top_p, max_tokens, derive_seed(seed, {i}), tau_);
    out.push_back(join(render_response(lm_.vocab, ids)));
  }
  return out;
}

double parametric_score(const LanguageModel& scorer, const DialogHistory& history,
                        std::string_view snippet) {
  auto seq = encode_knowledge_prefix(scorer.vocab, tokenize(snippet));
  const auto hist = encode_history(scorer.vocab, history);
  seq.insert(seq.end(), hist.begin(), hist.end());
  return log_prob(scorer.params, seq, {});
}

ParametricResult parametric_snippets(KnowledgeGenerator& generator, const LanguageModel& scorer,
                                     const DialogHistory& history,
                                     std::span<const KeyPhrase> phrases,
                                     const ParametricOptions& options) {
  if (options.per_phrase == 0) throw InvalidArgument("per_phrase must be >= 1");
  ParametricResult result;
  result.no_keyphrases = phrases.empty();
  for (std::size_t p = 0; p < phrases.size(); ++p) {
    const auto prompts = build_prompts(phrases[p]);
    for (std::size_t q = 0; q < prompts.size(); ++q) {
      const auto completions = generator.complete(prompts[q], options.max_tokens, options.per_phrase,
                                                  options.top_p, derive_seed(options.seed, {p, q}));
      for (const auto& c : completions) {
        auto text = truncate_snippet(prompts[q] + " " + c, options.max_tokens);
        if (text.empty()) continue;
        const double score = parametric_score(scorer, history, text);
        result.snippets.push_back({std::move(text), SnippetSource::kParametric, prompts[q], score});
      }
    }
  }
  std::stable_sort(result.snippets.begin(), result.snippets.end(),
                   [](const KnowledgeSnippet& a, const KnowledgeSnippet& b) {
                     return a.raw_score > b.raw_score;
                   });
  return result;
}

std::vector<KnowledgeSnippet> nonparametric_snippets(const TfIdfIndex& index,
                                                     const DialogHistory& history,
                                                     const TokenSeq& initial, std::size_t top_n) {
  std::string query = history.joined_text();
  if (!initial.empty()) query += " " + join(initial);
  std::vector<KnowledgeSnippet> out;
  if (index.doc_count() == 0) return out;
  for (auto& hit : index.retrieve(query, top_n)) {
    out.push_back({truncate_snippet(hit.document.text), SnippetSource::kNonParametric,
                   hit.document.id, hit.score});
  }
  return out;
}

FilterResult filter_snippets(std::vector<KnowledgeSnippet> snippets, const WordSet& blocklist) {
  FilterResult result;
  for (auto& s : snippets) {
    const auto toks = tokenize(s.text);
    const bool blocked = std::any_of(toks.begin(), toks.end(),
                                     [&](const std::string& t) { return blocklist.count(t) > 0; });
    if (blocked) {
      ++result.dropped;
    } else {
      result.kept.push_back(std::move(s));
    }
  }
  return result;
}

std::vector<KnowledgeSnippet> merge_snippet_pools(std::vector<KnowledgeSnippet> nonparametric,
                                                  std::vector<KnowledgeSnippet> parametric,
                                                  std::size_t* duplicates) {
  std::vector<KnowledgeSnippet> out;
  std::unordered_set<std::string> seen;
  std::size_t dups = 0;
  auto take = [&](std::vector<KnowledgeSnippet>& pool) {
    for (auto& s : pool) {
      if (seen.insert(join(tokenize(s.text))).second) {
        out.push_back(std::move(s));
      } else {
        ++dups;
      }
    }
  };
  take(nonparametric);
  take(parametric);
  if (duplicates) *duplicates = dups;
  return out;
}

}  // namespace kinject
