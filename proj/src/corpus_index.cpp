#include "kinject/corpus_index.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

#include "binary_io.hpp"
#include "kinject/errors.hpp"
#include "kinject/text_metrics.hpp"

namespace kinject {
namespace {

constexpr char kIndexMagic[5] = "KTFI";

// Splits on ., ! or ? followed by whitespace or end of text.
std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    current.push_back(text[i]);
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

// Groups sentences into chunks of at most kMaxSnippetTokens tokens; a single
// overlong sentence is cut into token windows.
std::vector<std::string> split_long_record(const std::string& text) {
  std::vector<std::string> chunks;
  TokenSeq pending;
  auto flush = [&] {
    if (!pending.empty()) chunks.push_back(join(pending));
    pending.clear();
  };
  for (const auto& sentence : split_sentences(text)) {
    auto toks = tokenize(sentence);
    if (toks.empty()) continue;
    if (toks.size() > kMaxSnippetTokens) {
      flush();
      for (std::size_t i = 0; i < toks.size(); i += kMaxSnippetTokens) {
        const auto end = std::min(toks.size(), i + kMaxSnippetTokens);
        chunks.push_back(join(TokenSeq(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                       toks.begin() + static_cast<std::ptrdiff_t>(end))));
      }
      continue;
    }
    if (pending.size() + toks.size() > kMaxSnippetTokens) flush();
    pending.insert(pending.end(), toks.begin(), toks.end());
  }
  flush();
  return chunks;
}

}  // namespace

TfIdfIndex TfIdfIndex::ingest(const std::vector<Document>& documents, IngestReport* report) {
  IngestReport local;
  TfIdfIndex index;
  std::unordered_set<std::string> seen;
  std::vector<std::map<TermId, std::uint32_t>> term_freqs;

  auto add = [&](Document doc, const TokenSeq& tokens) {
    std::map<TermId, std::uint32_t> tf;
    for (const auto& tok : tokens) {
      auto [it, inserted] =
          index.vocabulary_.try_emplace(tok, static_cast<TermId>(index.terms_.size()));
      if (inserted) {
        index.terms_.push_back(tok);
        index.df_.push_back(0);
      }
      ++tf[it->second];
    }
    for (const auto& [term, _] : tf) ++index.df_[term];
    term_freqs.push_back(std::move(tf));
    index.documents_.push_back(std::move(doc));
  };

  for (const auto& doc : documents) {
    ++local.records;
    if (!seen.insert(doc.id).second) throw DuplicateDocument(doc.id);
    auto tokens = tokenize(doc.text);
    if (tokens.empty()) {
      ++local.skipped_empty;
      continue;
    }
    if (tokens.size() <= kMaxSnippetTokens) {
      add(doc, tokens);
      continue;
    }
    ++local.split_records;
    const auto chunks = split_long_record(doc.text);
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      Document part{doc.id + "#" + std::to_string(k + 1), chunks[k], doc.domain_tag};
      if (!seen.insert(part.id).second) throw DuplicateDocument(part.id);
      add(std::move(part), tokenize(chunks[k]));
    }
  }

  const auto n = static_cast<double>(index.documents_.size());
  index.idf_.resize(index.terms_.size());
  for (std::size_t t = 0; t < index.terms_.size(); ++t) {
    index.idf_[t] = std::log((1.0 + n) / (1.0 + static_cast<double>(index.df_[t]))) + 1.0;
  }

  index.vectors_.reserve(term_freqs.size());
  for (const auto& tf : term_freqs) {
    SparseVector vec;
    double norm2 = 0.0;
    for (const auto& [term, count] : tf) {
      const double w = static_cast<double>(count) * index.idf_[term];
      vec.emplace_back(term, w);
      norm2 += w * w;
    }
    const double norm = std::sqrt(norm2);
    for (auto& [_, w] : vec) w /= norm;
    index.vectors_.push_back(std::move(vec));
  }
  index.build_postings();
  if (report) *report = local;
  return index;
}

void TfIdfIndex::build_postings() {
  postings_.assign(terms_.size(), {});
  for (std::size_t d = 0; d < vectors_.size(); ++d) {
    for (const auto& [term, w] : vectors_[d]) {
      postings_[term].emplace_back(static_cast<std::uint32_t>(d), w);
    }
  }
}

std::optional<TfIdfIndex::TermId> TfIdfIndex::term_id(std::string_view token) const {
  auto it = vocabulary_.find(std::string(token));
  if (it == vocabulary_.end()) return std::nullopt;
  return it->second;
}

TfIdfIndex::SparseVector TfIdfIndex::query_vector(std::string_view query) const {
  const auto tokens = tokenize(query);
  if (tokens.empty()) throw EmptyQuery("query has no tokens");
  std::map<TermId, std::uint32_t> tf;
  for (const auto& tok : tokens) {
    if (auto id = term_id(tok)) ++tf[*id];
  }
  SparseVector vec;
  double norm2 = 0.0;
  for (const auto& [term, count] : tf) {
    const double w = static_cast<double>(count) * idf_[term];
    vec.emplace_back(term, w);
    norm2 += w * w;
  }
  if (norm2 > 0.0) {
    const double norm = std::sqrt(norm2);
    for (auto& [_, w] : vec) w /= norm;
  }
  return vec;
}

std::vector<double> TfIdfIndex::score_all(std::string_view query) const {
  const auto q = query_vector(query);
  std::vector<double> scores(documents_.size(), 0.0);
  for (const auto& [term, qw] : q) {
    for (const auto& [doc, dw] : postings_[term]) scores[doc] += qw * dw;
  }
  for (auto& s : scores) s = std::clamp(s, 0.0, 1.0);
  return scores;
}

std::vector<RetrievalHit> TfIdfIndex::retrieve(std::string_view query, std::size_t top_n) const {
  if (top_n == 0) throw InvalidArgument("top_n must be >= 1");
  const auto scores = score_all(query);
  std::vector<std::uint32_t> hits;
  for (std::uint32_t d = 0; d < scores.size(); ++d) {
    if (scores[d] > 0.0) hits.push_back(d);
  }
  // Scores equal up to rounding count as tied, so the id order decides.
  const auto grid = [](double s) { return std::round(s * kScoreGrid); };
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (grid(scores[a]) != grid(scores[b])) return grid(scores[a]) > grid(scores[b]);
    return documents_[a].id < documents_[b].id;
  };
  const auto keep = std::min(top_n, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    better);
  std::vector<RetrievalHit> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back({documents_[hits[i]], scores[hits[i]]});
  return out;
}

void TfIdfIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write index file: " + path.string());
  io::write_header(out, kIndexMagic, kFormatVersion);
  io::write_string(out, std::string(kWeightingScheme));
  io::write_pod<std::uint64_t>(out, documents_.size());
  for (const auto& doc : documents_) {
    io::write_string(out, doc.id);
    io::write_pod<std::uint8_t>(out, doc.domain_tag.has_value() ? 1 : 0);
    io::write_string(out, doc.domain_tag.value_or(""));
    io::write_string(out, doc.text);
  }
  io::write_pod<std::uint64_t>(out, terms_.size());
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    io::write_string(out, terms_[t]);
    io::write_pod(out, df_[t]);
    io::write_pod(out, idf_[t]);
  }
  for (const auto& vec : vectors_) {
    io::write_pod<std::uint64_t>(out, vec.size());
    for (const auto& [term, w] : vec) {
      io::write_pod(out, term);
      io::write_pod(out, w);
    }
  }
  if (!out) throw ArtifactError("failed writing index file: " + path.string());
}

TfIdfIndex TfIdfIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open index file: " + path.string());
  io::check_header(in, kIndexMagic, kFormatVersion, path.string());
  const auto scheme = io::read_string(in, "weighting scheme");
  if (scheme != kWeightingScheme) {
    throw ArtifactError(path.string() + ": unsupported weighting scheme " + scheme);
  }
  TfIdfIndex index;
  const auto ndocs = io::read_pod<std::uint64_t>(in, "document count");
  index.documents_.reserve(ndocs);
  for (std::uint64_t i = 0; i < ndocs; ++i) {
    Document doc;
    doc.id = io::read_string(in, "document id");
    const bool has_tag = io::read_pod<std::uint8_t>(in, "domain flag") != 0;
    auto tag = io::read_string(in, "domain tag");
    if (has_tag) doc.domain_tag = std::move(tag);
    doc.text = io::read_string(in, "document text");
    index.documents_.push_back(std::move(doc));
  }
  const auto nterms = io::read_pod<std::uint64_t>(in, "term count");
  for (std::uint64_t t = 0; t < nterms; ++t) {
    auto term = io::read_string(in, "term");
    index.vocabulary_.emplace(term, static_cast<TermId>(t));
    index.terms_.push_back(std::move(term));
    index.df_.push_back(io::read_pod<std::uint32_t>(in, "df"));
    index.idf_.push_back(io::read_pod<double>(in, "idf"));
  }
  index.vectors_.resize(ndocs);
  for (auto& vec : index.vectors_) {
    const auto n = io::read_pod<std::uint64_t>(in, "vector length");
    vec.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      const auto term = io::read_pod<TermId>(in, "term id");
      const auto w = io::read_pod<double>(in, "weight");
      if (term >= nterms) throw ArtifactError(path.string() + ": term id out of range");
      vec.emplace_back(term, w);
    }
  }
  index.build_postings();
  return index;
}

std::vector<Document> read_documents(std::istream& in, const std::string& source_name,
                                     RecordFormat format) {
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (format == RecordFormat::kAuto) {
      format = std::count(line.begin(), line.end(), '\t') >= 2 ? RecordFormat::kTabSeparated
                                                                : RecordFormat::kPlainLines;
    }
    if (format == RecordFormat::kPlainLines) {
      docs.push_back({source_name + ":" + std::to_string(lineno), line, std::nullopt});
      continue;
    }
    const auto first = line.find('\t');
    const auto second = first == std::string::npos ? first : line.find('\t', first + 1);
    if (second == std::string::npos) {
      throw ParseError(source_name + ":" + std::to_string(lineno) +
                       ": expected id<TAB>domain<TAB>text");
    }
    Document doc;
    doc.id = line.substr(0, first);
    auto tag = line.substr(first + 1, second - first - 1);
    if (!tag.empty()) doc.domain_tag = std::move(tag);
    doc.text = line.substr(second + 1);
    if (doc.id.empty()) {
      throw ParseError(source_name + ":" + std::to_string(lineno) + ": empty document id");
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<Document> read_documents(const std::filesystem::path& path, RecordFormat format) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open corpus file: " + path.string());
  return read_documents(in, path.filename().string(), format);
}

}  // namespace kinject
