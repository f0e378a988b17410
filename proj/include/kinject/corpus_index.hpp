#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kinject {

struct Document {
  std::string id;
  std::string text;
  std::optional<std::string> domain_tag = std::nullopt;
};

/// Longest snippet, in tokens, kept as a single document at ingestion.
inline constexpr std::size_t kMaxSnippetTokens = 60;

struct IngestReport {
  std::size_t records = 0;
  std::size_t skipped_empty = 0;
  std::size_t split_records = 0;  // records longer than kMaxSnippetTokens
};

struct RetrievalHit {
  Document document;
  double score = 0.0;
};

/// Sparse TF-IDF index with raw term frequency, smoothed idf
/// ln((1 + N) / (1 + df)) + 1 and L2-normalized document vectors.
/// Immutable after construction; retrieval is safe from concurrent callers.
class TfIdfIndex {
 public:
  using TermId = std::uint32_t;
  using SparseVector = std::vector<std::pair<TermId, double>>;  // sorted by term

  static constexpr std::uint8_t kFormatVersion = 1;
  static constexpr std::string_view kWeightingScheme =
      "tf=raw;idf=ln((1+N)/(1+df))+1;norm=l2";
  /// Ranking compares scores rounded to multiples of 1 / kScoreGrid.
  static constexpr double kScoreGrid = 1e10;

  TfIdfIndex() = default;

  /// Builds the index in one pass. Records over kMaxSnippetTokens tokens are
  /// split into sentence groups with ids "<id>#<k>"; records that tokenize to
  /// nothing are skipped and counted. Throws DuplicateDocument.
  static TfIdfIndex ingest(const std::vector<Document>& documents, IngestReport* report = nullptr);

  /// Top hits by cosine similarity, descending, ties (to 1e-10) by ascending id. Only
  /// documents with a nonzero score are returned. Throws EmptyQuery when the
  /// query has no tokens and InvalidArgument when top_n is 0.
  std::vector<RetrievalHit> retrieve(std::string_view query, std::size_t top_n) const;

  /// Cosine scores of the query against every document, in document order.
  std::vector<double> score_all(std::string_view query) const;

  std::size_t doc_count() const noexcept { return documents_.size(); }
  std::size_t term_count() const noexcept { return terms_.size(); }
  const Document& document(std::size_t i) const { return documents_.at(i); }
  const SparseVector& doc_vector(std::size_t i) const { return vectors_.at(i); }
  std::optional<TermId> term_id(std::string_view token) const;
  const std::string& term(TermId id) const { return terms_.at(id); }
  double idf(TermId id) const { return idf_.at(id); }
  std::uint32_t df(TermId id) const { return df_.at(id); }

  void save(const std::filesystem::path& path) const;
  static TfIdfIndex load(const std::filesystem::path& path);

 private:
  SparseVector query_vector(std::string_view query) const;
  void build_postings();

  std::vector<Document> documents_;
  std::vector<std::string> terms_;
  std::unordered_map<std::string, TermId> vocabulary_;
  std::vector<std::uint32_t> df_;
  std::vector<double> idf_;
  std::vector<SparseVector> vectors_;
  // term -> (document, weight)
  std::vector<std::vector<std::pair<std::uint32_t, double>>> postings_;
};

enum class RecordFormat { kAuto, kTabSeparated, kPlainLines };

/// Reads `id<TAB>domain_tag<TAB>text` records, or plain lines with ids
/// "<source_name>:<lineno>". kAuto picks tab-separated when the first
/// non-empty line has two tabs. Malformed tab records throw ParseError.
std::vector<Document> read_documents(std::istream& in, const std::string& source_name,
                                     RecordFormat format = RecordFormat::kAuto);
std::vector<Document> read_documents(const std::filesystem::path& path,
                                     RecordFormat format = RecordFormat::kAuto);

}  // namespace kinject
