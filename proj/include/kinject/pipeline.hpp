#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinject/config.hpp"
#include "kinject/corpus_index.hpp"
#include "kinject/dialog.hpp"
#include "kinject/dpp.hpp"
#include "kinject/entailment.hpp"
#include "kinject/knowledge.hpp"
#include "kinject/lm.hpp"
#include "kinject/ranking.hpp"

namespace kinject {

inline constexpr std::string_view kTraceSchema = "kinject.trace/1";

/// Everything respond needs, loaded once.
struct Artifacts {
  std::shared_ptr<const LanguageModel> model;
  std::shared_ptr<const LanguageModel> scorer;
  std::shared_ptr<const LanguageModel> generator_lm;
  EntailmentHead head;
  std::optional<TfIdfIndex> index;
  WordSet stopwords;
  WordSet blocklist;
};

/// Throws ArtifactError naming the first missing or unreadable path. The
/// index is loaded only when the non-parametric source is enabled.
Artifacts load_artifacts(const PipelineConfig& cfg);

struct Selected {
  KnowledgeSnippet snippet;
  std::size_t pool_index = 0;
};

struct TurnResult {
  std::string initial_text;
  std::string final_text;
  TokenIds final_tokens;
  std::string final_provenance;
  bool injected = false;  // false when no snippet survived acquisition and filtering
  std::vector<Selected> selected;
  std::vector<RankedCandidate> ranking;
  double initial_combined = 0.0;
  double final_combined = 0.0;
  std::vector<nlohmann::json> trace;  // one object per stage
  std::vector<std::string> warnings;
};

struct PoolResult {
  std::string initial_text;
  Decoded initial;
  TokenIds context;
  std::vector<KnowledgeSnippet> pool;
  RelRedScores scores;
  std::optional<DppKernel> kernel;
  Selection selection;
};

/// Steps up to and including selection; records their trace objects into
/// `trace` when given.
PoolResult acquire_and_select(const Artifacts& artifacts, const PipelineConfig& cfg,
                              const DialogHistory& history, KnowledgeGenerator* external,
                              std::vector<nlohmann::json>* trace, std::vector<std::string>* warnings);

/// One full turn. `external`, when non-null, replaces the bundled model as
/// the parametric generator. Throws InvalidArgument for an empty history.
TurnResult respond(const Artifacts& artifacts, const PipelineConfig& cfg, const DialogHistory& history,
                   KnowledgeGenerator* external = nullptr);

/// Checks one trace object against the stage layouts; returns a list of
/// problems (empty when valid).
std::vector<std::string> validate_trace_line(const nlohmann::json& line);

/// Writes one JSON object per line.
void write_trace(std::ostream& out, const std::vector<nlohmann::json>& trace);

struct ChatOptions {
  bool show_trace = false;
};

/// Line-oriented chat loop. `/quit` ends the session, `/trace` toggles the
/// selected-snippet display. Errors from respond are printed and the loop
/// continues. Returns the number of system turns produced.
std::size_t run_chat(const Artifacts& artifacts, const PipelineConfig& cfg, std::istream& in,
                     std::ostream& out, ChatOptions options = {},
                     KnowledgeGenerator* external = nullptr);

struct EvalReport {
  std::size_t dialogs = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::size_t injected = 0;
  double initial_distinct2 = 0.0;
  double final_distinct2 = 0.0;
  double mean_initial_distinct2 = 0.0;
  double mean_final_distinct2 = 0.0;
  std::optional<double> initial_entr;
  std::optional<double> final_entr;
  double mean_combined_lift = 0.0;
  std::vector<std::string> initial_responses;
  std::vector<std::string> final_responses;
};

/// Responds to every dialog (each should end with a user turn) and reports
/// corpus-level D-2 and ENTR of the initial and final responses.
EvalReport evaluate(const Artifacts& artifacts, const PipelineConfig& cfg, const DialogFile& dialogs,
                    KnowledgeGenerator* external = nullptr);

nlohmann::json to_json(const EvalReport& report);

/// Relevance, redundancy, kernel and selection for one history.
nlohmann::json select_debug(const Artifacts& artifacts, const PipelineConfig& cfg,
                            const DialogHistory& history, KnowledgeGenerator* external = nullptr);

}  // namespace kinject
