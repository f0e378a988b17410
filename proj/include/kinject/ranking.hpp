#pragma once

#include <span>
#include <string>
#include <vector>

#include "kinject/dialog.hpp"
#include "kinject/lm.hpp"

namespace kinject {

struct CandidateResponse {
  TokenIds tokens;
  std::string provenance;  // "initial" or the injected snippet's origin
};

struct RankedCandidate {
  CandidateResponse candidate;
  std::size_t index = 0;  // position in the input list
  double distinct2 = 0.0;
  double cond_loglik = 0.0;
  double z_distinct2 = 0.0;
  double z_loglik = 0.0;
  double combined = 0.0;
  std::size_t rank = 0;  // 1-based
};

/// (x - mean) / std with the population std; a column whose values are all
/// equal maps to zeros.
std::vector<double> z_normalize(std::span<const double> column);

/// Ranks raw score columns: combined = z(distinct2) + z(loglik), descending;
/// ties go to the higher loglik, then the lower index. Candidates are left empty.
std::vector<RankedCandidate> rank_scores(std::span<const double> distinct2,
                                         std::span<const double> loglik);

/// Scores each candidate by distinct-2 of its words and log p(candidate |
/// history, <system>), then ranks. Throws EmptyInput for no candidates.
std::vector<RankedCandidate> score_candidates(const LanguageModel& scorer, const DialogHistory& history,
                                              std::vector<CandidateResponse> candidates);

/// The rank-1 candidate. Throws EmptyInput for an empty list.
const CandidateResponse& select_final(const std::vector<RankedCandidate>& ranked);

}  // namespace kinject
