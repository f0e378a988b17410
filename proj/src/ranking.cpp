#include "kinject/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kinject/errors.hpp"
#include "kinject/text_metrics.hpp"

namespace kinject {

std::vector<double> z_normalize(std::span<const double> column) {
  std::vector<double> out(column.size(), 0.0);
  if (column.empty()) return out;
  const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
  if (*lo == *hi) return out;
  const double n = static_cast<double>(column.size());
  const double mean = std::accumulate(column.begin(), column.end(), 0.0) / n;
  double var = 0.0;
  for (double x : column) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < column.size(); ++i) out[i] = (column[i] - mean) / sd;
  return out;
}

std::vector<RankedCandidate> rank_scores(std::span<const double> distinct2,
                                         std::span<const double> loglik) {
  if (distinct2.size() != loglik.size()) throw InvalidArgument("score columns differ in length");
  const auto zd = z_normalize(distinct2);
  const auto zl = z_normalize(loglik);
  std::vector<RankedCandidate> ranked(distinct2.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    auto& r = ranked[i];
    r.index = i;
    r.distinct2 = distinct2[i];
    r.cond_loglik = loglik[i];
    r.z_distinct2 = zd[i];
    r.z_loglik = zl[i];
    r.combined = zd[i] + zl[i];
  }
  // Combined scores are compared on a 1e-9 grid so that values equal up to
  // rounding (two candidates always give z = +-1) fall through to the tie-breaks.
  const auto grid = [](double c) { return std::round(c * 1e9); };
  std::sort(ranked.begin(), ranked.end(), [&](const RankedCandidate& a, const RankedCandidate& b) {
    if (grid(a.combined) != grid(b.combined)) return grid(a.combined) > grid(b.combined);
    if (a.cond_loglik != b.cond_loglik) return a.cond_loglik > b.cond_loglik;
    return a.index < b.index;
  });
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i].rank = i + 1;
  return ranked;
}

std::vector<RankedCandidate> score_candidates(const LanguageModel& scorer, const DialogHistory& history,
                                              std::vector<CandidateResponse> candidates) {
  if (candidates.empty()) throw EmptyInput("no candidates to rank");
  const auto context = encode_dialog_context(scorer.vocab, history);
  std::vector<double> d2, ll;
  for (const auto& c : candidates) {
    d2.push_back(c.tokens.empty() ? 0.0 : distinct_n(render_response(scorer.vocab, c.tokens), 2));
    ll.push_back(c.tokens.empty() ? 0.0 : log_prob(scorer.params, c.tokens, context));
  }
  auto ranked = rank_scores(d2, ll);
  for (auto& r : ranked) r.candidate = std::move(candidates[r.index]);
  return ranked;
}

const CandidateResponse& select_final(const std::vector<RankedCandidate>& ranked) {
  if (ranked.empty()) throw EmptyInput("no ranked candidates");
  return ranked.front().candidate;
}

}  // namespace kinject
