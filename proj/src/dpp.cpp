#include "kinject/dpp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kinject/errors.hpp"

namespace kinject {
namespace {

TokenIds snippet_prefix(const LanguageModel& scorer, std::string_view text) {
  return encode_knowledge_prefix(scorer.vocab, tokenize(text));
}

// log p(target | <bos> given) - log p(target | <bos>)
double pmi(const LMParams& params, const TokenIds& given, const TokenIds& target) {
  return log_prob(params, target, given) - log_prob(params, target, {});
}

bool has_cholesky(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

// Relative floor under which a marginal gain counts as zero.
constexpr double kGainTolerance = 1e-12;

}  // namespace

double rel_score(const LanguageModel& scorer, std::string_view snippet, const DialogHistory& history) {
  return pmi(scorer.params, snippet_prefix(scorer, snippet), encode_history(scorer.vocab, history));
}

double red_score(const LanguageModel& scorer, std::string_view a, std::string_view b) {
  const auto pa = snippet_prefix(scorer, a);
  const auto pb = snippet_prefix(scorer, b);
  const double ab = pmi(scorer.params, pa, pb);
  const double ba = pmi(scorer.params, pb, pa);
  return 0.5 * (ab + ba);
}

RelRedScores score_snippets(const LanguageModel& scorer, const std::vector<std::string>& snippets,
                            const DialogHistory& history) {
  const auto n = snippets.size();
  const auto& params = scorer.params;
  std::vector<TokenIds> prefixes;
  prefixes.reserve(n);
  for (const auto& s : snippets) prefixes.push_back(snippet_prefix(scorer, s));
  const auto hist = encode_history(scorer.vocab, history);

  const RowMatrix start = prefix_states(params, {TokenIds{}});
  const RowMatrix conditioned = prefix_states(params, prefixes);

  RelRedScores out;
  out.rel.resize(static_cast<Eigen::Index>(n));
  out.red = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  if (n == 0) return out;

  const double hist_marginal = continuation_log_probs(params, start, {hist})[0];
  const auto hist_given =
      continuation_log_probs(params, conditioned, std::vector<TokenIds>(n, hist));
  for (std::size_t i = 0; i < n; ++i) out.rel(static_cast<Eigen::Index>(i)) = hist_given[i] - hist_marginal;

  const auto marginals = continuation_log_probs(params, start, prefixes);
  // directed(i, j) = log p(k_j | k_i) - log p(k_j)
  Eigen::MatrixXd directed(out.red.rows(), out.red.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto given_i = continuation_log_probs(params, conditioned.row(static_cast<Eigen::Index>(i)), prefixes);
    for (std::size_t j = 0; j < n; ++j) {
      directed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = given_i[j] - marginals[j];
    }
  }
  for (Eigen::Index i = 0; i < out.red.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < out.red.cols(); ++j) {
      const double v = 0.5 * (directed(i, j) + directed(j, i));
      out.red(i, j) = v;
      out.red(j, i) = v;
    }
  }
  return out;
}

DppKernel build_kernel(const RelRedScores& scores, double beta_init) {
  const auto n = scores.rel.size();
  if (n == 0) throw EmptyInput("cannot build a kernel over zero snippets");
  if (!(beta_init > 0.0 && beta_init <= 1.0)) throw InvalidArgument("beta_init must be in (0, 1]");
  if (scores.red.rows() != n || scores.red.cols() != n) {
    throw InvalidArgument("redundancy matrix shape does not match relevance vector");
  }
  if (!scores.rel.allFinite() || !scores.red.allFinite()) {
    throw NumericFailure("non-finite relevance or redundancy score");
  }

  Eigen::MatrixXd off = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) off(i, j) = std::pow(std::max(0.0, scores.red(i, j)), 2);
    }
  }
  const Eigen::VectorXd diag = scores.rel.cwiseMax(0.0).array().square();

  DppKernel k;
  k.beta_used = beta_init;
  const Eigen::MatrixXd jitter = kKernelJitter * Eigen::MatrixXd::Identity(n, n);
  while (true) {
    k.D = k.beta_used * off;
    k.D.diagonal() = diag;
    if (has_cholesky(k.D + jitter)) {
      k.psd_certified = true;
      break;
    }
    const double next = k.beta_used * 0.5;
    if (next == 0.0) break;
    k.beta_used = next;
    ++k.halvings;
  }
  return k;
}

Selection greedy_map(const Eigen::MatrixXd& D, std::size_t B, GreedyMode mode) {
  const auto n = static_cast<std::size_t>(D.rows());
  if (D.rows() != D.cols()) throw InvalidArgument("kernel must be square");
  if (B < 1 || B > n) throw InvalidArgument("B must satisfy 1 <= B <= N");
  const double tol = kGainTolerance * std::max(1.0, D.diagonal().cwiseAbs().maxCoeff());

  Selection sel;
  std::vector<bool> taken(n, false);
  auto argmax = [&](const Eigen::VectorXd& gains) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      if (best == n || gains(static_cast<Eigen::Index>(i)) > gains(static_cast<Eigen::Index>(best))) best = i;
    }
    return best;
  };

  if (mode == GreedyMode::kIncremental) {
    // Rows of c hold the Cholesky factor columns of the selected items.
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(n));
    Eigen::VectorXd gain = D.diagonal();
    double log_det = 0.0;
    for (std::size_t step = 0; step < B; ++step) {
      const auto j = argmax(gain);
      const double g = gain(static_cast<Eigen::Index>(j));
      if (!(g > tol)) break;
      taken[j] = true;
      sel.order.push_back(j);
      log_det += std::log(g);
      sel.log_det.push_back(log_det);
      const auto s = static_cast<Eigen::Index>(step);
      const auto jj = static_cast<Eigen::Index>(j);
      const double root = std::sqrt(g);
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
        if (taken[static_cast<std::size_t>(i)]) continue;
        const double dot = s > 0 ? c.col(jj).head(s).dot(c.col(i).head(s)) : 0.0;
        const double e = (D(jj, i) - dot) / root;
        c(s, i) = e;
        gain(i) -= e * e;
      }
    }
    return sel;
  }

  double prev_log_det = 0.0;
  for (std::size_t step = 0; step < B; ++step) {
    Eigen::VectorXd gain = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n),
                                                     -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      auto subset = sel.order;
      subset.push_back(i);
      const double det = subset_determinant(D, subset);
      gain(static_cast<Eigen::Index>(i)) = det / std::exp(prev_log_det);
    }
    const auto j = argmax(gain);
    if (!(gain(static_cast<Eigen::Index>(j)) > tol)) break;
    taken[j] = true;
    sel.order.push_back(j);
    prev_log_det = std::log(subset_determinant(D, sel.order));
    sel.log_det.push_back(prev_log_det);
  }
  return sel;
}

double subset_determinant(const Eigen::MatrixXd& D, const std::vector<std::size_t>& subset) {
  const auto m = static_cast<Eigen::Index>(subset.size());
  if (m == 0) return 1.0;
  Eigen::MatrixXd sub(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      sub(a, b) = D(static_cast<Eigen::Index>(subset[static_cast<std::size_t>(a)]),
                    static_cast<Eigen::Index>(subset[static_cast<std::size_t>(b)]));
    }
  }
  return sub.determinant();
}

std::vector<std::size_t> brute_force_map(const Eigen::MatrixXd& D, std::size_t B) {
  const auto n = static_cast<std::size_t>(D.rows());
  if (n > kBruteForceLimit) {
    throw OracleScaleError("brute_force_map supports at most " + std::to_string(kBruteForceLimit) +
                           " items, got " + std::to_string(n));
  }
  if (B < 1 || B > n) throw InvalidArgument("B must satisfy 1 <= B <= N");
  std::vector<std::size_t> idx(B);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::size_t> best = idx;
  double best_det = subset_determinant(D, idx);
  while (true) {
    // Next combination in lexicographic order.
    std::size_t k = B;
    while (k > 0 && idx[k - 1] == n - B + k - 1) --k;
    if (k == 0) break;
    ++idx[k - 1];
    for (std::size_t t = k; t < B; ++t) idx[t] = idx[t - 1] + 1;
    const double det = subset_determinant(D, idx);
    if (det > best_det) {
      best_det = det;
      best = idx;
    }
  }
  return best;
}

}  // namespace kinject
