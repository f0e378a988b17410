#pragma once

// Independent reference implementations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kinject/corpus_index.hpp"
#include "kinject/lm.hpp"
#include "kinject/text_metrics.hpp"

namespace kinject::test {

/// Exhaustive TF-IDF cosine ranking recomputed from the stored document texts.
class CosineOracle {
 public:
  explicit CosineOracle(const TfIdfIndex& index) {
    const std::size_t n = index.doc_count();
    std::map<std::string, double> df;
    std::vector<std::map<std::string, double>> tfs(n);
    for (std::size_t d = 0; d < n; ++d) {
      ids_.push_back(index.document(d).id);
      for (const auto& t : tokenize(index.document(d).text)) tfs[d][t] += 1.0;
      for (const auto& [t, _] : tfs[d]) df[t] += 1.0;
    }
    for (const auto& [t, f] : df) idf_[t] = std::log((1.0 + static_cast<double>(n)) / (1.0 + f)) + 1.0;
    for (auto& tf : tfs) vectors_.push_back(normalized(tf));
  }

  /// (score, id) for every document with a nonzero score, best first.
  std::vector<std::pair<double, std::string>> rank(const std::string& query) const {
    std::map<std::string, double> tf;
    for (const auto& t : tokenize(query))
      if (idf_.count(t)) tf[t] += 1.0;
    const auto q = normalized(tf);
    std::vector<std::pair<double, std::string>> out;
    for (std::size_t d = 0; d < vectors_.size(); ++d) {
      double s = 0.0;
      for (const auto& [t, w] : q) {
        auto it = vectors_[d].find(t);
        if (it != vectors_[d].end()) s += w * it->second;
      }
      if (s > 0.0) out.emplace_back(s, ids_[d]);
    }
    const auto grid = [](double s) { return std::round(s * TfIdfIndex::kScoreGrid); };
    std::sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
      if (grid(a.first) != grid(b.first)) return grid(a.first) > grid(b.first);
      return a.second < b.second;
    });
    return out;
  }

 private:
  std::map<std::string, double> normalized(const std::map<std::string, double>& tf) const {
    std::map<std::string, double> v;
    double norm2 = 0.0;
    for (const auto& [t, c] : tf) {
      const double w = c * idf_.at(t);
      v[t] = w;
      norm2 += w * w;
    }
    if (norm2 > 0.0)
      for (auto& [_, w] : v) w /= std::sqrt(norm2);
    return v;
  }

  std::vector<std::string> ids_;
  std::map<std::string, double> idf_;
  std::vector<std::map<std::string, double>> vectors_;
};

/// Determinant of the principal submatrix by LU decomposition.
inline double oracle_det(const Eigen::MatrixXd& D, const std::vector<std::size_t>& subset) {
  const auto k = static_cast<Eigen::Index>(subset.size());
  Eigen::MatrixXd sub(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      sub(i, j) = D(static_cast<Eigen::Index>(subset[static_cast<std::size_t>(i)]),
                    static_cast<Eigen::Index>(subset[static_cast<std::size_t>(j)]));
  return sub.fullPivLu().determinant();
}

/// Largest principal-minor determinant over all size-B subsets, by enumeration.
inline double oracle_best_det(const Eigen::MatrixXd& D, std::size_t B) {
  const auto n = static_cast<std::size_t>(D.rows());
  std::vector<bool> mask(n, false);
  std::fill(mask.begin(), mask.begin() + static_cast<long>(B), true);
  double best = -1.0;
  do {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) subset.push_back(i);
    best = std::max(best, oracle_det(D, subset));
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return best;
}

/// Mean cross entropy of knowledge tokens under softmax(W z_t), with its
/// gradient, written as plain loops.
inline double oracle_fidelity(const LMParams& params, const TokenIds& k, const RowMatrix& z, RowMatrix* grad) {
  const auto W = params.embedding();
  const auto V = W.rows(), d = W.cols();
  const auto T = std::min<Eigen::Index>(static_cast<Eigen::Index>(k.size()), z.rows());
  if (grad) *grad = RowMatrix::Zero(z.rows(), z.cols());
  double ce = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    std::vector<double> logit(static_cast<std::size_t>(V), 0.0);
    double top = -1e300;
    for (Eigen::Index v = 0; v < V; ++v) {
      for (Eigen::Index j = 0; j < d; ++j) logit[static_cast<std::size_t>(v)] += W(v, j) * z(t, j);
      top = std::max(top, logit[static_cast<std::size_t>(v)]);
    }
    double sum = 0.0;
    for (double l : logit) sum += std::exp(l - top);
    const double lse = top + std::log(sum);
    const auto target = static_cast<Eigen::Index>(k[static_cast<std::size_t>(t)]);
    ce += lse - logit[static_cast<std::size_t>(target)];
    if (grad)
      for (Eigen::Index v = 0; v < V; ++v) {
        const double coef = std::exp(logit[static_cast<std::size_t>(v)] - lse) - (v == target ? 1.0 : 0.0);
        for (Eigen::Index j = 0; j < d; ++j) (*grad)(t, j) += coef * W(v, j) / static_cast<double>(T);
      }
  }
  return ce / static_cast<double>(T);
}

/// Pure fidelity descent: z <- z - step * (row-normalized dCE/dz). Returns
/// the cross entropy before each step followed by the final value.
inline std::vector<double> oracle_fidelity_pull(const LMParams& params, const TokenIds& k, RowMatrix z,
                                                double step, std::size_t iterations) {
  std::vector<double> ces;
  for (std::size_t it = 0; it < iterations; ++it) {
    RowMatrix g;
    ces.push_back(oracle_fidelity(params, k, z, &g));
    for (Eigen::Index t = 0; t < z.rows(); ++t) {
      double n2 = 0.0;
      for (Eigen::Index j = 0; j < z.cols(); ++j) n2 += g(t, j) * g(t, j);
      if (std::sqrt(n2) < 1e-12) continue;
      for (Eigen::Index j = 0; j < z.cols(); ++j) z(t, j) -= step * g(t, j) / std::sqrt(n2);
    }
  }
  ces.push_back(oracle_fidelity(params, k, z, nullptr));
  return ces;
}

}  // namespace kinject::test
