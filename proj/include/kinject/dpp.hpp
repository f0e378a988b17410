#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "kinject/dialog.hpp"
#include "kinject/lm.hpp"

namespace kinject {

/// log p(history | snippet <ksep>) - log p(history).
double rel_score(const LanguageModel& scorer, std::string_view snippet, const DialogHistory& history);

/// Mean of the two directional PMI estimates between snippets; symmetric by
/// construction.
double red_score(const LanguageModel& scorer, std::string_view a, std::string_view b);

struct RelRedScores {
  Eigen::VectorXd rel;  // N
  Eigen::MatrixXd red;  // N x N, symmetric, zero diagonal
};

/// rel_score and red_score for a whole pool, sharing prefix states.
RelRedScores score_snippets(const LanguageModel& scorer, const std::vector<std::string>& snippets,
                            const DialogHistory& history);

inline constexpr double kKernelJitter = 1e-8;

struct DppKernel {
  Eigen::MatrixXd D;
  double beta_used = 1.0;
  double jitter_used = kKernelJitter;
  bool psd_certified = false;
  std::size_t halvings = 0;
};

/// D_ii = max(0, rel_i)^2, D_ij = beta max(0, red_ij)^2. beta starts at
/// beta_init and is halved until D + jitter I has a Cholesky factor.
/// Throws EmptyInput for N = 0, InvalidArgument for beta_init outside (0, 1].
DppKernel build_kernel(const RelRedScores& scores, double beta_init);

struct Selection {
  std::vector<std::size_t> order;
  std::vector<double> log_det;  // log det of the selected submatrix after each pick
};

enum class GreedyMode { kIncremental, kNaive };

/// Greedy MAP: repeatedly adds the item with the largest determinant gain
/// (ties to the lowest index), so the first pick is argmax D_ii. Stops early
/// once the best remaining gain is not positive. Throws InvalidArgument
/// unless 1 <= B <= N.
Selection greedy_map(const Eigen::MatrixXd& D, std::size_t B,
                     GreedyMode mode = GreedyMode::kIncremental);

/// Exhaustive maximum-determinant subset of size B in ascending index order;
/// ties go to the lexicographically first subset. Throws OracleScaleError
/// for N > 20.
std::vector<std::size_t> brute_force_map(const Eigen::MatrixXd& D, std::size_t B);

inline constexpr std::size_t kBruteForceLimit = 20;

double subset_determinant(const Eigen::MatrixXd& D, const std::vector<std::size_t>& subset);

}  // namespace kinject
