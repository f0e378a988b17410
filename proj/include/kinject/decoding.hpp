#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kinject/entailment.hpp"
#include "kinject/errors.hpp"
#include "kinject/lm.hpp"

namespace kinject {

struct DecodeConfig {
  double alpha = 1.0;    // entailment weight
  double lambda = 1.0;   // knowledge fidelity weight
  double gamma = 0.45;   // share of the perturbed states in the mix
  std::size_t iterations = 5;
  double step_size = 1.0;  // 0.02 never flips an argmax token with a 64-dim model
  double tau = 1.0;
  std::size_t max_len = 100;
  bool deterministic_final = true;
  std::uint64_t seed = 0;  // used only when deterministic_final is false
};

/// Throws InvalidArgument for gamma outside [0, 1], non-positive step or tau,
/// negative weights or max_len = 0.
void validate(const DecodeConfig& cfg);

struct LossGrad {
  double value = 0.0;
  RowMatrix grad;  // same shape as z
};

/// Mean cross entropy between knowledge tokens k_t and logits W z_t over the
/// first min(|k|, |z|) positions. Rows past that are left with zero gradient.
/// Throws InvalidArgument for an empty k or z.
LossGrad fidelity_loss(const LMParams& params, std::span<const TokenId> knowledge, const RowMatrix& z);

struct Objective {
  double value = 0.0;  // alpha log theta - lambda CE
  double ce = 0.0;
  double entail_log_prob = 0.0;
  RowMatrix grad;
};

/// Terms with a zero weight are skipped, so alpha = lambda = 0 gives an
/// exact zero value and gradient.
Objective total_objective(const LMParams& params, const EntailmentHead& head,
                          const Eigen::VectorXd& history_emb, std::span<const TokenId> knowledge,
                          const RowMatrix& z, double alpha, double lambda);

/// z + step * g with each row of g scaled to unit norm; rows with norm below
/// 1e-12 contribute nothing. Throws NumericFailure(iteration) on a
/// non-finite gradient.
RowMatrix backward_pass(const RowMatrix& z, const RowMatrix& grad, double step_size,
                        std::ptrdiff_t iteration = -1);

/// Argmax tokens of W z_t / tau, replayed teacher-forced after `context`.
/// Row t of the result is the state that predicts token t, as in z.
struct ForwardPass {
  TokenIds tokens;
  RowMatrix states;
};
ForwardPass forward_pass(const LMParams& params, std::span<const TokenId> context, const RowMatrix& z,
                         double tau = 1.0);

/// Argmax of W z_t / tau per row (ties to the lowest id).
TokenIds argmax_tokens(const LMParams& params, const RowMatrix& z, double tau = 1.0);

struct IterationRecord {
  std::size_t iteration = 0;
  double ce = 0.0;
  double entail_log_prob = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double forward_shift = 0.0;  // Frobenius distance between z_bw and z_fw
};

struct InjectionTrace {
  std::string snippet_id;
  std::vector<IterationRecord> iterations;
  double final_ce = 0.0;
  double final_entail_log_prob = 0.0;
  TokenIds final_tokens;
};

/// Numeric failure inside inject, with the iterations completed before it.
class InjectionError : public NumericFailure {
 public:
  InjectionError(const NumericFailure& cause, InjectionTrace trace)
      : NumericFailure(cause.what(), cause.iteration()), trace_(std::move(trace)) {}
  const InjectionTrace& trace() const noexcept { return trace_; }

 private:
  InjectionTrace trace_;
};

struct InjectionResult {
  TokenIds tokens;  // up to and including the first <eos>
  HiddenSeq hidden;
  InjectionTrace trace;
};

/// Iteratively perturbs the initial response's states toward the snippet:
/// backward pass on the objective gradient, forward pass through the model,
/// then z = gamma z_bw + (1 - gamma) z_fw. `context` is the encoded dialog
/// context that produced `initial`.
InjectionResult inject(const LMParams& params, const EntailmentHead& head,
                       std::span<const TokenId> context, const Decoded& initial,
                       std::span<const TokenId> knowledge, const DecodeConfig& cfg,
                       const std::string& snippet_id = {});

}  // namespace kinject
