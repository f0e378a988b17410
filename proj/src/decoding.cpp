#include "kinject/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "kinject/errors.hpp"

namespace kinject {

void validate(const DecodeConfig& cfg) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
  if (!(cfg.step_size > 0.0)) throw InvalidArgument("step_size must be positive");
  if (!(cfg.tau > 0.0)) throw InvalidArgument("tau must be positive");
  if (!(cfg.alpha >= 0.0) || !(cfg.lambda >= 0.0)) throw InvalidArgument("alpha and lambda must be >= 0");
  if (cfg.max_len == 0) throw InvalidArgument("max_len must be >= 1");
}

LossGrad fidelity_loss(const LMParams& params, std::span<const TokenId> knowledge, const RowMatrix& z) {
  if (knowledge.empty()) throw InvalidArgument("fidelity loss needs knowledge tokens");
  if (z.rows() == 0) throw InvalidArgument("fidelity loss needs a non-empty hidden sequence");
  if (z.cols() != static_cast<Eigen::Index>(params.hidden_size())) {
    throw InvalidArgument("hidden width does not match the model");
  }
  check_tokens(params, knowledge);
  const auto w = params.output_projection();
  const auto t_max = std::min<Eigen::Index>(static_cast<Eigen::Index>(knowledge.size()), z.rows());
  LossGrad out;
  out.grad = RowMatrix::Zero(z.rows(), z.cols());
  const RowMatrix logits = z.topRows(t_max) * w.transpose();
  const double scale = 1.0 / static_cast<double>(t_max);
  for (Eigen::Index t = 0; t < t_max; ++t) {
    const Eigen::VectorXd lp = log_softmax(logits.row(t).transpose());
    const auto k = knowledge[static_cast<std::size_t>(t)];
    out.value -= lp(k);
    Eigen::RowVectorXd p = lp.array().exp().transpose();
    p(k) -= 1.0;
    out.grad.row(t) = scale * (p * w);
  }
  out.value *= scale;
  return out;
}

Objective total_objective(const LMParams& params, const EntailmentHead& head,
                          const Eigen::VectorXd& history_emb, std::span<const TokenId> knowledge,
                          const RowMatrix& z, double alpha, double lambda) {
  Objective out;
  out.grad = RowMatrix::Zero(z.rows(), z.cols());
  if (alpha != 0.0) {
    const auto e = entail_prob(head, z, history_emb);
    out.entail_log_prob = e.log_prob;
    out.value += alpha * e.log_prob;
    out.grad += alpha * e.grad_log_prob;
  }
  if (lambda != 0.0) {
    const auto f = fidelity_loss(params, knowledge, z);
    out.ce = f.value;
    out.value -= lambda * f.value;
    out.grad -= lambda * f.grad;
  }
  return out;
}

RowMatrix backward_pass(const RowMatrix& z, const RowMatrix& grad, double step_size,
                        std::ptrdiff_t iteration) {
  if (grad.rows() != z.rows() || grad.cols() != z.cols()) {
    throw InvalidArgument("gradient shape does not match hidden states");
  }
  if (!grad.allFinite()) throw NumericFailure("non-finite objective gradient", iteration);
  RowMatrix out = z;
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    const double norm = grad.row(t).norm();
    if (norm < 1e-12) continue;
    out.row(t) += (step_size / norm) * grad.row(t);
  }
  return out;
}

TokenIds argmax_tokens(const LMParams& params, const RowMatrix& z, double tau) {
  const RowMatrix logits = (z * params.output_projection().transpose()) / tau;
  TokenIds ids(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    Eigen::Index best = 0;
    logits.row(t).maxCoeff(&best);
    ids[static_cast<std::size_t>(t)] = static_cast<TokenId>(best);
  }
  return ids;
}

ForwardPass forward_pass(const LMParams& params, std::span<const TokenId> context, const RowMatrix& z,
                         double tau) {
  if (z.rows() == 0) throw InvalidArgument("forward pass needs a non-empty hidden sequence");
  ForwardPass out;
  out.tokens = argmax_tokens(params, z, tau);
  out.states = response_states(params, context, out.tokens).states;
  return out;
}

namespace {

TokenIds through_first_eos(TokenIds ids) {
  auto it = std::find(ids.begin(), ids.end(), token::kEos);
  if (it != ids.end()) ids.erase(it + 1, ids.end());
  return ids;
}

TokenIds sample_tokens(const LMParams& params, const RowMatrix& z, double tau, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const RowMatrix logits = (z * params.output_projection().transpose()) / tau;
  TokenIds ids;
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    const Eigen::VectorXd p = log_softmax(logits.row(t).transpose()).array().exp();
    ids.push_back(static_cast<TokenId>(nucleus_pick(p, 1.0, uniform01(rng()))));
  }
  return ids;
}

}  // namespace

InjectionResult inject(const LMParams& params, const EntailmentHead& head,
                       std::span<const TokenId> context, const Decoded& initial,
                       std::span<const TokenId> knowledge, const DecodeConfig& cfg,
                       const std::string& snippet_id) {
  validate(cfg);
  if (initial.hidden.states.rows() != static_cast<Eigen::Index>(initial.tokens.size())) {
    throw InvalidArgument("initial hidden states do not match initial tokens");
  }
  InjectionResult result;
  result.trace.snippet_id = snippet_id;
  if (initial.tokens.empty()) {
    result.hidden = initial.hidden;
    return result;
  }
  const Eigen::VectorXd hist = history_embedding(params, context);
  RowMatrix z = initial.hidden.states;

  for (std::size_t it = 0; it < cfg.iterations; ++it) try {
    const auto obj = total_objective(params, head, hist, knowledge, z, cfg.alpha, cfg.lambda);
    IterationRecord rec;
    rec.iteration = it;
    rec.ce = obj.ce;
    rec.entail_log_prob = obj.entail_log_prob;
    rec.objective = obj.value;
    rec.grad_norm = obj.grad.norm();
    const RowMatrix z_bw = backward_pass(z, obj.grad, cfg.step_size, static_cast<std::ptrdiff_t>(it));
    if (cfg.gamma < 1.0) {
      const auto fw = forward_pass(params, context, z_bw, cfg.tau);
      rec.forward_shift = (z_bw - fw.states).norm();
      z = cfg.gamma * z_bw + (1.0 - cfg.gamma) * fw.states;
    } else {
      z = z_bw;
    }
    if (!z.allFinite() || !std::isfinite(rec.objective)) {
      throw NumericFailure("non-finite state during injection", static_cast<std::ptrdiff_t>(it));
    }
    result.trace.iterations.push_back(rec);
  } catch (const NumericFailure& e) {
    throw InjectionError(e, result.trace);
  }

  const auto final_obj = total_objective(params, head, hist, knowledge, z, cfg.alpha != 0.0 ? 1.0 : 0.0,
                                         cfg.lambda != 0.0 ? 1.0 : 0.0);
  result.trace.final_ce = final_obj.ce;
  result.trace.final_entail_log_prob = final_obj.entail_log_prob;

  if (cfg.iterations == 0) {
    result.tokens = initial.tokens;
  } else {
    result.tokens = through_first_eos(cfg.deterministic_final ? argmax_tokens(params, z, cfg.tau)
                                                              : sample_tokens(params, z, cfg.tau, cfg.seed));
  }
  result.hidden.states = z.topRows(static_cast<Eigen::Index>(result.tokens.size()));
  result.hidden.origin = cfg.iterations == 0 ? initial.hidden.origin : HiddenOrigin::kPerturbed;
  result.trace.final_tokens = result.tokens;
  return result;
}

}  // namespace kinject
