#pragma once

// Single-layer GRU language model with tied input/output embeddings and
// hand-written backpropagation.
//
// Conventions shared by every operation below:
//   * `forward` runs exactly the ids it is given.
//   * Everything else prepends <bos> to the context before running it.
//   * A response's hidden sequence z has one row per emitted token: row t is
//     the state whose logits W z_t / tau produced token t.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kinject/dialog.hpp"
#include "kinject/vocab.hpp"

namespace kinject {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline constexpr std::size_t kDefaultHiddenSize = 64;

enum class HiddenOrigin { kModelDecoded, kPerturbed };

struct HiddenSeq {
  RowMatrix states;  // T x d
  HiddenOrigin origin = HiddenOrigin::kModelDecoded;

  std::size_t length() const noexcept { return static_cast<std::size_t>(states.rows()); }
};

/// All parameters live in one flat buffer:
///   W  (V x d)   embedding, also the output projection
///   Wx (3d x d)  input weights, rows [reset; update; candidate]
///   Uh (3d x d)  recurrent weights, same row blocks
///   b  (3d)      gate biases
class LMParams {
 public:
  LMParams() = default;
  /// Zero-initialized. With all-zero weights every logit is 0.
  LMParams(std::size_t vocab_size, std::size_t hidden_size);

  /// Small random initialization for training.
  static LMParams random(std::size_t vocab_size, std::size_t hidden_size, std::uint64_t seed);

  std::size_t vocab_size() const noexcept { return vocab_; }
  std::size_t hidden_size() const noexcept { return hidden_; }

  MatrixMap embedding();
  ConstMatrixMap embedding() const;
  /// Same storage as embedding().
  MatrixMap output_projection() { return embedding(); }
  ConstMatrixMap output_projection() const { return embedding(); }
  MatrixMap input_weights();
  ConstMatrixMap input_weights() const;
  MatrixMap recurrent_weights();
  ConstMatrixMap recurrent_weights() const;
  Eigen::Map<Eigen::VectorXd> gate_bias();
  Eigen::Map<const Eigen::VectorXd> gate_bias() const;

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  bool all_finite() const;

  static constexpr std::uint8_t kFormatVersion = 1;
  void save(const std::filesystem::path& path) const;
  /// Throws ArtifactError on a version or shape mismatch. `expected_vocab`
  /// is checked when nonzero.
  static LMParams load(const std::filesystem::path& path, std::size_t expected_vocab = 0);

 private:
  std::size_t offset_input() const noexcept { return vocab_ * hidden_; }
  std::size_t offset_recurrent() const noexcept { return offset_input() + 3 * hidden_ * hidden_; }
  std::size_t offset_bias() const noexcept { return offset_recurrent() + 3 * hidden_ * hidden_; }

  std::size_t vocab_ = 0;
  std::size_t hidden_ = 0;
  std::vector<double> data_;
};

/// Vocabulary plus parameters; the unit handed around by the pipeline.
struct LanguageModel {
  Vocab vocab;
  LMParams params;

  static LanguageModel load(const std::filesystem::path& vocab_path,
                            const std::filesystem::path& params_path);
};

/// Throws InvalidToken for ids outside [0, V).
void check_tokens(const LMParams& params, std::span<const TokenId> ids);

/// One GRU step for a batch: rows of `inputs` are embeddings, rows of
/// `state` are updated in place.
void gru_step(const LMParams& params, const RowMatrix& inputs, RowMatrix& state);

struct ForwardResult {
  HiddenSeq hidden;   // row t: state after consuming ids[t]
  RowMatrix logits;   // row t: W z_t / tau, predicts ids[t + 1]
};

/// Runs the ids as given (no <bos> is added). Throws InvalidArgument on an
/// empty input and InvalidToken on an out-of-range id.
ForwardResult forward(const LMParams& params, std::span<const TokenId> ids, double tau = 1.0);

/// log softmax of one logit row.
Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);

/// Sum of log p(sequence[i] | <bos>, context, sequence[<i]), tau = 1.
double log_prob(const LMParams& params, std::span<const TokenId> sequence,
                std::span<const TokenId> context);

/// Teacher-forced states for `response` after `context`; row t is the state
/// that predicts response[t].
HiddenSeq response_states(const LMParams& params, std::span<const TokenId> context,
                          std::span<const TokenId> response);

struct Decoded {
  TokenIds tokens;  // includes the terminating <eos> when one was emitted
  HiddenSeq hidden;
};

/// Argmax decoding (ties to the lowest id) until <eos> or max_len tokens.
Decoded greedy_decode(const LMParams& params, std::span<const TokenId> context, std::size_t max_len,
                      double tau = 1.0);

/// Nucleus sampling: each step draws from the smallest prefix of the
/// probability-sorted vocabulary whose mass reaches p, renormalized.
/// Ordering ties go to the lower id, so p -> 0 reproduces greedy_decode.
TokenIds sample_nucleus(const LMParams& params, std::span<const TokenId> context, double p,
                        std::size_t max_len, std::uint64_t seed, double tau = 1.0);

/// Index of the sampled entry of a nucleus-truncated distribution given a
/// uniform draw in [0, 1). Exposed for testing.
std::size_t nucleus_pick(const Eigen::Ref<const Eigen::VectorXd>& probs, double p, double uniform);

/// Uniform double in [0, 1) from a 64-bit draw; identical on every platform.
double uniform01(std::uint64_t bits) noexcept;

/// States after running <bos> + prefix, one row per prefix.
RowMatrix prefix_states(const LMParams& params, const std::vector<TokenIds>& prefixes);

/// log p(seqs[i] | start_states.row(i)) for every i, batched. A single-row
/// start_states is broadcast to every sequence. Empty sequences score 0.
std::vector<double> continuation_log_probs(const LMParams& params, const RowMatrix& start_states,
                                           const std::vector<TokenIds>& seqs);

// ---- Dialog serialization -------------------------------------------------

enum class SegmentKind { kText, kKnowledge, kUser, kSystem };

struct Segment {
  SegmentKind kind = SegmentKind::kText;
  std::string text;
};

/// user/system turns become <user>|<system> words <eos>; knowledge becomes
/// words <ksep>; plain text becomes words <eos>.
TokenIds encode_segment(const Vocab& vocab, const Segment& segment);

/// History turns only.
TokenIds encode_history(const Vocab& vocab, const DialogHistory& history);
/// History turns followed by <system>, the prompt for the next system turn.
TokenIds encode_dialog_context(const Vocab& vocab, const DialogHistory& history);

/// Words followed by <ksep>; the conditioning prefix used for PMI scoring.
TokenIds encode_knowledge_prefix(const Vocab& vocab, const TokenSeq& words);

/// Response tokens rendered as words, stopping at the first <eos>.
TokenSeq render_response(const Vocab& vocab, std::span<const TokenId> tokens);

// ---- Training -------------------------------------------------------------

/// Reads {"segments":[{"kind":...,"text":...}]} lines. Throws ParseError.
std::vector<std::vector<Segment>> read_lm_corpus(const std::filesystem::path& path);

/// <bos> followed by the encoded segments.
TokenIds encode_training_sequence(const Vocab& vocab, const std::vector<Segment>& segments);

/// Sum of next-token negative log likelihoods of seq[1..] given its prefix.
double sequence_nll(const LMParams& params, std::span<const TokenId> seq);

/// Same value; adds d(nll)/d(params) into `grad` (size params.values().size()).
double sequence_nll_grad(const LMParams& params, std::span<const TokenId> seq,
                         std::span<double> grad);

/// Mean per-token loss over a corpus.
double corpus_loss(const LMParams& params, const std::vector<TokenIds>& corpus);

struct TrainOptions {
  std::size_t epochs = 10;
  double learning_rate = 0.01;
  double lr_decay = 1.0;  // learning rate multiplier applied after each epoch
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
  double clip_norm = 5.0;
};

struct TrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;  // corpus loss after each epoch
};

/// Adam on next-token cross entropy. epochs = 0 leaves params untouched.
/// Throws NumericFailure on a non-finite loss or gradient.
TrainReport train_lm(LMParams& params, const std::vector<TokenIds>& corpus,
                     const TrainOptions& options,
                     const std::function<void(std::size_t, double)>& on_epoch = {});

}  // namespace kinject
