#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kinject/dialog.hpp"
#include "kinject/lm.hpp"

namespace kinject {

/// Bag-of-words logistic classifier over hidden states:
///   p(entailed) = sigmoid(w_r . mean_t(z_t) + w_h . mean(embeddings of history words) + b)
struct EntailmentHead {
  Eigen::VectorXd response_weights;
  Eigen::VectorXd history_weights;
  double bias = 0.0;

  static EntailmentHead zeros(std::size_t hidden_size);
  std::size_t hidden_size() const noexcept { return static_cast<std::size_t>(response_weights.size()); }

  static constexpr std::uint8_t kFormatVersion = 1;
  void save(const std::filesystem::path& path) const;
  /// Throws ArtifactError when the file's hidden size differs from `expected_hidden` (if nonzero).
  static EntailmentHead load(const std::filesystem::path& path, std::size_t expected_hidden = 0);
};

/// Mean input embedding of the non-reserved ids; zero when there are none.
Eigen::VectorXd history_embedding(const LMParams& params, std::span<const TokenId> history);

struct EntailOutput {
  double probability = 0.5;  // clamped into [1e-12, 1 - 1e-12]
  double log_prob = 0.0;     // log sigmoid of the unclamped logit
  RowMatrix grad_log_prob;   // d log p / d z, same shape as z
};

/// Throws InvalidArgument for an empty z or mismatched widths.
EntailOutput entail_prob(const EntailmentHead& head, const RowMatrix& z,
                         const Eigen::VectorXd& history_emb);
EntailOutput entail_prob(const EntailmentHead& head, const LMParams& params, const HiddenSeq& z,
                         std::span<const TokenId> history);

struct EntailmentExample {
  RowMatrix z;
  Eigen::VectorXd history;
  int label = 0;
};

/// Teacher-forces the response (plus <eos>) after the encoded history and
/// keeps its hidden states as the example's z.
EntailmentExample make_entailment_example(const LanguageModel& lm, const DialogHistory& history,
                                          const std::string& response, int label);

struct EntailTrainOptions {
  std::size_t epochs = 50;
  double learning_rate = 0.05;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct EntailTrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;  // mean binary cross entropy after each epoch
};

double entailment_loss(const EntailmentHead& head, std::span<const EntailmentExample> examples);
double entailment_accuracy(const EntailmentHead& head, std::span<const EntailmentExample> examples);

/// Adam on binary cross entropy, full batch. epochs = 0 leaves the head untouched.
EntailTrainReport train_entailment(EntailmentHead& head, std::span<const EntailmentExample> examples,
                                   const EntailTrainOptions& options);

enum class PairKind { kTrue, kUnrelated, kContradiction };
std::string_view to_string(PairKind kind);

struct LabeledPair {
  DialogHistory history;
  std::string response;
  int label = 0;
  PairKind kind = PairKind::kTrue;
};

/// Synthetic entailment data from a dialog corpus. For every system turn:
/// a positive (history, true turn); a negative (history, system turn of a
/// different dialog naming a group word absent from the history); and, when
/// the true turn repeats a group word from the history, a negative with that
/// word swapped for a group member the history does not mention.
std::vector<LabeledPair> synthesize_entailment_pairs(
    const std::vector<DialogHistory>& dialogs,
    const std::vector<std::vector<std::string>>& contradiction_groups, std::uint64_t seed);

/// Whitespace-separated groups, one per line.
std::vector<std::vector<std::string>> read_word_groups(const std::filesystem::path& path);

}  // namespace kinject
