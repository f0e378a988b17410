#include "kinject/entailment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "binary_io.hpp"
#include "kinject/errors.hpp"

namespace kinject {
namespace {

constexpr char kHeadMagic[5] = "KENT";
constexpr double kProbFloor = 1e-12;

// log sigmoid(x), stable for large |x|.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double logit_of(const EntailmentHead& head, const Eigen::VectorXd& pooled,
                const Eigen::VectorXd& history) {
  return head.response_weights.dot(pooled) + head.history_weights.dot(history) + head.bias;
}

}  // namespace

EntailmentHead EntailmentHead::zeros(std::size_t hidden_size) {
  const auto d = static_cast<Eigen::Index>(hidden_size);
  return {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d), 0.0};
}

void EntailmentHead::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write entailment head: " + path.string());
  io::write_header(out, kHeadMagic, kFormatVersion);
  io::write_doubles(out, {response_weights.data(), static_cast<std::size_t>(response_weights.size())});
  io::write_doubles(out, {history_weights.data(), static_cast<std::size_t>(history_weights.size())});
  io::write_pod(out, bias);
}

EntailmentHead EntailmentHead::load(const std::filesystem::path& path, std::size_t expected_hidden) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open entailment head: " + path.string());
  io::check_header(in, kHeadMagic, kFormatVersion, path.string());
  const auto rw = io::read_doubles(in, "response weights");
  const auto hw = io::read_doubles(in, "history weights");
  if (rw.size() != hw.size() || (expected_hidden != 0 && rw.size() != expected_hidden)) {
    throw ArtifactError(path.string() + ": entailment head width does not match the model");
  }
  EntailmentHead head = zeros(rw.size());
  std::copy(rw.begin(), rw.end(), head.response_weights.data());
  std::copy(hw.begin(), hw.end(), head.history_weights.data());
  head.bias = io::read_pod<double>(in, "bias");
  return head;
}

Eigen::VectorXd history_embedding(const LMParams& params, std::span<const TokenId> history) {
  check_tokens(params, history);
  const auto w = params.embedding();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(w.cols());
  std::size_t count = 0;
  for (auto id : history) {
    if (Vocab::is_reserved(id)) continue;
    sum += w.row(id).transpose();
    ++count;
  }
  if (count > 0) sum /= static_cast<double>(count);
  return sum;
}

EntailOutput entail_prob(const EntailmentHead& head, const RowMatrix& z,
                         const Eigen::VectorXd& history_emb) {
  if (z.rows() == 0) throw InvalidArgument("entailment needs a non-empty hidden sequence");
  if (z.cols() != head.response_weights.size() || history_emb.size() != head.history_weights.size()) {
    throw InvalidArgument("entailment head width does not match hidden states");
  }
  const Eigen::VectorXd pooled = z.colwise().mean().transpose();
  const double logit = logit_of(head, pooled, history_emb);
  EntailOutput out;
  out.log_prob = log_sigmoid(logit);
  out.probability = std::clamp(sigmoid(logit), kProbFloor, 1.0 - kProbFloor);
  // d log sigmoid(a) / da = 1 - sigmoid(a); a depends on z_t through w_r / T.
  const double scale = sigmoid(-logit) / static_cast<double>(z.rows());
  out.grad_log_prob = (head.response_weights * scale).transpose().replicate(z.rows(), 1);
  return out;
}

EntailOutput entail_prob(const EntailmentHead& head, const LMParams& params, const HiddenSeq& z,
                         std::span<const TokenId> history) {
  return entail_prob(head, z.states, history_embedding(params, history));
}

EntailmentExample make_entailment_example(const LanguageModel& lm, const DialogHistory& history,
                                          const std::string& response, int label) {
  const auto context = encode_dialog_context(lm.vocab, history);
  auto reply = lm.vocab.encode_text(response);
  reply.push_back(token::kEos);
  EntailmentExample ex;
  ex.z = response_states(lm.params, context, reply).states;
  ex.history = history_embedding(lm.params, context);
  ex.label = label;
  return ex;
}

double entailment_loss(const EntailmentHead& head, std::span<const EntailmentExample> examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    const Eigen::VectorXd pooled = ex.z.colwise().mean().transpose();
    const double a = logit_of(head, pooled, ex.history);
    total -= ex.label ? log_sigmoid(a) : log_sigmoid(-a);
  }
  return total / static_cast<double>(examples.size());
}

double entailment_accuracy(const EntailmentHead& head, std::span<const EntailmentExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const Eigen::VectorXd pooled = ex.z.colwise().mean().transpose();
    const bool positive = logit_of(head, pooled, ex.history) > 0.0;
    if (positive == (ex.label != 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

EntailTrainReport train_entailment(EntailmentHead& head, std::span<const EntailmentExample> examples,
                                   const EntailTrainOptions& options) {
  if (examples.empty()) throw InvalidArgument("entailment training set is empty");
  const auto d = static_cast<Eigen::Index>(head.hidden_size());
  for (const auto& ex : examples) {
    if (ex.z.rows() == 0 || ex.z.cols() != d || ex.history.size() != d) {
      throw InvalidArgument("entailment example does not match head width");
    }
  }
  EntailTrainReport report;
  report.initial_loss = entailment_loss(head, examples);
  if (options.epochs == 0) return report;

  // Features are fixed, so pool once.
  const auto n = static_cast<Eigen::Index>(examples.size());
  Eigen::MatrixXd features(n, 2 * d + 1);
  Eigen::VectorXd labels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = examples[static_cast<std::size_t>(i)];
    features.row(i).head(d) = ex.z.colwise().mean();
    features.row(i).segment(d, d) = ex.history.transpose();
    features(i, 2 * d) = 1.0;
    labels(i) = ex.label ? 1.0 : 0.0;
  }
  Eigen::VectorXd theta(2 * d + 1);
  theta << head.response_weights, head.history_weights, head.bias;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const Eigen::VectorXd logits = features * theta;
    const Eigen::VectorXd probs = logits.unaryExpr([](double a) { return sigmoid(a); });
    Eigen::VectorXd grad = features.transpose() * (probs - labels) / static_cast<double>(n);
    grad.head(2 * d) += options.l2 * theta.head(2 * d);
    if (!grad.allFinite()) {
      throw NumericFailure("non-finite entailment gradient at epoch " + std::to_string(epoch),
                           static_cast<std::ptrdiff_t>(epoch));
    }
    const double t = static_cast<double>(epoch + 1);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad.cwiseProduct(grad);
    const Eigen::VectorXd mhat = m / (1.0 - std::pow(0.9, t));
    const Eigen::VectorXd vhat = v / (1.0 - std::pow(0.999, t));
    theta -= options.learning_rate * mhat.cwiseQuotient((vhat.array().sqrt() + 1e-8).matrix());

    head.response_weights = theta.head(d);
    head.history_weights = theta.segment(d, d);
    head.bias = theta(2 * d);
    report.epoch_losses.push_back(entailment_loss(head, examples));
  }
  return report;
}

std::string_view to_string(PairKind kind) {
  switch (kind) {
    case PairKind::kTrue:
      return "true";
    case PairKind::kUnrelated:
      return "unrelated";
    case PairKind::kContradiction:
      return "contradiction";
  }
  return "unknown";
}

std::vector<LabeledPair> synthesize_entailment_pairs(
    const std::vector<DialogHistory>& dialogs,
    const std::vector<std::vector<std::string>>& contradiction_groups, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::unordered_map<std::string, std::size_t> group_of;
  for (std::size_t g = 0; g < contradiction_groups.size(); ++g) {
    for (const auto& w : contradiction_groups[g]) group_of.emplace(w, g);
  }

  std::vector<std::pair<std::size_t, std::string>> system_turns;  // (dialog, text)
  for (std::size_t d = 0; d < dialogs.size(); ++d) {
    for (const auto& t : dialogs[d].turns) {
      if (t.speaker == Speaker::kSystem) system_turns.emplace_back(d, t.text);
    }
  }

  std::vector<LabeledPair> pairs;
  for (std::size_t d = 0; d < dialogs.size(); ++d) {
    const auto& turns = dialogs[d].turns;
    for (std::size_t i = 1; i < turns.size(); ++i) {
      if (turns[i].speaker != Speaker::kSystem) continue;
      DialogHistory history;
      history.turns.assign(turns.begin(), turns.begin() + static_cast<std::ptrdiff_t>(i));
      pairs.push_back({history, turns[i].text, 1, PairKind::kTrue});

      std::unordered_set<std::string> history_words;
      for (const auto& t : history.turns) {
        for (auto& w : tokenize(t.text)) history_words.insert(std::move(w));
      }
      // An unrelated turn must name a slot value the history never mentions.
      auto conflicts = [&](const std::string& text) {
        for (const auto& w : tokenize(text)) {
          if (group_of.count(w) && !history_words.count(w)) return true;
        }
        return false;
      };
      if (system_turns.size() > 1) {
        for (int attempt = 0; attempt < 64; ++attempt) {
          const auto& [other, text] = system_turns[rng() % system_turns.size()];
          if (other != d && text != turns[i].text && conflicts(text)) {
            pairs.push_back({history, text, 0, PairKind::kUnrelated});
            break;
          }
        }
      }

      // Contradictions replace a slot value the history states with another
      // member of its group that the history does not mention.
      auto words = tokenize(turns[i].text);
      std::vector<std::size_t> swappable;
      for (std::size_t k = 0; k < words.size(); ++k) {
        if (group_of.count(words[k]) && history_words.count(words[k])) swappable.push_back(k);
      }
      if (!swappable.empty()) {
        const auto k = swappable[rng() % swappable.size()];
        std::vector<std::string> options;
        for (const auto& w : contradiction_groups[group_of.at(words[k])]) {
          if (!history_words.count(w)) options.push_back(w);
        }
        if (!options.empty()) {
          words[k] = options[rng() % options.size()];
          pairs.push_back({history, join(words), 0, PairKind::kContradiction});
        }
      }
    }
  }
  return pairs;
}

std::vector<std::vector<std::string>> read_word_groups(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open word groups: " + path.string());
  std::vector<std::vector<std::string>> groups;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::vector<std::string> group;
    for (std::string w; words >> w;) group.push_back(w);
    if (!group.empty()) groups.push_back(std::move(group));
  }
  return groups;
}

}  // namespace kinject
