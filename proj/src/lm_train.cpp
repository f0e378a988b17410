#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kinject/errors.hpp"
#include "kinject/lm.hpp"

namespace kinject {
namespace {

struct SequenceCache {
  RowMatrix inputs;   // T x d embeddings
  RowMatrix prev;     // h_{t-1}
  RowMatrix reset;
  RowMatrix update;
  RowMatrix cand;
  RowMatrix states;   // h_t
};

Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& x) { return 1.0 / (1.0 + (-x).exp()); }

// Forward pass over seq[0..T-1] keeping everything backprop needs.
void forward_cached(const LMParams& params, std::span<const TokenId> seq, SequenceCache& c) {
  const auto d = static_cast<Eigen::Index>(params.hidden_size());
  const auto steps = static_cast<Eigen::Index>(seq.size() - 1);
  const auto w = params.embedding();
  const auto wx = params.input_weights();
  const auto uh = params.recurrent_weights();
  const auto b = params.gate_bias();

  c.inputs.resize(steps, d);
  for (Eigen::Index t = 0; t < steps; ++t) c.inputs.row(t) = w.row(seq[static_cast<std::size_t>(t)]);
  RowMatrix pre = c.inputs * wx.transpose();
  pre.rowwise() += b.transpose();

  c.prev.resize(steps, d);
  c.reset.resize(steps, d);
  c.update.resize(steps, d);
  c.cand.resize(steps, d);
  c.states.resize(steps, d);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(d);
  for (Eigen::Index t = 0; t < steps; ++t) {
    c.prev.row(t) = h.transpose();
    const Eigen::VectorXd rec = uh.topRows(2 * d) * h;
    const Eigen::ArrayXd r = sigmoid(pre.row(t).head(d).transpose().array() + rec.head(d).array());
    const Eigen::ArrayXd u =
        sigmoid(pre.row(t).segment(d, d).transpose().array() + rec.tail(d).array());
    const Eigen::VectorXd gated = (r * h.array()).matrix();
    const Eigen::ArrayXd cand =
        (pre.row(t).tail(d).transpose() + uh.bottomRows(d) * gated).array().tanh();
    h = ((1.0 - u) * h.array() + u * cand).matrix();
    c.reset.row(t) = r.transpose();
    c.update.row(t) = u.transpose();
    c.cand.row(t) = cand.transpose();
    c.states.row(t) = h.transpose();
  }
}

void check_sequence(const LMParams& params, std::span<const TokenId> seq) {
  if (seq.size() < 2) throw InvalidArgument("training sequence needs at least 2 tokens");
  check_tokens(params, seq);
}

}  // namespace

double sequence_nll(const LMParams& params, std::span<const TokenId> seq) {
  check_sequence(params, seq);
  SequenceCache c;
  forward_cached(params, seq, c);
  const RowMatrix logits = c.states * params.output_projection().transpose();
  double nll = 0.0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const Eigen::VectorXd lsm = log_softmax(logits.row(t).transpose());
    nll -= lsm(seq[static_cast<std::size_t>(t) + 1]);
  }
  return nll;
}

double sequence_nll_grad(const LMParams& params, std::span<const TokenId> seq,
                         std::span<double> grad) {
  check_sequence(params, seq);
  if (grad.size() != params.values().size()) throw InvalidArgument("gradient buffer size mismatch");
  const auto d = static_cast<Eigen::Index>(params.hidden_size());
  const auto vocab = static_cast<Eigen::Index>(params.vocab_size());
  const auto w = params.embedding();
  const auto wx = params.input_weights();
  const auto uh = params.recurrent_weights();

  SequenceCache c;
  forward_cached(params, seq, c);
  const auto steps = c.states.rows();

  RowMatrix dlogits = c.states * w.transpose();
  double nll = 0.0;
  for (Eigen::Index t = 0; t < steps; ++t) {
    const Eigen::VectorXd lsm = log_softmax(dlogits.row(t).transpose());
    const auto target = seq[static_cast<std::size_t>(t) + 1];
    nll -= lsm(target);
    dlogits.row(t) = lsm.array().exp().transpose();
    dlogits(t, target) -= 1.0;
  }

  // Views into the flat gradient buffer, same layout as LMParams.
  MatrixMap gw(grad.data(), vocab, d);
  MatrixMap gwx(grad.data() + vocab * d, 3 * d, d);
  MatrixMap guh(grad.data() + vocab * d + 3 * d * d, 3 * d, d);
  Eigen::Map<Eigen::VectorXd> gb(grad.data() + vocab * d + 6 * d * d, 3 * d);

  gw.noalias() += dlogits.transpose() * c.states;
  const RowMatrix dstates = dlogits * w;

  RowMatrix dpre(steps, 3 * d);
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(d);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const Eigen::ArrayXd dh = (dstates.row(t).transpose() + dh_next).array();
    const Eigen::ArrayXd prev = c.prev.row(t).transpose().array();
    const Eigen::ArrayXd r = c.reset.row(t).transpose().array();
    const Eigen::ArrayXd u = c.update.row(t).transpose().array();
    const Eigen::ArrayXd cand = c.cand.row(t).transpose().array();

    const Eigen::ArrayXd du = dh * (cand - prev);
    const Eigen::ArrayXd dcand_pre = dh * u * (1.0 - cand * cand);
    Eigen::ArrayXd dprev = dh * (1.0 - u);

    const Eigen::VectorXd gated = (r * prev).matrix();
    guh.bottomRows(d).noalias() += dcand_pre.matrix() * gated.transpose();
    const Eigen::ArrayXd dgated = (uh.bottomRows(d).transpose() * dcand_pre.matrix()).array();
    const Eigen::ArrayXd dr_pre = dgated * prev * r * (1.0 - r);
    dprev += dgated * r;
    const Eigen::ArrayXd du_pre = du * u * (1.0 - u);

    guh.topRows(d).noalias() += dr_pre.matrix() * prev.matrix().transpose();
    guh.middleRows(d, d).noalias() += du_pre.matrix() * prev.matrix().transpose();
    dprev += (uh.topRows(d).transpose() * dr_pre.matrix()).array() +
             (uh.middleRows(d, d).transpose() * du_pre.matrix()).array();

    dpre.row(t).head(d) = dr_pre.transpose();
    dpre.row(t).segment(d, d) = du_pre.transpose();
    dpre.row(t).tail(d) = dcand_pre.transpose();
    dh_next = dprev.matrix();
  }

  gwx.noalias() += dpre.transpose() * c.inputs;
  gb += dpre.colwise().sum().transpose();
  const RowMatrix dinputs = dpre * wx;
  for (Eigen::Index t = 0; t < steps; ++t) gw.row(seq[static_cast<std::size_t>(t)]) += dinputs.row(t);
  return nll;
}

double corpus_loss(const LMParams& params, const std::vector<TokenIds>& corpus) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& seq : corpus) {
    total += sequence_nll(params, seq);
    tokens += seq.size() - 1;
  }
  return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

TrainReport train_lm(LMParams& params, const std::vector<TokenIds>& corpus,
                     const TrainOptions& options,
                     const std::function<void(std::size_t, double)>& on_epoch) {
  if (corpus.empty()) throw InvalidArgument("training corpus is empty");
  for (const auto& seq : corpus) check_sequence(params, seq);

  TrainReport report;
  report.initial_loss = corpus_loss(params, corpus);
  if (options.epochs == 0) return report;

  auto values = params.values();
  const auto n = values.size();
  std::vector<double> grad(n), m(n, 0.0), v(n, 0.0);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  std::size_t step = 0;

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(options.seed);
  const auto batch = std::max<std::size_t>(1, options.batch_size);

  double lr = options.learning_rate;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch, lr *= options.lr_decay) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::fill(grad.begin(), grad.end(), 0.0);
      std::size_t tokens = 0;
      double loss = 0.0;
      const auto end = std::min(order.size(), start + batch);
      for (std::size_t k = start; k < end; ++k) {
        const auto& seq = corpus[order[k]];
        loss += sequence_nll_grad(params, seq, grad);
        tokens += seq.size() - 1;
      }
      const double scale = 1.0 / static_cast<double>(tokens);
      double norm2 = 0.0;
      for (auto& g : grad) {
        g *= scale;
        norm2 += g * g;
      }
      if (!std::isfinite(loss) || !std::isfinite(norm2)) {
        std::ostringstream msg;
        msg << "non-finite training loss or gradient at epoch " << epoch << ", batch starting "
            << start << " (loss " << loss << ", grad norm^2 " << norm2 << ")";
        throw NumericFailure(msg.str(), static_cast<std::ptrdiff_t>(epoch));
      }
      const double norm = std::sqrt(norm2);
      const double clip = (options.clip_norm > 0.0 && norm > options.clip_norm)
                              ? options.clip_norm / norm
                              : 1.0;
      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i] * clip;
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
        values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
      }
    }
    const double loss = corpus_loss(params, corpus);
    if (!std::isfinite(loss)) {
      throw NumericFailure("non-finite corpus loss after epoch " + std::to_string(epoch),
                           static_cast<std::ptrdiff_t>(epoch));
    }
    report.epoch_losses.push_back(loss);
    if (on_epoch) on_epoch(epoch, loss);
  }
  return report;
}

std::vector<std::vector<Segment>> read_lm_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open LM corpus: " + path.string());
  std::vector<std::vector<Segment>> corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.filename().string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.contains("segments") || !j["segments"].is_array()) {
      throw ParseError(where + ": expected a \"segments\" array");
    }
    std::vector<Segment> segments;
    for (const auto& s : j["segments"]) {
      const auto kind = s.value("kind", std::string{});
      Segment seg;
      if (kind == "text") {
        seg.kind = SegmentKind::kText;
      } else if (kind == "knowledge") {
        seg.kind = SegmentKind::kKnowledge;
      } else if (kind == "user") {
        seg.kind = SegmentKind::kUser;
      } else if (kind == "system") {
        seg.kind = SegmentKind::kSystem;
      } else {
        throw ParseError(where + ": unknown segment kind \"" + kind + "\"");
      }
      seg.text = s.value("text", std::string{});
      segments.push_back(std::move(seg));
    }
    corpus.push_back(std::move(segments));
  }
  return corpus;
}

TokenIds encode_training_sequence(const Vocab& vocab, const std::vector<Segment>& segments) {
  TokenIds ids{token::kBos};
  for (const auto& seg : segments) {
    const auto part = encode_segment(vocab, seg);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

}  // namespace kinject
