#include "kinject/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "kinject/errors.hpp"

namespace kinject {
namespace {

constexpr char kParamsMagic[5] = "KLMP";

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& x) { return 1.0 / (1.0 + (-x).exp()); }

}  // namespace

// ---- LMParams ---------------------------------------------------------------

LMParams::LMParams(std::size_t vocab_size, std::size_t hidden_size)
    : vocab_(vocab_size),
      hidden_(hidden_size),
      data_(vocab_size * hidden_size + 6 * hidden_size * hidden_size + 3 * hidden_size, 0.0) {
  if (vocab_size < 8) throw InvalidArgument("vocabulary must have at least 8 entries");
  if (hidden_size == 0) throw InvalidArgument("hidden size must be positive");
}

LMParams LMParams::random(std::size_t vocab_size, std::size_t hidden_size, std::uint64_t seed) {
  LMParams p(vocab_size, hidden_size);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  auto w = p.embedding();
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  auto wx = p.input_weights();
  for (Eigen::Index i = 0; i < wx.size(); ++i) wx.data()[i] = uniform(rng);
  auto uh = p.recurrent_weights();
  for (Eigen::Index i = 0; i < uh.size(); ++i) uh.data()[i] = uniform(rng);
  return p;
}

MatrixMap LMParams::embedding() {
  return {data_.data(), static_cast<Eigen::Index>(vocab_), static_cast<Eigen::Index>(hidden_)};
}
ConstMatrixMap LMParams::embedding() const {
  return {data_.data(), static_cast<Eigen::Index>(vocab_), static_cast<Eigen::Index>(hidden_)};
}
MatrixMap LMParams::input_weights() {
  return {data_.data() + offset_input(), static_cast<Eigen::Index>(3 * hidden_),
          static_cast<Eigen::Index>(hidden_)};
}
ConstMatrixMap LMParams::input_weights() const {
  return {data_.data() + offset_input(), static_cast<Eigen::Index>(3 * hidden_),
          static_cast<Eigen::Index>(hidden_)};
}
MatrixMap LMParams::recurrent_weights() {
  return {data_.data() + offset_recurrent(), static_cast<Eigen::Index>(3 * hidden_),
          static_cast<Eigen::Index>(hidden_)};
}
ConstMatrixMap LMParams::recurrent_weights() const {
  return {data_.data() + offset_recurrent(), static_cast<Eigen::Index>(3 * hidden_),
          static_cast<Eigen::Index>(hidden_)};
}
Eigen::Map<Eigen::VectorXd> LMParams::gate_bias() {
  return {data_.data() + offset_bias(), static_cast<Eigen::Index>(3 * hidden_)};
}
Eigen::Map<const Eigen::VectorXd> LMParams::gate_bias() const {
  return {data_.data() + offset_bias(), static_cast<Eigen::Index>(3 * hidden_)};
}

bool LMParams::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void LMParams::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write checkpoint: " + path.string());
  io::write_header(out, kParamsMagic, kFormatVersion);
  io::write_pod<std::uint64_t>(out, vocab_);
  io::write_pod<std::uint64_t>(out, hidden_);
  io::write_doubles(out, data_);
  if (!out) throw ArtifactError("failed writing checkpoint: " + path.string());
}

LMParams LMParams::load(const std::filesystem::path& path, std::size_t expected_vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open checkpoint: " + path.string());
  io::check_header(in, kParamsMagic, kFormatVersion, path.string());
  const auto vocab = io::read_pod<std::uint64_t>(in, "vocab size");
  const auto hidden = io::read_pod<std::uint64_t>(in, "hidden size");
  if (expected_vocab != 0 && vocab != expected_vocab) {
    throw ArtifactError(path.string() + ": checkpoint vocab size " + std::to_string(vocab) +
                        " does not match vocab file size " + std::to_string(expected_vocab));
  }
  LMParams p(vocab, hidden);
  auto values = io::read_doubles(in, "parameters");
  if (values.size() != p.data_.size()) {
    throw ArtifactError(path.string() + ": parameter count does not match shape header");
  }
  p.data_ = std::move(values);
  return p;
}

LanguageModel LanguageModel::load(const std::filesystem::path& vocab_path,
                                  const std::filesystem::path& params_path) {
  LanguageModel lm{Vocab::load(vocab_path), {}};
  lm.params = LMParams::load(params_path, lm.vocab.size());
  return lm;
}

// ---- Forward computations ---------------------------------------------------

void check_tokens(const LMParams& params, std::span<const TokenId> ids) {
  const auto v = static_cast<TokenId>(params.vocab_size());
  for (auto id : ids) {
    if (id < 0 || id >= v) {
      throw InvalidToken("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(v));
    }
  }
}

void gru_step(const LMParams& params, const RowMatrix& inputs, RowMatrix& state) {
  const auto d = static_cast<Eigen::Index>(params.hidden_size());
  const auto wx = params.input_weights();
  const auto uh = params.recurrent_weights();
  const auto b = params.gate_bias();

  RowMatrix pre = inputs * wx.transpose();
  pre.rowwise() += b.transpose();
  pre.leftCols(2 * d).noalias() += state * uh.topRows(2 * d).transpose();
  const Eigen::ArrayXXd reset = sigmoid(pre.leftCols(d).array());
  const Eigen::ArrayXXd update = sigmoid(pre.middleCols(d, d).array());
  const RowMatrix gated = (reset * state.array()).matrix();
  pre.rightCols(d).noalias() += gated * uh.bottomRows(d).transpose();
  const Eigen::ArrayXXd cand = pre.rightCols(d).array().tanh();
  state = ((1.0 - update) * state.array() + update * cand).matrix();
}

namespace {

RowMatrix zero_state(const LMParams& params, Eigen::Index rows = 1) {
  return RowMatrix::Zero(rows, static_cast<Eigen::Index>(params.hidden_size()));
}

// Runs ids from `state` in place, optionally recording each new state.
void run(const LMParams& params, std::span<const TokenId> ids, RowMatrix& state,
         RowMatrix* record = nullptr, Eigen::Index record_from = 0) {
  const auto w = params.embedding();
  RowMatrix input(1, w.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    input = w.row(ids[i]);
    gru_step(params, input, state);
    if (record) record->row(record_from + static_cast<Eigen::Index>(i)) = state.row(0);
  }
}

double logsumexp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

TokenIds with_bos(std::span<const TokenId> context) {
  TokenIds ids;
  ids.reserve(context.size() + 1);
  ids.push_back(token::kBos);
  ids.insert(ids.end(), context.begin(), context.end());
  return ids;
}

}  // namespace

Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  return logits.array() - logsumexp(logits);
}

ForwardResult forward(const LMParams& params, std::span<const TokenId> ids, double tau) {
  if (ids.empty()) throw InvalidArgument("forward needs a non-empty context");
  if (!(tau > 0.0)) throw InvalidArgument("temperature must be positive");
  check_tokens(params, ids);
  ForwardResult out;
  out.hidden.states.resize(static_cast<Eigen::Index>(ids.size()),
                           static_cast<Eigen::Index>(params.hidden_size()));
  RowMatrix state = zero_state(params);
  run(params, ids, state, &out.hidden.states);
  out.logits = (out.hidden.states * params.output_projection().transpose()) / tau;
  return out;
}

double log_prob(const LMParams& params, std::span<const TokenId> sequence,
                std::span<const TokenId> context) {
  if (sequence.empty()) throw InvalidArgument("log_prob needs a non-empty sequence");
  check_tokens(params, sequence);
  check_tokens(params, context);
  RowMatrix state = zero_state(params);
  const auto prefix = with_bos(context);
  run(params, prefix, state);
  const auto w = params.output_projection();
  double total = 0.0;
  RowMatrix input(1, w.cols());
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    const Eigen::VectorXd logits = w * state.row(0).transpose();
    total += logits(sequence[i]) - logsumexp(logits);
    if (i + 1 < sequence.size()) {
      input = w.row(sequence[i]);
      gru_step(params, input, state);
    }
  }
  return total;
}

HiddenSeq response_states(const LMParams& params, std::span<const TokenId> context,
                          std::span<const TokenId> response) {
  check_tokens(params, context);
  check_tokens(params, response);
  HiddenSeq out;
  out.states.resize(static_cast<Eigen::Index>(response.size()),
                    static_cast<Eigen::Index>(params.hidden_size()));
  if (response.empty()) return out;
  RowMatrix state = zero_state(params);
  run(params, with_bos(context), state);
  out.states.row(0) = state.row(0);
  run(params, response.first(response.size() - 1), state, &out.states, 1);
  return out;
}

Decoded greedy_decode(const LMParams& params, std::span<const TokenId> context, std::size_t max_len,
                      double tau) {
  if (max_len == 0) throw InvalidArgument("max_len must be >= 1");
  if (!(tau > 0.0)) throw InvalidArgument("temperature must be positive");
  check_tokens(params, context);
  RowMatrix state = zero_state(params);
  run(params, with_bos(context), state);
  const auto w = params.output_projection();
  Decoded out;
  std::vector<Eigen::VectorXd> rows;
  RowMatrix input(1, w.cols());
  for (std::size_t step = 0; step < max_len; ++step) {
    const Eigen::VectorXd logits = (w * state.row(0).transpose()) / tau;
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    rows.emplace_back(state.row(0).transpose());
    out.tokens.push_back(static_cast<TokenId>(best));
    if (best == token::kEos) break;
    input = w.row(best);
    gru_step(params, input, state);
  }
  out.hidden.states.resize(static_cast<Eigen::Index>(rows.size()), w.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.hidden.states.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return out;
}

double uniform01(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

std::size_t nucleus_pick(const Eigen::Ref<const Eigen::VectorXd>& probs, double p,
                         double uniform) {
  std::vector<std::size_t> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto pa = probs(static_cast<Eigen::Index>(a));
    const auto pb = probs(static_cast<Eigen::Index>(b));
    return pa != pb ? pa > pb : a < b;
  });
  std::size_t keep = order.size();
  double mass = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    mass += probs(static_cast<Eigen::Index>(order[i]));
    if (mass >= p) {
      keep = i + 1;
      break;
    }
  }
  if (keep == order.size()) {
    mass = 0.0;
    for (auto i : order) mass += probs(static_cast<Eigen::Index>(i));
  }
  const double target = uniform * mass;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cumulative += probs(static_cast<Eigen::Index>(order[i]));
    if (target < cumulative) return order[i];
  }
  return order[keep - 1];
}

TokenIds sample_nucleus(const LMParams& params, std::span<const TokenId> context, double p,
                        std::size_t max_len, std::uint64_t seed, double tau) {
  if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("nucleus p must be in (0, 1]");
  if (max_len == 0) throw InvalidArgument("max_len must be >= 1");
  if (!(tau > 0.0)) throw InvalidArgument("temperature must be positive");
  check_tokens(params, context);
  std::mt19937_64 rng(seed);
  RowMatrix state = zero_state(params);
  run(params, with_bos(context), state);
  const auto w = params.output_projection();
  TokenIds out;
  RowMatrix input(1, w.cols());
  for (std::size_t step = 0; step < max_len; ++step) {
    const Eigen::VectorXd logits = (w * state.row(0).transpose()) / tau;
    const Eigen::VectorXd probs = log_softmax(logits).array().exp();
    const auto tok = static_cast<TokenId>(nucleus_pick(probs, p, uniform01(rng())));
    out.push_back(tok);
    if (tok == token::kEos) break;
    input = w.row(tok);
    gru_step(params, input, state);
  }
  return out;
}

RowMatrix prefix_states(const LMParams& params, const std::vector<TokenIds>& prefixes) {
  const auto n = static_cast<Eigen::Index>(prefixes.size());
  RowMatrix out = zero_state(params, n);
  if (n == 0) return out;
  std::size_t longest = 0;
  for (const auto& p : prefixes) {
    check_tokens(params, p);
    longest = std::max(longest, p.size());
  }
  // Step t feeds <bos> (t = 0) or prefix[t - 1] to rows that still have input.
  std::vector<Eigen::Index> active;
  RowMatrix batch_state;
  RowMatrix inputs;
  const auto w = params.embedding();
  for (std::size_t t = 0; t <= longest; ++t) {
    active.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (t == 0 || prefixes[static_cast<std::size_t>(i)].size() >= t) active.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(active.size());
    batch_state.resize(m, w.cols());
    inputs.resize(m, w.cols());
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto i = active[static_cast<std::size_t>(k)];
      batch_state.row(k) = out.row(i);
      const TokenId tok = t == 0 ? token::kBos : prefixes[static_cast<std::size_t>(i)][t - 1];
      inputs.row(k) = w.row(tok);
    }
    gru_step(params, inputs, batch_state);
    for (Eigen::Index k = 0; k < m; ++k) out.row(active[static_cast<std::size_t>(k)]) = batch_state.row(k);
  }
  return out;
}

std::vector<double> continuation_log_probs(const LMParams& params, const RowMatrix& start_states,
                                           const std::vector<TokenIds>& seqs) {
  const auto n = seqs.size();
  const bool broadcast = start_states.rows() == 1;
  if (!broadcast && static_cast<std::size_t>(start_states.rows()) != n) {
    throw InvalidArgument("start_states must have one row or one row per sequence");
  }
  std::vector<double> totals(n, 0.0);
  if (n == 0) return totals;
  std::size_t longest = 0;
  for (const auto& s : seqs) {
    check_tokens(params, s);
    longest = std::max(longest, s.size());
  }
  const auto w = params.output_projection();
  RowMatrix states(static_cast<Eigen::Index>(n), w.cols());
  for (std::size_t i = 0; i < n; ++i) {
    states.row(static_cast<Eigen::Index>(i)) =
        start_states.row(broadcast ? 0 : static_cast<Eigen::Index>(i));
  }
  std::vector<std::size_t> active;
  RowMatrix batch_state;
  RowMatrix inputs;
  for (std::size_t t = 0; t < longest; ++t) {
    active.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (seqs[i].size() > t) active.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(active.size());
    batch_state.resize(m, w.cols());
    for (Eigen::Index k = 0; k < m; ++k) {
      batch_state.row(k) = states.row(static_cast<Eigen::Index>(active[static_cast<std::size_t>(k)]));
    }
    const RowMatrix logits = batch_state * w.transpose();
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto i = active[static_cast<std::size_t>(k)];
      const Eigen::VectorXd row = logits.row(k).transpose();
      totals[i] += row(seqs[i][t]) - logsumexp(row);
    }
    // Advance only sequences with a next token to predict.
    std::vector<Eigen::Index> advance;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (seqs[active[static_cast<std::size_t>(k)]].size() > t + 1) advance.push_back(k);
    }
    if (advance.empty()) continue;
    const auto a = static_cast<Eigen::Index>(advance.size());
    RowMatrix adv_state(a, w.cols());
    inputs.resize(a, w.cols());
    for (Eigen::Index j = 0; j < a; ++j) {
      const auto i = active[static_cast<std::size_t>(advance[static_cast<std::size_t>(j)])];
      adv_state.row(j) = batch_state.row(advance[static_cast<std::size_t>(j)]);
      inputs.row(j) = w.row(seqs[i][t]);
    }
    gru_step(params, inputs, adv_state);
    for (Eigen::Index j = 0; j < a; ++j) {
      const auto i = active[static_cast<std::size_t>(advance[static_cast<std::size_t>(j)])];
      states.row(static_cast<Eigen::Index>(i)) = adv_state.row(j);
    }
  }
  return totals;
}

// ---- Serialization helpers ----------------------------------------------------

TokenIds encode_segment(const Vocab& vocab, const Segment& segment) {
  TokenIds ids;
  switch (segment.kind) {
    case SegmentKind::kUser:
      ids.push_back(token::kSpeakerUser);
      break;
    case SegmentKind::kSystem:
      ids.push_back(token::kSpeakerSystem);
      break;
    default:
      break;
  }
  const auto words = vocab.encode_text(segment.text);
  ids.insert(ids.end(), words.begin(), words.end());
  ids.push_back(segment.kind == SegmentKind::kKnowledge ? token::kKnowledgeSep : token::kEos);
  return ids;
}

TokenIds encode_history(const Vocab& vocab, const DialogHistory& history) {
  TokenIds ids;
  for (const auto& turn : history.turns) {
    const auto seg = encode_segment(
        vocab, {turn.speaker == Speaker::kUser ? SegmentKind::kUser : SegmentKind::kSystem,
                turn.text});
    ids.insert(ids.end(), seg.begin(), seg.end());
  }
  return ids;
}

TokenIds encode_dialog_context(const Vocab& vocab, const DialogHistory& history) {
  auto ids = encode_history(vocab, history);
  ids.push_back(token::kSpeakerSystem);
  return ids;
}

TokenIds encode_knowledge_prefix(const Vocab& vocab, const TokenSeq& words) {
  auto ids = vocab.encode(words);
  ids.push_back(token::kKnowledgeSep);
  return ids;
}

TokenSeq render_response(const Vocab& vocab, std::span<const TokenId> tokens) {
  auto end = std::find(tokens.begin(), tokens.end(), token::kEos);
  return vocab.decode(std::span<const TokenId>(tokens.begin(), end));
}

}  // namespace kinject
