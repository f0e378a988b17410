#include <doctest.h>

#include <cmath>
#include <vector>

#include "kinject/errors.hpp"
#include "kinject/lm.hpp"
#include "kinject/vocab.hpp"
#include "support.hpp"

using namespace kinject;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop GRU: returns the state after each id and the logits W h.
struct NaiveRun {
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> logits;
};

NaiveRun naive_forward(const LMParams& p, const TokenIds& ids) {
  const auto d = static_cast<Eigen::Index>(p.hidden_size());
  const auto V = static_cast<Eigen::Index>(p.vocab_size());
  const auto W = p.embedding();
  const auto Wx = p.input_weights();
  const auto Uh = p.recurrent_weights();
  const auto b = p.gate_bias();
  std::vector<double> h(static_cast<std::size_t>(d), 0.0);
  NaiveRun out;
  for (TokenId id : ids) {
    std::vector<double> r(h.size()), u(h.size()), c(h.size()), next(h.size());
    for (Eigen::Index i = 0; i < d; ++i) {
      double ar = b(i), au = b(d + i);
      for (Eigen::Index j = 0; j < d; ++j) {
        ar += Wx(i, j) * W(id, j) + Uh(i, j) * h[static_cast<std::size_t>(j)];
        au += Wx(d + i, j) * W(id, j) + Uh(d + i, j) * h[static_cast<std::size_t>(j)];
      }
      r[static_cast<std::size_t>(i)] = sig(ar);
      u[static_cast<std::size_t>(i)] = sig(au);
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      double ac = b(2 * d + i);
      for (Eigen::Index j = 0; j < d; ++j)
        ac += Wx(2 * d + i, j) * W(id, j) + Uh(2 * d + i, j) * r[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(j)];
      c[static_cast<std::size_t>(i)] = std::tanh(ac);
    }
    for (std::size_t i = 0; i < h.size(); ++i) next[i] = (1.0 - u[i]) * h[i] + u[i] * c[i];
    h = next;
    std::vector<double> lg(static_cast<std::size_t>(V), 0.0);
    for (Eigen::Index v = 0; v < V; ++v)
      for (Eigen::Index j = 0; j < d; ++j) lg[static_cast<std::size_t>(v)] += W(v, j) * h[static_cast<std::size_t>(j)];
    out.states.push_back(h);
    out.logits.push_back(lg);
  }
  return out;
}

TokenIds concat(TokenIds a, const TokenIds& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_SUITE("tiny-lm") {

TEST_CASE("zero parameters give a uniform softmax") {
  const LMParams p(20, 8);
  const auto out = forward(p, TokenIds{1, 7, 9, 3});
  for (Eigen::Index t = 0; t < out.logits.rows(); ++t) {
    CHECK(out.logits.row(t).maxCoeff() == out.logits.row(t).minCoeff());
    const Eigen::VectorXd probs = log_softmax(out.logits.row(t).transpose()).array().exp();
    for (Eigen::Index v = 0; v < probs.size(); ++v) CHECK(probs(v) == doctest::Approx(1.0 / 20.0).epsilon(1e-15));
  }
}

TEST_CASE("uniform model log_prob is L ln(1/V)") {
  const LMParams p(50, 8);
  for (std::size_t L = 1; L <= 40; ++L) {
    TokenIds seq(L, 9);
    CHECK(std::abs(log_prob(p, seq, TokenIds{4, 12}) - static_cast<double>(L) * std::log(1.0 / 50.0)) <= 1e-12);
  }
}

TEST_CASE("forward matches a scalar-loop recomputation") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = test::random_params(15, 6, seed);
    test::Rng rng(seed);
    const auto ids = test::random_tokens(rng, 15, 9);
    const auto out = forward(p, ids);
    const auto oracle = naive_forward(p, ids);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (Eigen::Index j = 0; j < 6; ++j)
        CHECK(std::abs(out.hidden.states(static_cast<Eigen::Index>(t), j) - oracle.states[t][static_cast<std::size_t>(j)]) <= 1e-10);
      for (Eigen::Index v = 0; v < 15; ++v)
        CHECK(std::abs(out.logits(static_cast<Eigen::Index>(t), v) - oracle.logits[t][static_cast<std::size_t>(v)]) <= 1e-10);
    }
  }
}

TEST_CASE("temperature divides the logits") {
  const auto p = test::random_params(12, 5, 3);
  const auto a = forward(p, TokenIds{1, 8, 9}, 1.0);
  const auto b = forward(p, TokenIds{1, 8, 9}, 2.0);
  CHECK((a.logits / 2.0 - b.logits).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("forward on the trained model is finite and deterministic") {
  const auto& lm = test::trained_model();
  const auto a = forward(lm.params, TokenIds{token::kBos});
  const auto b = forward(lm.params, TokenIds{token::kBos});
  CHECK(a.logits.allFinite());
  Eigen::Index ia = 0, ib = 0;
  a.logits.row(0).maxCoeff(&ia);
  b.logits.row(0).maxCoeff(&ib);
  CHECK(ia == ib);
  CHECK(a.logits == b.logits);
}

TEST_CASE("out-of-range and empty inputs are rejected") {
  const LMParams p(10, 4);
  CHECK_THROWS_AS(forward(p, TokenIds{1, 10}), InvalidToken);
  CHECK_THROWS_AS(forward(p, TokenIds{-1}), InvalidToken);
  CHECK_THROWS_AS(forward(p, TokenIds{}), InvalidArgument);
  CHECK_THROWS_AS(log_prob(p, TokenIds{}, TokenIds{1}), InvalidArgument);
  CHECK_THROWS_AS(LMParams(7, 4), InvalidArgument);
}

TEST_CASE("embedding and output projection share storage") {
  auto p = test::random_params(12, 4, 9);
  p.embedding()(3, 2) = 42.0;
  CHECK(p.output_projection()(3, 2) == 42.0);
  CHECK(p.output_projection().data() == p.embedding().data());
}

TEST_CASE("softmax rows sum to one") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = test::random_params(30, 8, seed, 2.0);
    test::Rng rng(seed);
    const auto out = forward(p, test::random_tokens(rng, 30, 12));
    for (Eigen::Index t = 0; t < out.logits.rows(); ++t)
      CHECK(std::abs(log_softmax(out.logits.row(t).transpose()).array().exp().sum() - 1.0) <= 1e-9);
  }
}

TEST_CASE("log_prob is nonpositive and obeys the chain rule") {
  const auto& lm = test::trained_model();
  test::Rng rng(31);
  const auto V = lm.params.vocab_size();
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = test::random_tokens(rng, V, 1 + rng.index(6));
    const auto a = test::random_tokens(rng, V, 1 + rng.index(5));
    const auto b = test::random_tokens(rng, V, 1 + rng.index(5));
    const double whole = log_prob(lm.params, concat(a, b), c);
    CHECK(whole <= 0.0);
    CHECK(std::abs(whole - (log_prob(lm.params, a, c) + log_prob(lm.params, b, concat(c, a)))) <= 1e-9);
  }
}

TEST_CASE("greedy decoding: length bound, determinism and replay") {
  const auto& lm = test::trained_model();
  const auto context = encode_dialog_context(lm.vocab, test::fixture_dialogs().at(0));
  CHECK(greedy_decode(lm.params, context, 1).tokens.size() == 1);

  const auto a = greedy_decode(lm.params, context, 100);
  const auto b = greedy_decode(lm.params, context, 100);
  CHECK(a.tokens == b.tokens);
  CHECK(a.hidden.states == b.hidden.states);
  REQUIRE(a.hidden.length() == a.tokens.size());
  CHECK(a.tokens.back() == token::kEos);

  const auto replay = response_states(lm.params, context, a.tokens);
  CHECK((replay.states - a.hidden.states).cwiseAbs().maxCoeff() <= 1e-10);
  // each token is the argmax of the replayed logits
  const RowMatrix logits = replay.states * lm.params.output_projection().transpose();
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::Index best = 0;
    logits.row(t).maxCoeff(&best);
    CHECK(best == a.tokens[static_cast<std::size_t>(t)]);
  }
}

TEST_CASE("nucleus sampling at p = 1 follows the softmax") {
  const auto p = test::random_params(12, 6, 4, 0.8);
  const TokenIds context{4, 9, 10};
  const auto probs = Eigen::VectorXd(log_softmax(forward(p, TokenIds{1, 4, 9, 10}).logits.bottomRows(1).transpose()).array().exp());
  const int draws = 10000;
  std::vector<int> counts(12, 0);
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_nucleus(p, context, 1.0, 1, static_cast<std::uint64_t>(i)).at(0))];
  for (Eigen::Index v = 0; v < 12; ++v) {
    const double mean = draws * probs(v);
    const double sd = std::sqrt(draws * probs(v) * (1.0 - probs(v)));
    CHECK(std::abs(counts[static_cast<std::size_t>(v)] - mean) <= 3.0 * sd + 1e-9);
  }
}

TEST_CASE("nucleus sampling: tiny p is greedy, seeds reproduce, p is checked") {
  const auto& lm = test::trained_model();
  const auto context = encode_dialog_context(lm.vocab, test::fixture_dialogs().at(3));
  const auto greedy = greedy_decode(lm.params, context, 40);
  for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(sample_nucleus(lm.params, context, 1e-9, 40, seed) == greedy.tokens);
  CHECK(sample_nucleus(lm.params, context, 0.95, 40, 77) == sample_nucleus(lm.params, context, 0.95, 40, 77));
  CHECK_THROWS_AS(sample_nucleus(lm.params, context, 0.0, 40, 1), InvalidArgument);
  CHECK_THROWS_AS(sample_nucleus(lm.params, context, 1.5, 40, 1), InvalidArgument);
}

TEST_CASE("nucleus pick keeps the smallest prefix reaching p") {
  Eigen::VectorXd probs(4);
  probs << 0.1, 0.5, 0.3, 0.1;
  CHECK(nucleus_pick(probs, 0.5, 0.999) == 1);
  // nucleus {1, 2} with mass 0.8: draws below 0.625 pick 1
  CHECK(nucleus_pick(probs, 0.6, 0.6) == 1);
  CHECK(nucleus_pick(probs, 0.6, 0.7) == 2);
  CHECK(uniform01(0) == 0.0);
  CHECK(uniform01(~std::uint64_t{0}) < 1.0);
}

TEST_CASE("batched prefix scoring matches log_prob") {
  const auto& lm = test::trained_model();
  test::Rng rng(8);
  std::vector<TokenIds> prefixes, seqs;
  for (int i = 0; i < 6; ++i) {
    prefixes.push_back(test::random_tokens(rng, lm.params.vocab_size(), 1 + rng.index(5)));
    seqs.push_back(test::random_tokens(rng, lm.params.vocab_size(), rng.index(6)));
  }
  const auto states = prefix_states(lm.params, prefixes);
  const auto scores = continuation_log_probs(lm.params, states, seqs);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const double expected = seqs[i].empty() ? 0.0 : log_prob(lm.params, seqs[i], prefixes[i]);
    CHECK(std::abs(scores[i] - expected) <= 1e-9);
  }
}

TEST_CASE("training: zero epochs is a no-op and one epoch lowers the loss") {
  const std::vector<TokenIds> corpus = {{1, 7, 8, 9, 2}, {1, 9, 8, 7, 10, 2}};
  auto p = LMParams::random(12, 8, 3);
  const auto before = std::vector<double>(p.values().begin(), p.values().end());
  TrainOptions opts;
  opts.epochs = 0;
  train_lm(p, corpus, opts);
  CHECK(std::equal(before.begin(), before.end(), p.values().begin()));

  opts.epochs = 1;
  opts.batch_size = 1;
  opts.learning_rate = 0.01;
  opts.seed = 3;
  const auto report = train_lm(p, corpus, opts);
  REQUIRE(report.epoch_losses.size() == 1);
  CHECK(report.epoch_losses[0] < report.initial_loss);
}

TEST_CASE("sequence_nll agrees with log_prob") {
  const auto& lm = test::trained_model();
  const auto seq = encode_training_sequence(lm.vocab, {{SegmentKind::kUser, "i want cheap food"}});
  const TokenIds body(seq.begin() + 1, seq.end());
  CHECK(std::abs(sequence_nll(lm.params, seq) + log_prob(lm.params, body, TokenIds{})) <= 1e-9);
}

TEST_CASE("training loss gradient matches finite differences on a parameter sample") {
  const auto& lm = test::trained_model();
  const auto& dialogs = test::fixture_dialogs();
  auto params = lm.params;
  const auto n = params.values().size();
  for (std::size_t inst = 0; inst < 5; ++inst) {
    const auto seq = concat(TokenIds{token::kBos}, encode_history(lm.vocab, dialogs.at(inst)));
    std::vector<double> grad(n, 0.0);
    sequence_nll_grad(params, seq, grad);
    test::Rng rng(100 + inst);
    const std::size_t sample = n / 100;
    Eigen::VectorXd analytic(static_cast<Eigen::Index>(sample)), numeric(static_cast<Eigen::Index>(sample));
    for (std::size_t s = 0; s < sample; ++s) {
      const auto i = rng.index(n);
      const double orig = params.values()[i];
      params.values()[i] = orig + test::kFdEpsilon;
      const double up = sequence_nll(params, seq);
      params.values()[i] = orig - test::kFdEpsilon;
      const double down = sequence_nll(params, seq);
      params.values()[i] = orig;
      analytic(static_cast<Eigen::Index>(s)) = grad[i];
      numeric(static_cast<Eigen::Index>(s)) = (up - down) / (2.0 * test::kFdEpsilon);
    }
    CHECK(test::relative_error(analytic, numeric) <= 1e-3);
  }
}

TEST_CASE("checkpoints round trip and check their shape") {
  test::TempDir dir;
  const auto p = test::random_params(16, 4, 2);
  p.save(dir / "m.bin");
  const auto q = LMParams::load(dir / "m.bin", 16);
  CHECK(std::equal(p.values().begin(), p.values().end(), q.values().begin(), q.values().end()));
  CHECK_THROWS_AS(LMParams::load(dir / "m.bin", 17), ArtifactError);
  CHECK_THROWS_AS(LMParams::load(dir / "none.bin"), ArtifactError);
}

}  // TEST_SUITE

TEST_SUITE("vocab") {

TEST_CASE("reserved ids come first") {
  const Vocab v;
  CHECK(v.size() == static_cast<std::size_t>(token::kFirstWordId));
  CHECK(v.id("never-seen") == token::kUnk);
  for (TokenId id = 0; id < token::kFirstWordId; ++id) CHECK(Vocab::is_reserved(id));
}

TEST_CASE("build orders by frequency then alphabetically") {
  const std::vector<TokenSeq> corpus = {{"b", "a", "c", "a"}, {"c", "d"}};
  const auto v = Vocab::build(corpus);
  CHECK(v.token(token::kFirstWordId) == "a");
  CHECK(v.token(token::kFirstWordId + 1) == "c");
  CHECK(v.token(token::kFirstWordId + 2) == "b");
  CHECK(v.token(token::kFirstWordId + 3) == "d");
  CHECK(Vocab::build(corpus, 2).size() == static_cast<std::size_t>(token::kFirstWordId) + 2);
}

TEST_CASE("encode, decode and file round trip") {
  const std::vector<TokenSeq> corpus = {{"cheap", "food"}, {"food", "here"}};
  const auto v = Vocab::build(corpus);
  const auto ids = v.encode_text("Cheap food, nowhere");
  CHECK(ids.back() == token::kUnk);
  TokenIds with_reserved = ids;
  with_reserved.push_back(token::kEos);
  CHECK(v.decode(with_reserved) == TokenSeq{"cheap", "food"});

  test::TempDir dir;
  v.save(dir / "v.txt");
  const auto w = Vocab::load(dir / "v.txt");
  CHECK(w.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(w.token(static_cast<TokenId>(i)) == v.token(static_cast<TokenId>(i)));
}

TEST_CASE("dialog serialization") {
  const auto& lm = test::trained_model();
  const auto& v = lm.vocab;
  DialogHistory h{{{Speaker::kUser, "hello there"}, {Speaker::kSystem, "hi"}}};
  const auto hist = encode_history(v, h);
  const TokenIds expected = {token::kSpeakerUser, v.id("hello"), v.id("there"), token::kEos,
                             token::kSpeakerSystem, v.id("hi"), token::kEos};
  CHECK(hist == expected);
  const auto ctx = encode_dialog_context(v, h);
  CHECK(ctx == concat(expected, TokenIds{token::kSpeakerSystem}));
  CHECK(encode_knowledge_prefix(v, {"cheap", "food"}) == TokenIds{v.id("cheap"), v.id("food"), token::kKnowledgeSep});
  CHECK(render_response(v, TokenIds{v.id("cheap"), token::kEos, v.id("food")}) == TokenSeq{"cheap"});
}

}  // TEST_SUITE
