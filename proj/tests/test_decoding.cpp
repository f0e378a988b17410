#include <doctest.h>

#include <cmath>

#include "kinject/decoding.hpp"
#include "kinject/errors.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace kinject;

namespace {

struct Setup {
  TokenIds context;
  Decoded initial;
  TokenIds knowledge;
};

Setup setup_for(std::size_t dialog, const std::string& snippet) {
  const auto& lm = test::trained_model();
  Setup s;
  s.context = encode_dialog_context(lm.vocab, test::fixture_dialogs().at(dialog));
  s.initial = greedy_decode(lm.params, s.context, 100);
  s.knowledge = lm.vocab.encode_text(snippet);
  return s;
}

}  // namespace

TEST_SUITE("constrained-decoding") {

TEST_CASE("uniform logits give ln V cross entropy") {
  const LMParams p(8, 3);
  const RowMatrix z = RowMatrix::Ones(4, 3);
  const auto f = fidelity_loss(p, TokenIds{1, 0, 7}, z);
  CHECK(f.value == doctest::Approx(std::log(8.0)).epsilon(1e-15));
  CHECK(f.grad.isZero());
}

TEST_CASE("aligned states drive the cross entropy to zero") {
  LMParams p(8, 2);
  auto w = p.embedding();
  w.setConstant(-1.0);
  w.row(0) << 1, 0;
  w.row(1) << 0, 1;
  RowMatrix z(2, 2);
  z << 20, 0, 0, 20;
  CHECK(fidelity_loss(p, TokenIds{0, 1}, z).value < 0.01);
  CHECK(fidelity_loss(p, TokenIds{1, 0}, z).value > 10.0);
}

TEST_CASE("fidelity gradient matches finite differences and ignores extra rows") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    test::Rng rng(seed);
    const auto p = test::random_params(15, 6, seed);
    const auto k = test::random_tokens(rng, 15, 2 + rng.index(4));
    const auto z = test::random_states(rng, 3 + rng.index(4), 6);
    const auto f = fidelity_loss(p, k, z);
    const auto numeric = test::numeric_gradient([&](const RowMatrix& zz) { return fidelity_loss(p, k, zz).value; }, z);
    CHECK(test::relative_error(test::flatten(f.grad), test::flatten(numeric)) <= 1e-3);
    RowMatrix g;
    CHECK(std::abs(f.value - test::oracle_fidelity(p, k, z, &g)) <= 1e-12);
    CHECK((f.grad - g).cwiseAbs().maxCoeff() <= 1e-12);
    for (auto t = static_cast<Eigen::Index>(k.size()); t < z.rows(); ++t) CHECK(f.grad.row(t).isZero());
  }
  CHECK_THROWS_AS(fidelity_loss(LMParams(8, 2), TokenIds{}, RowMatrix::Ones(1, 2)), InvalidArgument);
  CHECK_THROWS_AS(fidelity_loss(LMParams(8, 2), TokenIds{1}, RowMatrix(0, 2)), InvalidArgument);
}

TEST_CASE("objective: zero weights, linearity and gradient") {
  test::Rng rng(7);
  const auto p = test::random_params(12, 5, 7);
  const auto head = test::random_head(rng, 5);
  const Eigen::VectorXd hist = test::random_states(rng, 1, 5).row(0).transpose();
  const auto k = test::random_tokens(rng, 12, 3);
  const auto z = test::random_states(rng, 4, 5);

  const auto none = total_objective(p, head, hist, k, z, 0.0, 0.0);
  CHECK(none.value == 0.0);
  CHECK(none.grad.isZero());

  const auto ent = total_objective(p, head, hist, k, z, 1.0, 0.0);
  const auto fid = total_objective(p, head, hist, k, z, 0.0, 1.0);
  const auto mix = total_objective(p, head, hist, k, z, 0.3, 2.5);
  CHECK(ent.value == doctest::Approx(entail_prob(head, z, hist).log_prob));
  CHECK(fid.value == doctest::Approx(-fidelity_loss(p, k, z).value));
  CHECK(mix.value == doctest::Approx(0.3 * ent.value + 2.5 * fid.value).epsilon(1e-12));
  CHECK((mix.grad - (0.3 * ent.grad + 2.5 * fid.grad)).cwiseAbs().maxCoeff() <= 1e-12);

  const auto numeric = test::numeric_gradient(
      [&](const RowMatrix& zz) { return total_objective(p, head, hist, k, zz, 0.3, 2.5).value; }, z);
  CHECK(test::relative_error(test::flatten(mix.grad), test::flatten(numeric)) <= 1e-3);
}

TEST_CASE("backward pass moves each row by the step size") {
  test::Rng rng(2);
  const auto z = test::random_states(rng, 5, 4);
  auto g = test::random_states(rng, 5, 4);
  g.row(2).setZero();
  const auto moved = backward_pass(z, g, 0.3);
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    const double shift = (moved.row(t) - z.row(t)).norm();
    CHECK(shift == doctest::Approx(t == 2 ? 0.0 : 0.3).epsilon(1e-12));
    if (t != 2) CHECK((moved.row(t) - z.row(t)).dot(g.row(t)) > 0.0);
  }
  CHECK(backward_pass(z, RowMatrix::Zero(5, 4), 0.3) == z);
  g(1, 1) = std::nan("");
  try {
    backward_pass(z, g, 0.3, 4);
    FAIL("expected NumericFailure");
  } catch (const NumericFailure& e) {
    CHECK(e.iteration() == 4);
  }
}

TEST_CASE("forward pass on model states is a fixed point") {
  const auto& lm = test::trained_model();
  for (std::size_t d = 0; d < 5; ++d) {
    const auto s = setup_for(d, "cheap food");
    const auto fw = forward_pass(lm.params, s.context, s.initial.hidden.states);
    CHECK(fw.tokens == s.initial.tokens);
    CHECK(fw.states.rows() == s.initial.hidden.states.rows());
    CHECK((fw.states - s.initial.hidden.states).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("injection with zero weights or zero iterations returns the initial response") {
  const auto& lm = test::trained_model();
  const auto s = setup_for(3, "the museum has free entry");
  DecodeConfig cfg;
  cfg.alpha = 0.0;
  cfg.lambda = 0.0;
  const auto still = inject(lm.params, test::trained_head(), s.context, s.initial, s.knowledge, cfg);
  CHECK(still.tokens == s.initial.tokens);
  CHECK(still.trace.iterations.size() == cfg.iterations);

  DecodeConfig none;
  none.iterations = 0;
  const auto same = inject(lm.params, test::trained_head(), s.context, s.initial, s.knowledge, none);
  CHECK(same.tokens == s.initial.tokens);
  CHECK(same.hidden.states == s.initial.hidden.states);
  CHECK(same.hidden.origin == HiddenOrigin::kModelDecoded);
  CHECK(same.trace.iterations.empty());
}

TEST_CASE("one iteration mixes the perturbed and replayed states") {
  const auto& lm = test::trained_model();
  const auto& head = test::trained_head();
  const auto s = setup_for(4, "the golden wok serves cheap chinese food");
  DecodeConfig cfg;
  cfg.iterations = 1;
  const auto z0 = s.initial.hidden.states;
  const auto obj = total_objective(lm.params, head, history_embedding(lm.params, s.context), s.knowledge, z0,
                                   cfg.alpha, cfg.lambda);
  const auto z_bw = backward_pass(z0, obj.grad, cfg.step_size);
  const auto fw = forward_pass(lm.params, s.context, z_bw);
  const RowMatrix expected = cfg.gamma * z_bw + (1.0 - cfg.gamma) * fw.states;

  const auto r = inject(lm.params, head, s.context, s.initial, s.knowledge, cfg);
  REQUIRE(r.trace.iterations.size() == 1);
  CHECK(r.trace.iterations[0].objective == doctest::Approx(obj.value).epsilon(1e-12));
  CHECK(r.trace.iterations[0].forward_shift == doctest::Approx((z_bw - fw.states).norm()).epsilon(1e-12));
  const auto rows = r.hidden.states.rows();
  CHECK((r.hidden.states - expected.topRows(rows)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(r.tokens.size() <= s.initial.tokens.size());
  CHECK(r.hidden.origin == HiddenOrigin::kPerturbed);
}

TEST_CASE("injection is deterministic") {
  const auto& lm = test::trained_model();
  const auto s = setup_for(6, "the nirala serves indian food");
  const DecodeConfig cfg;
  const auto a = inject(lm.params, test::trained_head(), s.context, s.initial, s.knowledge, cfg);
  const auto b = inject(lm.params, test::trained_head(), s.context, s.initial, s.knowledge, cfg);
  CHECK(a.tokens == b.tokens);
  CHECK(a.hidden.states == b.hidden.states);
  CHECK(a.trace.final_ce == b.trace.final_ce);
}

TEST_CASE("pure fidelity descent follows the reference loop and lowers the cross entropy") {
  const auto& lm = test::trained_model();
  for (std::size_t d : {0u, 5u, 9u}) {
    const auto s = setup_for(d, "the fitzwilliam museum has free entry and great paintings");
    DecodeConfig cfg;
    cfg.alpha = 0.0;
    cfg.lambda = 1.0;
    cfg.gamma = 1.0;
    cfg.step_size = 0.005;
    cfg.iterations = 10;
    const auto r = inject(lm.params, test::trained_head(), s.context, s.initial, s.knowledge, cfg);
    const auto ref = test::oracle_fidelity_pull(lm.params, s.knowledge, s.initial.hidden.states, 0.005, 10);
    REQUIRE(r.trace.iterations.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(std::abs(r.trace.iterations[i].ce - ref[i]) <= 1e-9);
      CHECK(ref[i + 1] <= ref[i] + 1e-12);
    }
    CHECK(std::abs(r.trace.final_ce - ref[10]) <= 1e-9);
    CHECK(r.trace.final_ce < r.trace.iterations[0].ce);
  }
}

TEST_CASE("decode config validation") {
  DecodeConfig c;
  CHECK_NOTHROW(validate(c));
  c.gamma = 1.2;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c = {};
  c.step_size = 0.0;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c = {};
  c.alpha = -1.0;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c = {};
  c.max_len = 0;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
}

}  // TEST_SUITE
