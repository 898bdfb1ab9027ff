#include "doctest.h"

#include <numeric>

#include "scm/comparison.hpp"
#include "scm/errors.hpp"
#include "scm/ranking.hpp"
#include "support.hpp"

using namespace scm;
using scm::test::random_tensor;

namespace {

constexpr Ablation kAblations[] = {Ablation::full, Ablation::no_context_aware, Ablation::no_gate};

ScmConfig small(std::size_t d = 4, std::size_t layers = 1) { return {d, layers, 2, 8}; }

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, j) = t.at(perm[i], j);
  return out;
}

// Moves biases and layer-norm affines off their zero/one initialization so
// every term of the forward pass is exercised.
void perturb(ScmParams& p, Rng& rng) {
  std::vector<Parameter*> params;
  p.collect(params);
  for (Parameter* q : params)
    if (q->value.rank() == 1)
      for (double& x : q->value.data()) x += 0.3 * (2.0 * uniform01(rng) - 1.0);
}

}  // namespace

TEST_CASE("context-aware representation") {
  Rng rng(1);
  Graph g(false);
  ForwardContext fc{g};

  SUBCASE("zero weights give zeros") {
    ScmParams p = ScmParams::create(small(), Ablation::full, rng);
    p.ca_w.value.fill(0.0);
    Tensor h = context_aware(fc, g.constant(random_tensor({3, 4}, rng)), g.constant(random_tensor({3, 4}, rng)), p)
                   .value();
    for (double x : h.data()) CHECK(x == 0.0);
  }

  SUBCASE("two-dimensional hand case") {
    ScmConfig c{2, 1, 1, 4};
    ScmParams p = ScmParams::create(c, Ablation::full, rng);
    p.ca_w.value = Tensor::matrix({{1, 0}, {0, 1}, {1, 0}, {0, 1}});
    Tensor h = context_aware(fc, g.constant(Tensor::matrix({{1, 0}})), g.constant(Tensor::matrix({{0, 1}})), p)
                   .value();
    CHECK(std::abs(h[0] - 0.7615941559557649) < 1e-15);
    CHECK(std::abs(h[1] - 0.7615941559557649) < 1e-15);
  }

  SUBCASE("duplicate candidates map to equal rows") {
    ScmParams p = ScmParams::create(small(), Ablation::full, rng);
    Tensor u = random_tensor({1, 4}, rng);
    Tensor cand = random_tensor({3, 4}, rng);
    for (std::size_t j = 0; j < 4; ++j) cand.at(2, j) = cand.at(0, j);
    CandidateSets s = single_set(g.constant(u.reshaped({4})), g.constant(cand));
    Tensor h = context_aware(fc, s.contexts, s.candidates, p).value();
    for (std::size_t j = 0; j < 4; ++j) CHECK(h.at(0, j) == h.at(2, j));
  }

  SUBCASE("width mismatch") {
    ScmParams p = ScmParams::create(small(), Ablation::full, rng);
    CHECK_THROWS_AS(context_aware(fc, g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3})), p), DimensionError);
    CHECK_THROWS_AS(single_set(g.constant(Tensor({5})), g.constant(Tensor({2, 4}))), DimensionError);
  }
}

TEST_CASE("candidate comparison") {
  Rng rng(2);
  Graph g(false);
  ForwardContext fc{g};
  ScmParams p = ScmParams::create(small(), Ablation::full, rng);
  perturb(p, rng);

  SUBCASE("matches the shared transformer block") {
    Tensor h = random_tensor({3, 4}, rng);
    Tensor o = compare(fc, g.constant(h), {{0, 3}}, p).value();
    CHECK(max_abs_diff(o, transformer_block(fc, g.constant(h), p.layers[0], 2, {{0, 3}}).value()) == 0.0);
    CHECK(max_abs_diff(o, test::ref::block(h, p.layers[0], 2)) < 1e-12);
  }

  SUBCASE("a single candidate attends only to itself") {
    Tensor h = random_tensor({1, 4}, rng);
    Tensor o = compare(fc, g.constant(h), {{0, 1}}, p).value();
    CHECK(max_abs_diff(o, test::ref::block(h, p.layers[0], 2)) < 1e-12);
  }

  SUBCASE("row permutation commutes") {
    Tensor h = random_tensor({5, 4}, rng);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    Tensor o = compare(fc, g.constant(h), {{0, 5}}, p).value();
    Tensor op = compare(fc, g.constant(permute_rows(h, perm)), {{0, 5}}, p).value();
    CHECK(max_abs_diff(op, permute_rows(o, perm)) < 1e-12);
  }

  CHECK_THROWS_AS(compare(fc, g.constant(Tensor({2, 3})), {{0, 2}}, p), DimensionError);
}

TEST_CASE("gated fusion") {
  Rng rng(3);
  Graph g(false);
  ForwardContext fc{g};
  ScmParams p = ScmParams::create(small(), Ablation::full, rng);
  const Tensor ones({4}, 1.0), zeros({4}, 0.0);

  SUBCASE("equal inputs ignore the gate") {
    Tensor ur = random_tensor({3, 4}, rng);
    Tensor f = gate_fuse(fc, g.constant(random_tensor({3, 4}, rng)), g.constant(ur), g.constant(ur), p).value();
    CHECK(max_abs_diff(f, test::ref::layer_norm(ur, ones, zeros)) < 1e-12);
  }

  SUBCASE("saturated gate passes the candidate through") {
    p.gate_b.value.fill(20.0);
    Tensor ur = random_tensor({3, 4}, rng);
    Tensor f = gate_fuse(fc, g.constant(random_tensor({3, 4}, rng)), g.constant(ur),
                         g.constant(random_tensor({3, 4}, rng)), p)
                   .value();
    CHECK(max_abs_diff(f, test::ref::layer_norm(ur, ones, zeros)) < 1e-6);
  }

  SUBCASE("two-dimensional hand case") {
    ScmParams q = ScmParams::create({2, 1, 1, 4}, Ablation::full, rng);
    q.gate_w.value.fill(0.0);
    Tensor f = gate_fuse(fc, g.constant(Tensor::matrix({{0.3, -0.4}})), g.constant(Tensor::matrix({{2, 0}})),
                         g.constant(Tensor::matrix({{0, 2}})), q)
                   .value();
    CHECK(f[0] == 0.0);
    CHECK(f[1] == 0.0);
  }

  CHECK_THROWS_AS(gate_fuse(fc, g.constant(Tensor({2, 4})), g.constant(Tensor({3, 4})), g.constant(Tensor({3, 4})), p),
                  DimensionError);
}

TEST_CASE("scm_forward composition and ablations") {
  Rng rng(4);
  Graph g(false);
  ForwardContext fc{g};
  Tensor uc = random_tensor({4}, rng), ur = random_tensor({5, 4}, rng);

  ScmParams full = ScmParams::create(small(), Ablation::full, rng);
  perturb(full, rng);
  CandidateSets s = single_set(g.constant(uc), g.constant(ur));
  Tensor manual = gate_fuse(fc, s.contexts, s.candidates,
                            compare(fc, context_aware(fc, s.contexts, s.candidates, full), s.sets, full), full)
                      .value();
  CHECK(scm_forward(fc, s, full, Ablation::full).value() == manual);
  CHECK(scm_forward(fc, s, full, Ablation::no_gate).value() ==
        compare(fc, context_aware(fc, s.contexts, s.candidates, full), s.sets, full).value());

  ScmParams no_ca = ScmParams::create(small(), Ablation::no_context_aware, rng);
  CHECK_FALSE(no_ca.has_context_aware);
  CHECK(scm_forward(fc, s, no_ca, Ablation::no_context_aware).value() ==
        gate_fuse(fc, s.contexts, s.candidates, compare(fc, s.candidates, s.sets, no_ca), no_ca).value());
  CHECK_THROWS_AS(context_aware(fc, s.contexts, s.candidates, no_ca), ContractError);

  ScmParams no_gate = ScmParams::create(small(), Ablation::no_gate, rng);
  CHECK_FALSE(no_gate.has_gate);
  std::vector<Parameter*> kept;
  no_gate.collect(kept);
  for (Parameter* q : kept) CHECK(q->name.find("gate") == std::string::npos);

  CHECK_THROWS_AS(ScmParams::create({6, 1, 4, 8}, Ablation::full, rng), ConfigError);
  CHECK_THROWS_AS(ScmParams::create({4, 0, 2, 8}, Ablation::full, rng), ConfigError);
}

TEST_CASE("permutation equivariance for every ablation") {
  Rng rng(5);
  for (Ablation a : kAblations) {
    CAPTURE(ablation_name(a));
    ScmParams p = ScmParams::create(small(8, 2), a, rng);
    perturb(p, rng);
    for (int trial = 0; trial < 10; ++trial) {
      Graph g(false);
      ForwardContext fc{g};
      const std::size_t m = 5;
      Tensor uc = random_tensor({8}, rng), ur = random_tensor({m, 8}, rng);
      std::vector<std::size_t> perm(m);
      std::iota(perm.begin(), perm.end(), 0);
      shuffle(perm, rng);
      Tensor f = scm_forward(fc, single_set(g.constant(uc), g.constant(ur)), p, a).value();
      Tensor fp = scm_forward(fc, single_set(g.constant(uc), g.constant(permute_rows(ur, perm))), p, a).value();
      CHECK(max_abs_diff(fp, permute_rows(f, perm)) < 1e-9);
    }
  }
}

TEST_CASE("saturated gate ranks like the normalized candidates") {
  Rng rng(6);
  ScmParams p = ScmParams::create(small(8, 1), Ablation::full, rng);
  p.gate_b.value.fill(20.0);
  const Tensor ones({8}, 1.0), zeros({8}, 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g(false);
    ForwardContext fc{g};
    Tensor uc = random_tensor({8}, rng), ur = random_tensor({6, 8}, rng);
    Var vuc = g.constant(uc);
    std::vector<double> scm_scores;
    for (double x : score(vuc, scm_forward(fc, single_set(vuc, g.constant(ur)), p, Ablation::full)).value().data())
      scm_scores.push_back(x);
    Tensor ln = test::ref::layer_norm(ur, ones, zeros);
    std::vector<double> plain(6);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 8; ++j) plain[i] += ln.at(i, j) * uc[j];
    CHECK(rank_candidates(scm_scores).front() == rank_candidates(plain).front());
  }
}

TEST_CASE("several sets in one stack match separate calls") {
  Rng rng(7);
  ScmParams p = ScmParams::create(small(4, 1), Ablation::full, rng);
  perturb(p, rng);
  Graph g(false);
  ForwardContext fc{g};
  Tensor ctx = random_tensor({5, 4}, rng), cand = random_tensor({5, 4}, rng);
  Tensor joint = scm_forward(fc, {g.constant(ctx), g.constant(cand), {{0, 2}, {2, 3}}}, p, Ablation::full).value();
  Tensor tail_ctx({3, 4}), tail_cand({3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      tail_ctx.at(i, j) = ctx.at(2 + i, j);
      tail_cand.at(i, j) = cand.at(2 + i, j);
    }
  Tensor alone = scm_forward(fc, {g.constant(tail_ctx), g.constant(tail_cand), {{0, 3}}}, p, Ablation::full).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(joint.at(2 + i, j) - alone.at(i, j)) < 1e-12);
}

TEST_CASE("SCM gradients match finite differences") {
  Rng rng(8);
  for (Ablation a : kAblations) {
    CAPTURE(ablation_name(a));
    ScmParams p = ScmParams::create(small(8, 1), a, rng);
    perturb(p, rng);
    std::vector<Parameter*> params;
    p.collect(params);
    Tensor uc = random_tensor({8}, rng), ur = random_tensor({4, 8}, rng);
    auto rep = test::check_parameters(params, [&](Graph& g) {
      ForwardContext fc{g};
      Var vuc = g.constant(uc);
      return ops::cross_entropy(score(vuc, scm_forward(fc, single_set(vuc, g.constant(ur)), p, a)), {1});
    });
    CAPTURE(rep.worst);
    CHECK(rep.max_rel < 1e-4);
  }
}
