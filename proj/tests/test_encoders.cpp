#include "doctest.h"

#include <set>

#include "scm/encoder.hpp"
#include "scm/errors.hpp"
#include "scm/model.hpp"
#include "support.hpp"

using namespace scm;
using scm::test::random_tensor;

namespace {

Vocabulary small_vocab() { return Vocabulary::build({"a b c", "hello world", "x y z"}); }

TokenId id(const Vocabulary& v, const char* w) { return v.find(w).value(); }

Tensor identity(std::size_t d) {
  Tensor t({d, d});
  for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("vocabulary") {
  Vocabulary v = small_vocab();
  CHECK(v.token(Vocabulary::kPad) == "[PAD]");
  CHECK(v.token(Vocabulary::kUnk) == "[UNK]");
  CHECK(v.token(Vocabulary::kCls) == "[CLS]");
  CHECK(v.token(Vocabulary::kSep) == "[SEP]");
  CHECK(v.token(Vocabulary::kEot) == "[EOT]");
  for (TokenId i = 0; i < v.size(); ++i) CHECK(v.find(v.token(i)) == i);
  CHECK(v.find("hello").has_value());
  CHECK(v.find("h").has_value());
  CHECK(Vocabulary::parse(v.serialize()) == v);
}

TEST_CASE("tokenize") {
  Vocabulary v = small_vocab();
  CHECK(tokenize("", v, 256) == TokenSeq{Vocabulary::kCls, Vocabulary::kSep});
  CHECK(tokenize(std::vector<std::string>{"a b", "c"}, v, 256) ==
        TokenSeq{Vocabulary::kCls, id(v, "a"), id(v, "b"), Vocabulary::kEot, id(v, "c"), Vocabulary::kSep});
  // unknown word falls back to characters, unknown characters to UNK
  CHECK(tokenize("low", v, 256) == TokenSeq{Vocabulary::kCls, id(v, "l"), id(v, "o"), id(v, "w"), Vocabulary::kSep});
  CHECK(tokenize("q", v, 256) == TokenSeq{Vocabulary::kCls, Vocabulary::kUnk, Vocabulary::kSep});

  std::string long_text;
  for (int i = 0; i < 400; ++i) long_text += (i < 146 ? "a " : i % 2 ? "b " : "c ");
  TokenSeq t = tokenize(long_text, v, 256);
  REQUIRE(t.size() == 256);
  CHECK(t.front() == Vocabulary::kCls);
  CHECK(t.back() == Vocabulary::kSep);
  // the last 254 of 400 words are exactly those from index 146 on
  for (std::size_t i = 1; i < 255; ++i) CHECK(t[i] == id(v, (145 + i) % 2 ? "b" : "c"));
}

TEST_CASE("transformer block") {
  Rng rng(4);
  const std::size_t d = 4;
  Graph g(false);
  ForwardContext fc{g};

  SUBCASE("single key with identity value path") {
    TransformerLayer l = TransformerLayer::create("t", ParamGroup::encoder, d, 8, rng);
    l.wv.value = identity(d);
    l.wo.value = identity(d);
    for (Parameter* p : {&l.ffn_w1, &l.ffn_b1, &l.ffn_w2, &l.ffn_b2}) p->value.fill(0.0);
    Tensor x = random_tensor({1, d}, rng);
    Tensor doubled = x;
    for (double& e : doubled.data()) e *= 2.0;
    Tensor expect = test::ref::layer_norm(test::ref::layer_norm(doubled, l.ln1_gain.value, l.ln1_bias.value),
                                          l.ln2_gain.value, l.ln2_bias.value);
    Tensor out = transformer_block(fc, fc.graph.constant(x), l, 2, {{0, 1}}).value();
    CHECK(max_abs_diff(out, expect) < 1e-12);
  }

  SUBCASE("random input matches the reference composition") {
    TransformerLayer l = TransformerLayer::create("t", ParamGroup::encoder, d, 8, rng);
    for (Parameter* p : {&l.ffn_b1, &l.ffn_b2, &l.ln1_gain, &l.ln1_bias, &l.ln2_gain, &l.ln2_bias})
      p->value = random_tensor(p->value.shape(), rng);
    Tensor x = random_tensor({3, d}, rng);
    Tensor out = transformer_block(fc, fc.graph.constant(x), l, 2, {{0, 3}}).value();
    CHECK(out.shape() == x.shape());
    CHECK(max_abs_diff(out, test::ref::block(x, l, 2)) < 1e-12);
    // eval mode is deterministic
    CHECK(transformer_block(fc, fc.graph.constant(x), l, 2, {{0, 3}}).value() == out);
  }

  SUBCASE("shape preserved for any length") {
    TransformerLayer l = TransformerLayer::create("t", ParamGroup::encoder, d, 8, rng);
    for (std::size_t L : {1u, 2u, 7u, 256u}) {
      Tensor x = random_tensor({L, d}, rng);
      CHECK(transformer_block(fc, fc.graph.constant(x), l, 2, {{0, L}}).value().shape() == x.shape());
    }
  }
}

TEST_CASE("multi-head attention") {
  Rng rng(8);
  const std::size_t d = 4;
  Graph g(false);
  ForwardContext fc{g};
  TransformerLayer l = TransformerLayer::create("t", ParamGroup::encoder, d, 8, rng);

  SUBCASE("identical keys give the projected mean of values") {
    Tensor q = random_tensor({3, d}, rng), v = random_tensor({3, d}, rng);
    Tensor k({3, d});
    Tensor row = random_tensor({1, d}, rng);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < d; ++j) k.at(i, j) = row[j];
    Tensor out = multi_head_attention(fc, g.constant(q), g.constant(k), g.constant(v), l, 2, {{0, 3}}).value();
    Tensor mean({1, d});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += v.at(i, j) / 3.0;
    Tensor expect = test::ref::mm(test::ref::mm(mean, l.wv.value), l.wo.value);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(out.at(i, j) - expect[j]) < 1e-12);
  }

  SUBCASE("two heads against the per-head loop") {
    Tensor q = random_tensor({5, d}, rng), k = random_tensor({5, d}, rng), v = random_tensor({5, d}, rng);
    Tensor out = multi_head_attention(fc, g.constant(q), g.constant(k), g.constant(v), l, 2, {{0, 5}}).value();
    Tensor expect = test::ref::mm(
        test::ref::attention(test::ref::mm(q, l.wq.value), test::ref::mm(k, l.wk.value), test::ref::mm(v, l.wv.value), 2),
        l.wo.value);
    CHECK(max_abs_diff(out, expect) < 1e-12);
  }

  SUBCASE("segments keep sequences apart") {
    Tensor a = random_tensor({3, d}, rng), b = random_tensor({2, d}, rng);
    Tensor both({5, d});
    std::copy(a.data().begin(), a.data().end(), both.data().begin());
    std::copy(b.data().begin(), b.data().end(), both.data().begin() + 3 * d);
    Var x = g.constant(both);
    Tensor joint = multi_head_attention(fc, x, x, x, l, 2, {{0, 3}, {3, 2}}).value();
    Var xb = g.constant(b);
    Tensor alone = multi_head_attention(fc, xb, xb, xb, l, 2, {{0, 2}}).value();
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(joint.at(3 + i, j) - alone.at(i, j)) < 1e-12);
  }

  CHECK_THROWS_AS(multi_head_attention(fc, g.constant(Tensor({2, d})), g.constant(Tensor({2, d})),
                                       g.constant(Tensor({2, d})), l, 3, {{0, 2}}),
                  ConfigError);
}

TEST_CASE("encoder configuration") {
  Rng rng(1);
  EncoderConfig c;
  c.vocab_size = 10;
  c.d_model = 6;
  c.heads = 4;
  CHECK_THROWS_AS(Encoder("e", c, rng), ConfigError);
  c.heads = 3;
  CHECK_NOTHROW(Encoder("e", c, rng));
}

TEST_CASE("mean pooling with no layers returns the shared embedding") {
  Rng rng(2);
  EncoderConfig c;
  c.vocab_size = 6;
  c.d_model = 4;
  c.layers = 0;
  c.pooling = Pooling::mean;
  Encoder enc("e", c, rng);
  Tensor e = Tensor::vector({0.3, -1.0, 2.0, 0.5});
  for (std::size_t i = 0; i < c.vocab_size; ++i)
    for (std::size_t j = 0; j < 4; ++j) enc.token_embedding().value.at(i, j) = e[j];
  enc.position_embedding().value.fill(0.0);
  Graph g(false);
  ForwardContext fc{g};
  Tensor u = enc.encode_pooled(fc, {{2, 5, 5, 1, 3}, {2, 3}}).value();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(u.at(r, j) - e[j]) < 1e-15);
}

namespace {

ModelConfig tiny_config(ModelKind kind) {
  ModelConfig m;
  m.kind = kind;
  m.scm = ScmMode::full;
  m.encoder.d_model = 8;
  m.encoder.layers = 1;
  m.encoder.heads = 2;
  m.encoder.ffd = 8;
  m.encoder.max_len = 8;
  m.poly_m = 3;
  m.comparison = {8, 1, 2, 8};
  return m;
}

}  // namespace

TEST_CASE("context and response encoders are disjoint") {
  Model model(tiny_config(ModelKind::bi), small_vocab(), 3);
  std::vector<Parameter*> ctx, rsp;
  model.context_encoder().collect(ctx);
  model.response_encoder().collect(rsp);
  std::set<Parameter*> a(ctx.begin(), ctx.end());
  for (Parameter* p : rsp) CHECK(a.count(p) == 0);
  std::set<std::string> names;
  for (Parameter* p : model.parameters()) CHECK(names.insert(p->name).second);

  Graph g(false);
  ForwardContext fc{g};
  const Tensor ur = model.encode_response(fc, "hello world").value();
  for (Parameter* p : ctx)
    for (double& x : p->value.data()) x += 0.5;
  CHECK(model.encode_response(fc, "hello world").value() == ur);

  SUBCASE("response-side loss leaves context gradients at zero") {
    model.zero_grad();
    Graph gg;
    ForwardContext f2{gg};
    gg.backward(ops::sum(ops::mul(model.encode_response(f2, "a b c"), model.encode_response(f2, "x y"))));
    for (Parameter* p : ctx)
      for (double x : p->grad.data()) CHECK(x == 0.0);
    double total = 0.0;
    for (Parameter* p : rsp)
      for (double x : p->grad.data()) total += std::abs(x);
    CHECK(total > 0.0);
  }
}

TEST_CASE("context encoding") {
  Model model(tiny_config(ModelKind::bi), small_vocab(), 5);
  Graph g(false);
  ForwardContext fc{g};
  const std::vector<std::string> turns = {"a b", "c hello"};
  const Tensor u = model.encode_context(fc, turns).value();
  CHECK(u.shape() == Shape{8});
  CHECK(model.encode_context(fc, turns).value() == u);

  // max_len 8 keeps the last 6 content tokens; the first word falls outside
  const std::vector<std::string> long_turns = {"a b c x y z hello world"};
  const std::vector<std::string> changed = {"z b c x y z hello world"};
  CHECK(model.encode_context(fc, long_turns).value() == model.encode_context(fc, changed).value());

  Model poly(tiny_config(ModelKind::poly), small_vocab(), 5);
  CHECK(poly.encode_context(fc, turns).value().shape() == Shape{tokenize(turns, poly.vocab(), 8).size(), 8});
}

TEST_CASE("poly aggregation") {
  Rng rng(6);
  const std::size_t d = 4;
  Graph g(false);
  ForwardContext fc{g};

  SUBCASE("one zero code averages the token states") {
    PolyHead head = PolyHead::create("p", 1, d, rng);
    head.codes.value.fill(0.0);
    Tensor states = random_tensor({5, d}, rng);
    Tensor cand = random_tensor({2, d}, rng);
    Tensor out = poly_aggregate(fc, {g.constant(states), {{0, 5}}}, head, g.constant(cand), {{0, 2}}).value();
    CHECK(out.shape() == Shape{2, d});
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 5; ++i) mean += states.at(i, j) / 5.0;
        CHECK(std::abs(out.at(r, j) - mean) < 1e-12);
      }
  }

  SUBCASE("two codes over three tokens by hand") {
    PolyHead head = PolyHead::create("p", 2, 2, rng);
    head.codes.value = Tensor::matrix({{2.0, 0.0}, {0.0, 2.0}});
    Tensor states = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}});
    Tensor cand = Tensor::matrix({{std::sqrt(2.0) * std::log(3.0), 0.0}});
    // code 1 scores (2, 0, 2)/sqrt2, code 2 scores (0, 2, 2)/sqrt2
    const double s = std::exp(2.0 / std::sqrt(2.0));
    const double z = 2.0 * s + 1.0;
    const double c1[2] = {2.0 * s / z, (1.0 + s) / z};
    const double c2[2] = {(1.0 + s) / z, 2.0 * s / z};
    // the candidate scores the codes c1[0]*ln3 and c2[0]*ln3
    const double w1 = std::exp(c1[0] * std::log(3.0)), w2 = std::exp(c2[0] * std::log(3.0));
    Tensor out = poly_aggregate(fc, {g.constant(states), {{0, 3}}}, head, g.constant(cand), {{0, 1}}).value();
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(out[j] - (w1 * c1[j] + w2 * c2[j]) / (w1 + w2)) < 1e-12);
  }

  SUBCASE("shape is independent of length and code count") {
    for (std::size_t m : {1u, 3u, 16u})
      for (std::size_t L : {1u, 4u, 9u}) {
        PolyHead head = PolyHead::create("p", m, d, rng);
        Graph fresh(false);  // the graph caches parameter nodes by address
        ForwardContext f2{fresh};
        Tensor out = poly_aggregate(f2, {fresh.constant(random_tensor({L, d}, rng)), {{0, L}}}, head,
                                    fresh.constant(random_tensor({3, d}, rng)), {{0, 3}})
                         .value();
        CHECK(out.shape() == Shape{3, d});
      }
  }
}

TEST_CASE("encoder gradients match finite differences") {
  Rng rng(12);
  EncoderConfig c;
  c.vocab_size = 7;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffd = 8;
  c.max_len = 5;
  Encoder enc("e", c, rng);
  for (Parameter* p : [&] { std::vector<Parameter*> v; enc.collect(v); return v; }())
    if (p->name.find("embedding") != std::string::npos) fill_normal(p->value, rng, 0.5);
  const Tensor w = random_tensor({2, 8}, rng);
  std::vector<Parameter*> params;
  enc.collect(params);
  auto rep = test::check_parameters(params, [&](Graph& g) {
    ForwardContext fc{g};
    Var u = enc.encode_pooled(fc, {{2, 5, 6, 5, 3}, {2, 1, 3}});
    return ops::sum(ops::mul(u, g.constant(w)));
  });
  CAPTURE(rep.worst);
  CHECK(rep.max_rel < 1e-4);
}
