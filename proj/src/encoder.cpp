#include "scm/encoder.hpp"

#include "scm/errors.hpp"

namespace scm {

namespace {

Parameter make_param(std::string name, ParamGroup group, Shape shape) {
  Parameter p;
  p.name = std::move(name);
  p.group = group;
  p.value = Tensor(std::move(shape));
  return p;
}

Parameter xavier(std::string name, ParamGroup group, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Parameter p = make_param(std::move(name), group, {fan_in, fan_out});
  fill_xavier(p.value, rng);
  return p;
}

Parameter constant(std::string name, ParamGroup group, std::size_t n, double v) {
  Parameter p = make_param(std::move(name), group, {n});
  p.value.fill(v);
  return p;
}

}  // namespace

TransformerLayer TransformerLayer::create(const std::string& prefix, ParamGroup group, std::size_t d,
                                          std::size_t ffd, Rng& rng) {
  TransformerLayer l;
  l.wq = xavier(prefix + ".attn.wq", group, d, d, rng);
  l.wk = xavier(prefix + ".attn.wk", group, d, d, rng);
  l.wv = xavier(prefix + ".attn.wv", group, d, d, rng);
  l.wo = xavier(prefix + ".attn.wo", group, d, d, rng);
  l.ln1_gain = constant(prefix + ".ln1.gain", group, d, 1.0);
  l.ln1_bias = constant(prefix + ".ln1.bias", group, d, 0.0);
  l.ffn_w1 = xavier(prefix + ".ffn.w1", group, d, ffd, rng);
  l.ffn_b1 = constant(prefix + ".ffn.b1", group, ffd, 0.0);
  l.ffn_w2 = xavier(prefix + ".ffn.w2", group, ffd, d, rng);
  l.ffn_b2 = constant(prefix + ".ffn.b2", group, d, 0.0);
  l.ln2_gain = constant(prefix + ".ln2.gain", group, d, 1.0);
  l.ln2_bias = constant(prefix + ".ln2.bias", group, d, 0.0);
  return l;
}

void TransformerLayer::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&wq, &wk, &wv, &wo, &ln1_gain, &ln1_bias, &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2, &ln2_gain,
                       &ln2_bias})
    out.push_back(p);
}

Var multi_head_attention(ForwardContext& fc, Var q, Var k, Var v, TransformerLayer& layer, std::size_t heads,
                         const std::vector<Segment>& segments) {
  Graph& g = fc.graph;
  const std::size_t d = layer.wq.value.cols();
  if (heads == 0 || d % heads != 0)
    throw ConfigError("model width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  Var qp = ops::matmul(q, g.param(layer.wq));
  Var kp = ops::matmul(k, g.param(layer.wk));
  Var vp = ops::matmul(v, g.param(layer.wv));
  ops::AttentionSpec spec{heads, fc.dropout, fc.train, fc.rng};
  Var heads_out = ops::segment_attention(qp, kp, vp, segments, segments, spec);
  return ops::matmul(heads_out, g.param(layer.wo));
}

Var transformer_block(ForwardContext& fc, Var x, TransformerLayer& layer, std::size_t heads,
                      const std::vector<Segment>& segments) {
  Graph& g = fc.graph;
  Var attn = multi_head_attention(fc, x, x, x, layer, heads, segments);
  Var y = ops::layer_norm_residual(x, attn, g.param(layer.ln1_gain), g.param(layer.ln1_bias));
  Var hidden = ops::tanh(ops::linear(y, g.param(layer.ffn_w1), g.param(layer.ffn_b1)));
  hidden = ops::dropout(hidden, fc.dropout, fc.train, fc.rng);
  Var z = ops::linear(hidden, g.param(layer.ffn_w2), g.param(layer.ffn_b2));
  return ops::layer_norm_residual(y, z, g.param(layer.ln2_gain), g.param(layer.ln2_bias));
}

Encoder::Encoder(const std::string& prefix, const EncoderConfig& config, Rng& rng) : config_(config) {
  if (config.vocab_size == 0) throw ConfigError("encoder needs a nonempty vocabulary");
  if (config.heads == 0 || config.d_model % config.heads != 0)
    throw ConfigError("encoder width " + std::to_string(config.d_model) + " is not divisible by " +
                      std::to_string(config.heads) + " heads");
  token_emb_ = make_param(prefix + ".token_embedding", ParamGroup::encoder, {config.vocab_size, config.d_model});
  fill_normal(token_emb_.value, rng, kEmbeddingInitStd);
  pos_emb_ = make_param(prefix + ".position_embedding", ParamGroup::encoder, {config.max_len, config.d_model});
  fill_normal(pos_emb_.value, rng, kEmbeddingInitStd);
  for (std::size_t i = 0; i < config.layers; ++i)
    layers_.push_back(TransformerLayer::create(prefix + ".layer" + std::to_string(i), ParamGroup::encoder,
                                               config.d_model, config.ffd, rng));
}

EncodedStack Encoder::encode_states(ForwardContext& fc, const std::vector<TokenSeq>& seqs) {
  if (seqs.empty()) throw ContractError("encode: no sequences");
  std::vector<std::size_t> ids, positions;
  std::vector<Segment> segments;
  for (const TokenSeq& s : seqs) {
    if (s.empty()) throw ContractError("encode: empty token sequence");
    if (s.size() > config_.max_len)
      throw ContractError("encode: sequence of " + std::to_string(s.size()) + " tokens exceeds max length " +
                          std::to_string(config_.max_len));
    segments.push_back({ids.size(), s.size()});
    for (std::size_t p = 0; p < s.size(); ++p) {
      if (s[p] >= config_.vocab_size) throw IndexError("encode: token id outside vocabulary");
      ids.push_back(s[p]);
      positions.push_back(p);
    }
  }
  Graph& g = fc.graph;
  Var x = ops::add(ops::gather_rows(g.param(token_emb_), std::move(ids)),
                   ops::gather_rows(g.param(pos_emb_), std::move(positions)));
  x = ops::dropout(x, fc.dropout, fc.train, fc.rng);
  for (TransformerLayer& layer : layers_) x = transformer_block(fc, x, layer, config_.heads, segments);
  return {x, std::move(segments)};
}

Var Encoder::pool(const EncodedStack& stack) {
  Graph& g = *stack.states.graph;
  if (config_.pooling == Pooling::cls) {
    std::vector<std::size_t> first;
    for (const Segment& s : stack.segments) first.push_back(s.offset);
    return ops::gather_rows(stack.states, std::move(first));
  }
  const std::size_t total = stack.states.value().rows();
  Tensor avg({stack.segments.size(), total});
  for (std::size_t i = 0; i < stack.segments.size(); ++i)
    for (std::size_t r = 0; r < stack.segments[i].length; ++r)
      avg.at(i, stack.segments[i].offset + r) = 1.0 / static_cast<double>(stack.segments[i].length);
  return ops::matmul(g.constant(std::move(avg)), stack.states);
}

Var Encoder::encode_pooled(ForwardContext& fc, const std::vector<TokenSeq>& seqs) {
  return pool(encode_states(fc, seqs));
}

void Encoder::collect(std::vector<Parameter*>& out) {
  out.push_back(&token_emb_);
  out.push_back(&pos_emb_);
  for (TransformerLayer& l : layers_) l.collect(out);
}

PolyHead PolyHead::create(const std::string& prefix, std::size_t poly_m, std::size_t d, Rng& rng) {
  if (poly_m == 0) throw ConfigError("poly-encoder needs at least one code");
  PolyHead h;
  h.codes = make_param(prefix + ".codes", ParamGroup::encoder, {poly_m, d});
  fill_normal(h.codes.value, rng, kEmbeddingInitStd);
  return h;
}

Var poly_aggregate(ForwardContext& fc, const EncodedStack& context_states, PolyHead& head, Var candidates,
                   const std::vector<Segment>& candidate_sets) {
  Graph& g = fc.graph;
  const std::size_t n_ctx = context_states.segments.size();
  if (candidate_sets.size() != n_ctx)
    throw DimensionError("poly_aggregate: " + std::to_string(candidate_sets.size()) + " candidate sets for " +
                         std::to_string(n_ctx) + " contexts");
  const std::size_t m = head.codes.value.rows();
  if (candidates.value().cols() != head.codes.value.cols())
    throw DimensionError("poly_aggregate: candidate width differs from code width");
  std::vector<std::size_t> repeat;
  std::vector<Segment> code_segments;
  for (std::size_t b = 0; b < n_ctx; ++b) {
    code_segments.push_back({b * m, m});
    for (std::size_t i = 0; i < m; ++i) repeat.push_back(i);
  }
  ops::AttentionSpec spec{1, 0.0, false, nullptr};
  Var codes = ops::gather_rows(g.param(head.codes), std::move(repeat));
  Var context_codes =
      ops::segment_attention(codes, context_states.states, context_states.states, code_segments,
                             context_states.segments, spec);
  return ops::segment_attention(candidates, context_codes, context_codes, candidate_sets, code_segments, spec);
}

}  // namespace scm
