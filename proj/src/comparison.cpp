#include "scm/comparison.hpp"

#include "scm/errors.hpp"

namespace scm {

namespace {

Parameter dense(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Parameter p;
  p.name = std::move(name);
  p.group = ParamGroup::scm;
  p.value = Tensor({fan_in, fan_out});
  fill_xavier(p.value, rng);
  return p;
}

Parameter filled(std::string name, std::size_t n, double v) {
  Parameter p;
  p.name = std::move(name);
  p.group = ParamGroup::scm;
  p.value = Tensor({n}, v);
  return p;
}

void require_rows_match(const char* op, Var a, Var b, std::size_t d) {
  if (a.value().rows() != b.value().rows() || a.value().cols() != d || b.value().cols() != d)
    throw DimensionError(std::string(op) + ": expected matching [m x " + std::to_string(d) + "] operands, got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

}  // namespace

ScmParams ScmParams::create(const ScmConfig& config, Ablation ablation, Rng& rng) {
  if (config.layers == 0) throw ConfigError("the comparison transformer needs at least one layer");
  if (config.heads == 0 || config.d_model % config.heads != 0)
    throw ConfigError("comparison width " + std::to_string(config.d_model) + " is not divisible by " +
                      std::to_string(config.heads) + " heads");
  const std::size_t d = config.d_model;
  ScmParams p;
  p.config = config;
  p.has_context_aware = ablation != Ablation::no_context_aware;
  p.has_gate = ablation != Ablation::no_gate;
  if (p.has_context_aware) {
    p.ca_w = dense("scm.context_aware.w", 2 * d, d, rng);
    p.ca_b = filled("scm.context_aware.b", d, 0.0);
  }
  for (std::size_t i = 0; i < config.layers; ++i)
    p.layers.push_back(TransformerLayer::create("scm.layer" + std::to_string(i), ParamGroup::scm, d, config.ffd, rng));
  if (p.has_gate) {
    p.gate_w = dense("scm.gate.w", 3 * d, d, rng);
    p.gate_b = filled("scm.gate.b", d, 0.0);
    p.ln_gain = filled("scm.fusion_ln.gain", d, 1.0);
    p.ln_bias = filled("scm.fusion_ln.bias", d, 0.0);
  }
  return p;
}

void ScmParams::collect(std::vector<Parameter*>& out) {
  if (has_context_aware) {
    out.push_back(&ca_w);
    out.push_back(&ca_b);
  }
  for (TransformerLayer& l : layers) l.collect(out);
  if (has_gate) {
    out.push_back(&gate_w);
    out.push_back(&gate_b);
    out.push_back(&ln_gain);
    out.push_back(&ln_bias);
  }
}

CandidateSets single_set(Var context, Var candidates) {
  const std::size_t m = candidates.value().rows();
  if (context.value().size() != candidates.value().cols())
    throw DimensionError("candidate set: context " + shape_string(context.shape()) + " vs candidates " +
                         shape_string(candidates.shape()));
  Var rows = context;
  if (context.value().rows() != m || context.value().rank() == 1)
    rows = ops::gather_rows(context, std::vector<std::size_t>(m, 0));
  return {rows, candidates, {{0, m}}};
}

Var context_aware(ForwardContext& fc, Var contexts, Var candidates, ScmParams& params) {
  if (!params.has_context_aware) throw ContractError("context-aware weights were ablated");
  require_rows_match("context_aware", contexts, candidates, params.config.d_model);
  Graph& g = fc.graph;
  Var u = ops::concat_last_axis({contexts, candidates});
  return ops::tanh(ops::linear(u, g.param(params.ca_w), g.param(params.ca_b)));
}

Var compare(ForwardContext& fc, Var h, const std::vector<Segment>& sets, ScmParams& params) {
  if (h.value().cols() != params.config.d_model)
    throw DimensionError("compare: input width " + std::to_string(h.value().cols()) + " differs from " +
                         std::to_string(params.config.d_model));
  Var x = h;
  for (TransformerLayer& layer : params.layers) x = transformer_block(fc, x, layer, params.config.heads, sets);
  return x;
}

Var gate_fuse(ForwardContext& fc, Var contexts, Var candidates, Var comparison, ScmParams& params) {
  if (!params.has_gate) throw ContractError("gate weights were ablated");
  require_rows_match("gate_fuse", contexts, candidates, params.config.d_model);
  require_rows_match("gate_fuse", candidates, comparison, params.config.d_model);
  Graph& g = fc.graph;
  Var o = ops::concat_last_axis({candidates, contexts, comparison});
  Var gate = ops::sigmoid(ops::linear(o, g.param(params.gate_w), g.param(params.gate_b)));
  Var mixed = ops::add(ops::mul(gate, candidates), ops::mul(ops::affine(gate, -1.0, 1.0), comparison));
  return ops::layer_norm(mixed, g.param(params.ln_gain), g.param(params.ln_bias));
}

Var scm_forward(ForwardContext& fc, const CandidateSets& batch, ScmParams& params, Ablation ablation) {
  Var h = ablation == Ablation::no_context_aware ? batch.candidates
                                                 : context_aware(fc, batch.contexts, batch.candidates, params);
  Var o = compare(fc, h, batch.sets, params);
  if (ablation == Ablation::no_gate) return o;
  return gate_fuse(fc, batch.contexts, batch.candidates, o, params);
}

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_context_aware: return "no_context_aware";
    case Ablation::no_gate: return "no_gate";
  }
  return "?";
}

}  // namespace scm
