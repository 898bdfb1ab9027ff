#include "scm/model.hpp"

#include "scm/errors.hpp"

namespace scm {

const char* model_kind_name(ModelKind k) { return k == ModelKind::bi ? "bi" : "poly"; }

const char* scm_mode_name(ScmMode m) {
  switch (m) {
    case ScmMode::off: return "off";
    case ScmMode::full: return "full";
    case ScmMode::no_context_aware: return "no_context_aware";
    case ScmMode::no_gate: return "no_gate";
  }
  return "?";
}

std::optional<ModelKind> parse_model_kind(std::string_view s) {
  if (s == "bi") return ModelKind::bi;
  if (s == "poly") return ModelKind::poly;
  return std::nullopt;
}

std::optional<ScmMode> parse_scm_mode(std::string_view s) {
  for (ScmMode m : {ScmMode::off, ScmMode::full, ScmMode::no_context_aware, ScmMode::no_gate})
    if (s == scm_mode_name(m)) return m;
  return std::nullopt;
}

Ablation to_ablation(ScmMode m) {
  switch (m) {
    case ScmMode::no_context_aware: return Ablation::no_context_aware;
    case ScmMode::no_gate: return Ablation::no_gate;
    default: return Ablation::full;
  }
}

namespace {
EncoderConfig with_vocab(EncoderConfig c, std::size_t n) {
  c.vocab_size = n;
  return c;
}
}  // namespace

Model::Model(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.encoder.vocab_size = vocab_.size();
  config_.comparison.d_model = config_.encoder.d_model;
  Rng rng(seed);
  context_ = Encoder("context", with_vocab(config_.encoder, vocab_.size()), rng);
  response_ = Encoder("response", with_vocab(config_.encoder, vocab_.size()), rng);
  if (config_.kind == ModelKind::poly) poly_ = PolyHead::create("poly", config_.poly_m, config_.encoder.d_model, rng);
  if (config_.scm != ScmMode::off) scm_ = ScmParams::create(config_.comparison, to_ablation(config_.scm), rng);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  context_.collect(out);
  response_.collect(out);
  if (poly_) poly_->collect(out);
  if (scm_) scm_->collect(out);
  return out;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

TokenSeq Model::tokenize_context(const std::vector<std::string>& turns) const {
  return tokenize(turns, vocab_, config_.encoder.max_len);
}

TokenSeq Model::tokenize_response(const std::string& text) const {
  return tokenize(text, vocab_, config_.encoder.max_len);
}

Var Model::encode_context(ForwardContext& fc, const std::vector<std::string>& turns) {
  EncodedStack stack = context_.encode_states(fc, {tokenize_context(turns)});
  if (config_.kind == ModelKind::poly) return stack.states;
  return ops::reshape(context_.pool(stack), {config_.encoder.d_model});
}

Var Model::encode_response(ForwardContext& fc, const std::string& text) {
  return response_.encode_pooled(fc, {tokenize_response(text)});
}

Var Model::degrees(ForwardContext& fc, const std::vector<TokenSeq>& contexts, const std::vector<TokenSeq>& responses,
                   const std::vector<std::vector<std::size_t>>& sets) {
  if (contexts.size() != sets.size())
    throw DimensionError("degrees: " + std::to_string(sets.size()) + " candidate sets for " +
                         std::to_string(contexts.size()) + " contexts");
  Var u_r = response_.encode_pooled(fc, responses);

  std::vector<std::size_t> cand_rows, ctx_rows;
  std::vector<Segment> segments;
  for (std::size_t b = 0; b < sets.size(); ++b) {
    if (sets[b].empty()) throw ContractError("degrees: empty candidate set");
    segments.push_back({cand_rows.size(), sets[b].size()});
    for (std::size_t j : sets[b]) {
      if (j >= responses.size()) throw IndexError("degrees: candidate index outside response list");
      cand_rows.push_back(j);
      ctx_rows.push_back(b);
    }
  }
  Var candidates = ops::gather_rows(u_r, std::move(cand_rows));

  Var context_rows;
  if (config_.kind == ModelKind::bi) {
    context_rows = ops::gather_rows(context_.encode_pooled(fc, contexts), std::move(ctx_rows));
  } else {
    EncodedStack states = context_.encode_states(fc, contexts);
    context_rows = poly_aggregate(fc, states, *poly_, candidates, segments);
  }

  Var f = candidates;
  if (scm_) f = scm_forward(fc, {context_rows, candidates, segments}, *scm_, to_ablation(config_.scm));
  return ops::rows_dot(f, context_rows);
}

std::vector<double> Model::score(const std::vector<std::string>& turns, const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw ContractError("score: empty candidate list");
  Graph g(false);
  ForwardContext fc{g, false, config_.dropout, nullptr};
  std::vector<TokenSeq> resp;
  resp.reserve(candidates.size());
  for (const std::string& c : candidates) resp.push_back(tokenize_response(c));
  std::vector<std::size_t> all(candidates.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Var d = degrees(fc, {tokenize_context(turns)}, resp, {all});
  return {d.value().data().begin(), d.value().data().end()};
}

}  // namespace scm
