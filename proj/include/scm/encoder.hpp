#pragma once

#include <string>
#include <vector>

#include "scm/autograd.hpp"
#include "scm/random.hpp"
#include "scm/vocab.hpp"

namespace scm {

/// Weights of one post-norm transformer block:
///   y = LN1(x + MultiHead(x, x, x));  z = LN2(y + FFN(y)),
/// with FFN(y) = tanh(y W1 + b1) W2 + b2 and bias-free attention projections.
struct TransformerLayer {
  Parameter wq, wk, wv, wo;
  Parameter ln1_gain, ln1_bias;
  Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Parameter ln2_gain, ln2_bias;

  static TransformerLayer create(const std::string& prefix, ParamGroup group, std::size_t d, std::size_t ffd,
                                 Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

/// Multi-head attention with output projection W^O. `segments` restricts
/// attention to row blocks of the stacked inputs (one block per sequence or
/// candidate set).
Var multi_head_attention(ForwardContext& fc, Var q, Var k, Var v, TransformerLayer& layer, std::size_t heads,
                         const std::vector<Segment>& segments);

Var transformer_block(ForwardContext& fc, Var x, TransformerLayer& layer, std::size_t heads,
                      const std::vector<Segment>& segments);

enum class Pooling { cls, mean };

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 48;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffd = 128;
  std::size_t max_len = 256;
  Pooling pooling = Pooling::cls;
};

/// Token states of a stack of sequences: rows of all sequences concatenated,
/// with one segment per sequence.
struct EncodedStack {
  Var states;
  std::vector<Segment> segments;
};

/// One toy transformer encoder: token + learned positional embeddings
/// followed by `layers` transformer blocks.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& prefix, const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  EncodedStack encode_states(ForwardContext& fc, const std::vector<TokenSeq>& seqs);
  /// One row per sequence: first-position state, or the row mean in mean mode.
  Var encode_pooled(ForwardContext& fc, const std::vector<TokenSeq>& seqs);
  Var pool(const EncodedStack& stack);

  Parameter& token_embedding() { return token_emb_; }
  Parameter& position_embedding() { return pos_emb_; }
  std::vector<TransformerLayer>& layers() { return layers_; }
  void collect(std::vector<Parameter*>& out);

 private:
  EncoderConfig config_;
  Parameter token_emb_;
  Parameter pos_emb_;
  std::vector<TransformerLayer> layers_;
};

/// Poly-encoder aggregation head: learned codes read the context tokens, then
/// each candidate reads the codes.
struct PolyHead {
  Parameter codes;  // [poly_m x d]

  static PolyHead create(const std::string& prefix, std::size_t poly_m, std::size_t d, Rng& rng);
  void collect(std::vector<Parameter*>& out) { out.push_back(&codes); }
};

/// Candidate-conditioned context vectors. `context_states` holds the token
/// states of several contexts (segment b = context b); `candidates` stacks the
/// candidate vectors, with candidate_sets[b] the rows that belong to context b.
/// Returns one context vector per candidate row.
Var poly_aggregate(ForwardContext& fc, const EncodedStack& context_states, PolyHead& head, Var candidates,
                   const std::vector<Segment>& candidate_sets);

inline constexpr double kEmbeddingInitStd = 0.02;

}  // namespace scm
