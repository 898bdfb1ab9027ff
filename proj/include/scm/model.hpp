#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scm/comparison.hpp"
#include "scm/encoder.hpp"
#include "scm/vocab.hpp"

namespace scm {

enum class ModelKind { bi, poly };
enum class ScmMode { off, full, no_context_aware, no_gate };

const char* model_kind_name(ModelKind k);
const char* scm_mode_name(ScmMode m);
std::optional<ModelKind> parse_model_kind(std::string_view s);
std::optional<ScmMode> parse_scm_mode(std::string_view s);
Ablation to_ablation(ScmMode m);

struct ModelConfig {
  ModelKind kind = ModelKind::bi;
  ScmMode scm = ScmMode::full;
  EncoderConfig encoder;  // vocab_size is taken from the vocabulary
  std::size_t poly_m = 16;
  ScmConfig comparison;
  double dropout = 0.1;
};

/// Context encoder, response encoder (disjoint weights), optional poly head,
/// optional comparison module. Scoring is f_i . u_c per candidate.
class Model {
 public:
  Model(ModelConfig config, Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }

  /// Stable order: context encoder, response encoder, poly codes, SCM.
  std::vector<Parameter*> parameters();
  void zero_grad();

  Encoder& context_encoder() { return context_; }
  Encoder& response_encoder() { return response_; }
  PolyHead* poly_head() { return poly_ ? &*poly_ : nullptr; }
  ScmParams* scm_params() { return scm_ ? &*scm_ : nullptr; }

  TokenSeq tokenize_context(const std::vector<std::string>& turns) const;
  TokenSeq tokenize_response(const std::string& text) const;

  /// Bi-encoder: u_c [d]. Poly-encoder: final token states [L x d].
  Var encode_context(ForwardContext& fc, const std::vector<std::string>& turns);
  /// Always the pooled vector u_r [d].
  Var encode_response(ForwardContext& fc, const std::string& text);

  /// Matching degrees of several contexts against candidate sets drawn from
  /// `responses`: sets[b] lists the response indices context b is scored
  /// against. Returns one degree per (context, candidate) pair, context-major.
  Var degrees(ForwardContext& fc, const std::vector<TokenSeq>& contexts, const std::vector<TokenSeq>& responses,
              const std::vector<std::vector<std::size_t>>& sets);

  /// Eval-mode degrees of one context against its candidates.
  std::vector<double> score(const std::vector<std::string>& turns, const std::vector<std::string>& candidates);

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  Encoder context_;
  Encoder response_;
  std::optional<PolyHead> poly_;
  std::optional<ScmParams> scm_;
};

}  // namespace scm
