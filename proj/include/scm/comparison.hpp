#pragma once

// Self-attention comparison module.
//
// Given a context vector and the m candidate vectors of one candidate set:
//   H_i = tanh([u_c | u_ri] W_ca + b_ca)                 context-aware view
//   O   = N transformer blocks over the rows of H        comparison, no positions
//   g_i = sigmoid([u_ri | u_c | O_i] W_g + b_g)
//   f_i = LayerNorm(g_i * u_ri + (1 - g_i) * O_i)        gated fusion
//
// Everything is computed on stacked rows: several candidate sets share one
// matrix and `sets` marks which rows compare against each other. The context
// rows are given per candidate, which covers both a single shared u_c and the
// candidate-conditioned vectors of the poly-encoder.

#include <string>
#include <vector>

#include "scm/encoder.hpp"

namespace scm {

enum class Ablation { full, no_context_aware, no_gate };

struct ScmConfig {
  std::size_t d_model = 48;
  std::size_t layers = 4;
  std::size_t heads = 8;
  std::size_t ffd = 512;
};

struct ScmParams {
  ScmConfig config;
  Parameter ca_w, ca_b;  // [2d x d], [d]
  std::vector<TransformerLayer> layers;
  Parameter gate_w, gate_b;  // [3d x d], [d]
  Parameter ln_gain, ln_bias;

  bool has_context_aware = true;
  bool has_gate = true;

  /// Ablated submodules get no weights.
  static ScmParams create(const ScmConfig& config, Ablation ablation, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

/// Stacked candidate sets. Row r of `contexts` is the context vector that
/// goes with candidate row r; `sets` partitions the rows.
struct CandidateSets {
  Var contexts;
  Var candidates;
  std::vector<Segment> sets;
};

/// A single candidate set with one shared context vector u_c [d] and
/// candidates U_r [m x d].
CandidateSets single_set(Var context, Var candidates);

Var context_aware(ForwardContext& fc, Var contexts, Var candidates, ScmParams& params);
Var compare(ForwardContext& fc, Var h, const std::vector<Segment>& sets, ScmParams& params);
Var gate_fuse(ForwardContext& fc, Var contexts, Var candidates, Var comparison, ScmParams& params);

/// full:             gate_fuse(compare(context_aware(...)))
/// no_context_aware: comparison input is U_r itself
/// no_gate:          F = O
Var scm_forward(ForwardContext& fc, const CandidateSets& batch, ScmParams& params, Ablation ablation);

const char* ablation_name(Ablation a);

}  // namespace scm
