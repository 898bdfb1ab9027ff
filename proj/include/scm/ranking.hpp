#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scm/data.hpp"
#include "scm/model.hpp"
#include "scm/optim.hpp"

namespace scm {

/// degrees_i = f_i . u_c. `u_c` is one context vector [d] shared by every
/// row, or one per row [m x d] (poly mode).
Var score(Var u_c, Var f);

/// -log softmax(degrees)[gold] over one candidate list [m], m >= 2.
Var listwise_loss(Var degrees, std::size_t gold);

struct ScoreMatrix {
  Var degrees;                 // [B x m]
  std::vector<std::size_t> gold;
  std::vector<std::size_t> kept;  // batch positions that survived de-duplication
};

/// Every kept response is a candidate for every kept context; row i is scored
/// with context i's representation and labelled i. Later occurrences of a gold
/// response that already appeared in the batch (after whitespace
/// normalization) are dropped and reported through `warn`. Throws
/// ContractError if fewer than two pairs remain.
ScoreMatrix in_batch_forward(ForwardContext& fc, Model& model, const std::vector<const Session*>& batch,
                             const std::function<void(const std::string&)>& warn = {});

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 5;
  std::uint64_t seed = 50;
  double lr_encoder = 5e-4;
  double lr_scm = 5e-4;
  double warmup_ratio = 0.1;
  double clip = 1.0;
};

struct LossPoint {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
};

struct FitResult {
  std::vector<LossPoint> curve;     // one point per optimizer step
  std::vector<double> epoch_means;  // mean batch loss per epoch
  std::size_t skipped_batches = 0;
  std::size_t dropped_duplicates = 0;
};

struct FitHooks {
  std::function<void(const std::string&)> warn;
  /// Called after each completed epoch (checkpointing, progress).
  std::function<void(std::size_t epoch, const FitResult&)> on_epoch;
};

/// In-batch-negative training. Batches are a seeded shuffle per epoch; a
/// trailing partial batch of one session is skipped. On a non-finite loss or
/// gradient the parameters are restored to the end of the last completed
/// epoch (the initial state during epoch 0) and NumericError is thrown.
FitResult fit(const std::vector<Session>& train, Model& model, const TrainConfig& config, const FitHooks& hooks = {});

/// "epoch,step,loss" with a header line.
std::string loss_curve_csv(const FitResult& result);

/// Indices sorted by degree descending, ties by ascending index.
std::vector<std::size_t> rank_candidates(const std::vector<double>& degrees);

struct Selection {
  std::vector<std::size_t> ranking;
  std::vector<double> degrees;
  std::size_t selected() const { return ranking.front(); }
};

/// Throws DataError on an empty candidate list.
Selection select(Model& model, const std::vector<std::string>& turns, const std::vector<std::string>& candidates);

}  // namespace scm
