#include "scm/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "scm/errors.hpp"
#include "scm/vocab.hpp"

namespace scm {

Var score(Var u_c, Var f) {
  const Tensor& U = u_c.value();
  const Tensor& F = f.value();
  if (U.cols() != F.cols())
    throw DimensionError("score: context width " + std::to_string(U.cols()) + " vs candidate width " +
                         std::to_string(F.cols()));
  Var rows = u_c;
  if (U.rank() == 1) rows = ops::gather_rows(u_c, std::vector<std::size_t>(F.rows(), 0));
  return ops::rows_dot(f, rows);
}

Var listwise_loss(Var degrees, std::size_t gold) {
  const Tensor& D = degrees.value();
  if (D.rank() != 1) throw DimensionError("listwise_loss: expected [m] degrees, got " + shape_string(D.shape()));
  if (D.size() < 2) throw ContractError("listwise_loss needs at least 2 candidates");
  if (gold >= D.size())
    throw IndexError("listwise_loss: gold index " + std::to_string(gold) + " outside " + std::to_string(D.size()) +
                     " candidates");
  return ops::cross_entropy(degrees, {gold});
}

namespace {

std::string normalized(const std::string& s) {
  std::string out;
  for (const std::string& w : split_whitespace(s)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

ScoreMatrix in_batch_forward(ForwardContext& fc, Model& model, const std::vector<const Session*>& batch,
                             const std::function<void(const std::string&)>& warn) {
  ScoreMatrix out;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto [it, fresh] = seen.emplace(normalized(batch[i]->response), i);
    if (fresh) out.kept.push_back(i);
    else if (warn)
      warn("batch position " + std::to_string(i) + " repeats the gold response of position " +
           std::to_string(it->second) + "; pair dropped");
  }
  const std::size_t b = out.kept.size();
  if (b < 2) throw ContractError("in-batch scoring needs at least 2 distinct pairs, got " + std::to_string(b));

  std::vector<TokenSeq> contexts, responses;
  for (std::size_t i : out.kept) {
    contexts.push_back(model.tokenize_context(batch[i]->turns));
    responses.push_back(model.tokenize_response(batch[i]->response));
  }
  std::vector<std::size_t> all(b);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Var flat = model.degrees(fc, contexts, responses, std::vector<std::vector<std::size_t>>(b, all));
  out.degrees = ops::reshape(flat, {b, b});
  out.gold = all;
  return out;
}

namespace {

std::vector<Tensor> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<Parameter*>& params, const std::vector<Tensor>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
}

}  // namespace

FitResult fit(const std::vector<Session>& train, Model& model, const TrainConfig& config, const FitHooks& hooks) {
  if (train.empty()) throw DataError("training set is empty");
  if (config.batch_size < 2) throw ConfigError("batch size must be at least 2 for in-batch negatives");

  const std::size_t batches_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches_per_epoch * config.epochs;
  AdamConfig ac;
  ac.lr_encoder = config.lr_encoder;
  ac.lr_scm = config.lr_scm;
  ac.clip = config.clip;
  ac.warmup_steps = warmup_steps_for(config.warmup_ratio, total_steps);
  std::vector<Parameter*> params = model.parameters();
  Adam adam(params, ac);

  Rng order_rng(config.seed);
  Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  FitResult result;
  std::vector<Tensor> last_good = snapshot(params);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, order_rng);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const Session*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
      if (batch.size() < 2) {
        ++result.skipped_batches;
        continue;
      }
      try {
        Graph g(true);
        ForwardContext fc{g, true, model.config().dropout, &dropout_rng};
        std::size_t dropped = 0;
        auto on_dup = [&](const std::string& msg) {
          ++dropped;
          if (hooks.warn) hooks.warn(msg);
        };
        ScoreMatrix sm;
        try {
          sm = in_batch_forward(fc, model, batch, on_dup);
        } catch (const ContractError& e) {
          result.dropped_duplicates += dropped;
          ++result.skipped_batches;
          if (hooks.warn) hooks.warn(std::string("batch skipped: ") + e.what());
          continue;
        }
        result.dropped_duplicates += dropped;
        Var loss = ops::cross_entropy(sm.degrees, sm.gold);
        model.zero_grad();
        g.backward(loss);
        adam.step();
        const double value = loss.value()[0];
        result.curve.push_back({epoch, step, value});
        total += value;
        ++counted;
        ++step;
      } catch (const NumericError& e) {
        restore(params, last_good);
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + "); parameters restored to the last completed epoch");
      }
    }
    result.epoch_means.push_back(counted ? total / static_cast<double>(counted) : 0.0);
    last_good = snapshot(params);
    if (hooks.on_epoch) hooks.on_epoch(epoch, result);
  }
  return result;
}

std::string loss_curve_csv(const FitResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,step,loss\n";
  for (const LossPoint& p : result.curve) out << p.epoch << ',' << p.step << ',' << p.loss << '\n';
  return out.str();
}

std::vector<std::size_t> rank_candidates(const std::vector<double>& degrees) {
  std::vector<std::size_t> idx(degrees.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return degrees[a] > degrees[b]; });
  return idx;
}

Selection select(Model& model, const std::vector<std::string>& turns, const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw DataError("select: empty candidate list");
  Selection s;
  s.degrees = model.score(turns, candidates);
  s.ranking = rank_candidates(s.degrees);
  return s;
}

}  // namespace scm
