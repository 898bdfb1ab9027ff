#pragma once

#include <cstddef>
#include <vector>

#include "scm/autograd.hpp"

namespace scm {

struct AdamConfig {
  double lr_encoder = 5e-4;
  double lr_scm = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 1.0;  // global gradient norm; <= 0 disables clipping
  std::size_t warmup_steps = 0;
};

/// ceil(ratio * total_steps).
std::size_t warmup_steps_for(double ratio, std::size_t total_steps);
/// Linear ramp min(1, (step + 1) / warmup); 1 when warmup is 0.
double warmup_factor(std::size_t step, std::size_t warmup);

struct StepStats {
  double grad_norm = 0.0;  // before clipping
  double clip_scale = 1.0;
  double lr_factor = 1.0;
};

/// Adam with global-norm clipping, linear warmup and per-group learning rates.
/// Holds one moment pair per parameter, bound by position to the parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  std::size_t steps_taken() const { return t_; }

  /// Throws NumericError naming the first parameter with a non-finite gradient
  /// before anything is modified. Parameters without a gradient count as zero.
  StepStats step();

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace scm
