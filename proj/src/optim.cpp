#include "scm/optim.hpp"

#include <cmath>

#include "scm/errors.hpp"

namespace scm {

std::size_t warmup_steps_for(double ratio, std::size_t total_steps) {
  if (ratio < 0.0) throw ConfigError("warmup ratio must be nonnegative");
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(total_steps)));
}

double warmup_factor(std::size_t step, std::size_t warmup) {
  if (warmup == 0) return 1.0;
  return std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup));
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

StepStats Adam::step() {
  StepStats s;
  double sq = 0.0;
  for (Parameter* p : params_) {
    if (p->grad.empty()) continue;
    if (p->grad.shape() != p->value.shape())
      throw DimensionError("gradient of " + p->name + " has shape " + shape_string(p->grad.shape()));
    for (double g : p->grad.data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p->name);
      sq += g * g;
    }
  }
  s.grad_norm = std::sqrt(sq);
  if (config_.clip > 0.0 && s.grad_norm > config_.clip) s.clip_scale = config_.clip / s.grad_norm;
  s.lr_factor = warmup_factor(t_, config_.warmup_steps);

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    const double lr = (p.group == ParamGroup::scm ? config_.lr_scm : config_.lr_encoder) * s.lr_factor;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const bool has_grad = !p.grad.empty();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = has_grad ? p.grad[j] * s.clip_scale : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      p.value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
  return s;
}

}  // namespace scm
