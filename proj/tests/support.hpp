#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scm/autograd.hpp"
#include "scm/model.hpp"
#include "scm/random.hpp"

namespace scm::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = scale * (2.0 * uniform01(rng) - 1.0);
  return t;
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is ~0 from turning rounding noise into a large ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Central differences for every entry of every leaf input. `build` receives
/// a fresh graph and the input leaves and returns a scalar.
inline GradReport check_inputs(const std::function<Var(Graph&, const std::vector<Var>&)>& build,
                               std::vector<Tensor> inputs, double h = 1e-5) {
  Graph g;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(g.input(t));
  Var loss = build(g, leaves);
  g.backward(loss);

  auto eval = [&](const std::vector<Tensor>& values) {
    Graph ng(false);
    std::vector<Var> ls;
    for (const Tensor& t : values) ls.push_back(ng.input(t, false));
    return build(ng, ls).value()[0];
  };

  GradReport rep;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& grad = leaves[i].grad();
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double up = eval(inputs);
      inputs[i][j] = saved - h;
      const double down = eval(inputs);
      inputs[i][j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grad.empty() ? 0.0 : grad[j];
      const double rel = relative_error(analytic, numeric);
      ++rep.checked;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = "input " + std::to_string(i) + "[" + std::to_string(j) + "] analytic " + std::to_string(analytic) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return rep;
}

/// Same check over model parameters; `loss` builds the scalar on the given
/// graph (eval mode, so dropout is off and the function is deterministic).
inline GradReport check_parameters(const std::vector<Parameter*>& params, const std::function<Var(Graph&)>& loss,
                                   double h = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  std::vector<Tensor> grads;
  for (Parameter* p : params) grads.push_back(p->grad);

  auto eval = [&] {
    Graph g(false);
    return loss(g).value()[0];
  };
  GradReport rep;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double saved = p.value[j];
      p.value[j] = saved + h;
      const double up = eval();
      p.value[j] = saved - h;
      const double down = eval();
      p.value[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = relative_error(grads[i][j], numeric);
      ++rep.checked;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = p.name + "[" + std::to_string(j) + "] analytic " + std::to_string(grads[i][j]) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return rep;
}

// Straight-line reference math on plain tensors, written without the graph.
namespace ref {

inline Tensor mm(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

inline Tensor add(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Tensor add_row(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) a.at(i, j) += b[j];
  return a;
}

inline Tensor apply(Tensor a, double (*f)(double)) {
  for (double& x : a.data()) x = f(x);
  return a;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Tensor layer_norm(Tensor x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) x.at(i, j) = (x.at(i, j) - mean) / std::sqrt(var + eps) * gain[j] + bias[j];
  }
  return x;
}

/// Full self-attention of all rows with `heads` column slices.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const std::size_t L = q.rows(), S = k.rows(), dk = q.cols() / heads;
  Tensor out({L, v.cols()});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> w(S);
      double mx = -1e300, z = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += q.at(i, h * dk + c) * k.at(j, h * dk + c);
        w[j] = dot / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, w[j]);
      }
      for (double& x : w) z += (x = std::exp(x - mx));
      for (std::size_t c = 0; c < dk; ++c) {
        double o = 0.0;
        for (std::size_t j = 0; j < S; ++j) o += w[j] / z * v.at(j, h * dk + c);
        out.at(i, h * dk + c) = o;
      }
    }
  return out;
}

inline Tensor block(const Tensor& x, const TransformerLayer& l, std::size_t heads) {
  Tensor attn = mm(attention(mm(x, l.wq.value), mm(x, l.wk.value), mm(x, l.wv.value), heads), l.wo.value);
  Tensor y = layer_norm(add(x, attn), l.ln1_gain.value, l.ln1_bias.value);
  Tensor hidden = apply(add_row(mm(y, l.ffn_w1.value), l.ffn_b1.value), [](double v) { return std::tanh(v); });
  Tensor z = add_row(mm(hidden, l.ffn_w2.value), l.ffn_b2.value);
  return layer_norm(add(y, z), l.ln2_gain.value, l.ln2_bias.value);
}

}  // namespace ref

}  // namespace scm::test
