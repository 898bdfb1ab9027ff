#include "scm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "scm/errors.hpp"
#include "scm/kernels.hpp"

namespace scm {

void Parameter::zero_grad() {
  if (grad.empty()) grad = Tensor(value.shape());
  else grad.fill(0.0);
}

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.leaf = true;
  n.param = &p;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  param_nodes_[&p] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  return n.leaf ? n.leaf_grad : n.grad;
}

Var Graph::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](std::size_t i) { return nodes_[i].requires_grad; });
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("loss belongs to a different graph");
  if (!record_) throw ContractError("backward on a graph built without recording");
  if (value(loss.id).size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(value(loss.id).shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.leaf) {
      Tensor& target = n.param ? n.param->grad : n.leaf_grad;
      if (target.empty()) target = Tensor(n.value.shape());
      kernels::active().axpy(1.0, n.grad.ptr(), target.ptr(), target.size());
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

namespace ops {
namespace {

const kernels::KernelTable& K() { return kernels::active(); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void check_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (B.rank() != 2 || A.rank() > 2 || A.cols() != B.rows())
    throw DimensionError("matmul: inner extents differ, " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(A.rank() == 1 ? Shape{n} : Shape{m, n});
  K().gemm_nn(m, n, k, A.ptr(), B.ptr(), C.ptr());
  return a.graph->push(std::move(C), {a.id, b.id}, [a, b, m, n, k](Graph& g, std::size_t self) {
    const Tensor& dC = g.upstream(self);
    if (g.requires_grad(a.id)) K().gemm_nt(m, k, n, dC.ptr(), g.value(b.id).ptr(), g.grad_buffer(a.id).ptr());
    if (g.requires_grad(b.id)) K().gemm_tn(k, n, m, g.value(a.id).ptr(), dC.ptr(), g.grad_buffer(b.id).ptr());
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols())
    throw DimensionError("matmul_nt: inner extents differ, " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()) + "^T");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C({m, n});
  K().gemm_nt(m, n, k, A.ptr(), B.ptr(), C.ptr());
  return a.graph->push(std::move(C), {a.id, b.id}, [a, b, m, n, k](Graph& g, std::size_t self) {
    const Tensor& dC = g.upstream(self);
    if (g.requires_grad(a.id)) K().gemm_nn(m, k, n, dC.ptr(), g.value(b.id).ptr(), g.grad_buffer(a.id).ptr());
    if (g.requires_grad(b.id)) K().gemm_tn(n, k, m, dC.ptr(), g.value(a.id).ptr(), g.grad_buffer(b.id).ptr());
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor T({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) T[j * m + i] = A[i * n + j];
  return a.graph->push(std::move(T), {a.id}, [a, m, n](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    Tensor& ga = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += d[j * m + i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph->push(std::move(out), {a.id}, [a](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    K().axpy(1.0, d.ptr(), g.grad_buffer(a.id).ptr(), d.size());
  });
}

Var add(Var a, Var b) {
  check_same_graph(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  K().axpy(1.0, b.value().ptr(), out.ptr(), out.size());
  return a.graph->push(std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    for (std::size_t in : {a.id, b.id})
      if (g.requires_grad(in)) K().axpy(1.0, d.ptr(), g.grad_buffer(in).ptr(), d.size());
  });
}

Var sub(Var a, Var b) {
  check_same_graph(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  K().axpy(-1.0, b.value().ptr(), out.ptr(), out.size());
  return a.graph->push(std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    if (g.requires_grad(a.id)) K().axpy(1.0, d.ptr(), g.grad_buffer(a.id).ptr(), d.size());
    if (g.requires_grad(b.id)) K().axpy(-1.0, d.ptr(), g.grad_buffer(b.id).ptr(), d.size());
  });
}

Var mul(Var a, Var b) {
  check_same_graph(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.graph->push(std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    if (g.requires_grad(a.id)) {
      Tensor& ga = g.grad_buffer(a.id);
      const Tensor& B = g.value(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * B[i];
    }
    if (g.requires_grad(b.id)) {
      Tensor& gb = g.grad_buffer(b.id);
      const Tensor& A = g.value(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * A[i];
    }
  });
}

Var add_row(Var x, Var b) {
  check_same_graph(x, b);
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (b.value().size() != cols)
    throw DimensionError("add_row: bias " + shape_string(b.value().shape()) + " does not match rows of " +
                         shape_string(X.shape()));
  Tensor out = X;
  for (std::size_t r = 0; r < rows; ++r) K().axpy(1.0, b.value().ptr(), out.ptr() + r * cols, cols);
  return x.graph->push(std::move(out), {x.id, b.id}, [x, b, rows, cols](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    if (g.requires_grad(x.id)) K().axpy(1.0, d.ptr(), g.grad_buffer(x.id).ptr(), d.size());
    if (g.requires_grad(b.id)) {
      Tensor& gb = g.grad_buffer(b.id);
      for (std::size_t r = 0; r < rows; ++r) K().axpy(1.0, d.ptr() + r * cols, gb.ptr(), cols);
    }
  });
}

Var affine(Var x, double alpha, double beta) {
  Tensor out = x.value();
  for (double& v : out.data()) v = alpha * v + beta;
  return x.graph->push(std::move(out), {x.id}, [x, alpha](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    K().axpy(alpha, d.ptr(), g.grad_buffer(x.id).ptr(), d.size());
  });
}

Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  return x.graph->push(std::move(out), {x.id}, [x](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return x.graph->push(std::move(out), {x.id}, [x](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * y[i] * (1.0 - y[i]);
  });
}

namespace {

void softmax_row_inplace(double* row, std::size_t n) {
  double mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    s += row[j];
  }
  const double inv = 1.0 / s;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

// dx = y * (dy - <dy, y>)
void softmax_row_backward(const double* y, const double* dy, double* dx, std::size_t n) {
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace

Var softmax_rows(Var x) {
  const Tensor& X = x.value();
  for (double v : X.data())
    if (std::isnan(v)) throw NumericError("softmax_rows: NaN in input");
  Tensor out = X;
  const std::size_t rows = out.rows(), cols = out.cols();
  for (std::size_t r = 0; r < rows; ++r) softmax_row_inplace(out.ptr() + r * cols, cols);
  return x.graph->push(std::move(out), {x.id}, [x, rows, cols](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t r = 0; r < rows; ++r)
      softmax_row_backward(y.ptr() + r * cols, d.ptr() + r * cols, gx.ptr() + r * cols, cols);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_graph(x, gain);
  check_same_graph(x, bias);
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), d = X.cols();
  if (d < 2) throw DimensionError("layer_norm: rows of width " + std::to_string(d) + " are degenerate");
  if (gain.value().size() != d || bias.value().size() != d)
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(d));

  auto xhat = std::make_shared<Tensor>(X.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(X.shape());
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.ptr() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * G[j] + B[j];
    }
  }
  return x.graph->push(std::move(out), {x.id, gain.id, bias.id},
                       [x, gain, bias, xhat, inv_std, rows, d](Graph& g, std::size_t self) {
                         const Tensor& dy = g.upstream(self);
                         const Tensor& G = g.value(gain.id);
                         if (g.requires_grad(gain.id)) {
                           Tensor& gg = g.grad_buffer(gain.id);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < d; ++j) gg[j] += dy[r * d + j] * (*xhat)[r * d + j];
                         }
                         if (g.requires_grad(bias.id)) {
                           Tensor& gb = g.grad_buffer(bias.id);
                           for (std::size_t r = 0; r < rows; ++r) K().axpy(1.0, dy.ptr() + r * d, gb.ptr(), d);
                         }
                         if (g.requires_grad(x.id)) {
                           Tensor& gx = g.grad_buffer(x.id);
                           const double invd = 1.0 / static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double s1 = 0.0, s2 = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                               const double dh = dy[r * d + j] * G[j];
                               s1 += dh;
                               s2 += dh * (*xhat)[r * d + j];
                             }
                             const double inv = (*inv_std)[r];
                             for (std::size_t j = 0; j < d; ++j) {
                               const double dh = dy[r * d + j] * G[j];
                               gx[r * d + j] += inv * (dh - invd * s1 - (*xhat)[r * d + j] * invd * s2);
                             }
                           }
                         }
                       });
}

Var layer_norm_residual(Var a, Var b, Var gain, Var bias, double eps) {
  return layer_norm(add(a, b), gain, bias, eps);
}

Var concat_last_axis(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_last_axis: no operands");
  const std::size_t rows = parts[0].value().rows();
  bool all_rank1 = true;
  std::size_t total = 0;
  std::vector<std::size_t> widths, ids;
  for (const Var& p : parts) {
    check_same_graph(parts[0], p);
    if (p.value().rows() != rows)
      throw DimensionError("concat_last_axis: row counts differ, " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    all_rank1 = all_rank1 && p.value().rank() == 1;
    widths.push_back(p.value().cols());
    ids.push_back(p.id);
    total += p.value().cols();
  }
  Tensor out(all_rank1 ? Shape{total} : Shape{rows, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.ptr() + r * w, w, out.ptr() + r * total + off);
    off += w;
  }
  return parts[0].graph->push(std::move(out), ids, [ids, widths, rows, total](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t w = widths[i];
      if (g.requires_grad(ids[i])) {
        Tensor& gi = g.grad_buffer(ids[i]);
        for (std::size_t r = 0; r < rows; ++r) K().axpy(1.0, d.ptr() + r * total + off, gi.ptr() + r * w, w);
      }
      off += w;
    }
  });
}

namespace {
// Uniform double in [0, 1) from the top 53 bits; stable across standard libraries.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
}  // namespace

Var dropout(Var x, double p, bool train, std::mt19937_64* rng) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout probability must be < 1");
  if (!rng) throw ContractError("dropout in train mode needs a random generator");
  const double scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uniform01(*rng) < p ? 0.0 : scale;
    out[i] *= (*mask)[i];
  }
  return x.graph->push(std::move(out), {x.id}, [x, mask](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * (*mask)[i];
  });
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  Tensor out({index.size(), cols});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows)
      throw IndexError("gather_rows: row " + std::to_string(index[i]) + " outside " + shape_string(X.shape()));
    std::copy_n(X.ptr() + index[i] * cols, cols, out.ptr() + i * cols);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return x.graph->push(std::move(out), {x.id}, [x, idx, cols](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < idx->size(); ++i) K().axpy(1.0, d.ptr() + i * cols, gx.ptr() + (*idx)[i] * cols, cols);
  });
}

Var rows_dot(Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw DimensionError("rows_dot: shape mismatch " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = K().dot(A.ptr() + r * cols, B.ptr() + r * cols, cols);
  return a.graph->push(std::move(out), {a.id, b.id}, [a, b, rows, cols](Graph& g, std::size_t self) {
    const Tensor& d = g.upstream(self);
    if (g.requires_grad(a.id)) {
      Tensor& ga = g.grad_buffer(a.id);
      for (std::size_t r = 0; r < rows; ++r) K().axpy(d[r], g.value(b.id).ptr() + r * cols, ga.ptr() + r * cols, cols);
    }
    if (g.requires_grad(b.id)) {
      Tensor& gb = g.grad_buffer(b.id);
      for (std::size_t r = 0; r < rows; ++r) K().axpy(d[r], g.value(a.id).ptr() + r * cols, gb.ptr() + r * cols, cols);
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph->push(Tensor({1}, {s}), {x.id}, [x](Graph& g, std::size_t self) {
    const double d = g.upstream(self)[0];
    for (double& v : g.grad_buffer(x.id).data()) v += d;
  });
}

Var cross_entropy(Var logits, std::vector<std::size_t> gold) {
  const Tensor& L = logits.value();
  const std::size_t rows = L.rows(), cols = L.cols();
  if (gold.size() != rows)
    throw DimensionError("cross_entropy: " + std::to_string(gold.size()) + " labels for " + std::to_string(rows) +
                         " rows");
  for (std::size_t g : gold)
    if (g >= cols)
      throw IndexError("cross_entropy: gold index " + std::to_string(g) + " outside " + std::to_string(cols) +
                       " candidates");
  auto probs = std::make_shared<Tensor>(L);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lr = L.ptr() + r * cols;
    double mx = lr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, lr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(lr[j] - mx);
    loss += (mx + std::log(s)) - lr[gold[r]];
    softmax_row_inplace(probs->ptr() + r * cols, cols);
  }
  loss /= static_cast<double>(rows);
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  auto labels = std::make_shared<std::vector<std::size_t>>(std::move(gold));
  return logits.graph->push(Tensor({1}, {loss}), {logits.id},
                            [logits, probs, labels, rows, cols](Graph& g, std::size_t self) {
                              const double d = g.upstream(self)[0] / static_cast<double>(rows);
                              Tensor& gl = g.grad_buffer(logits.id);
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t j = 0; j < cols; ++j) gl[r * cols + j] += d * (*probs)[r * cols + j];
                                gl[r * cols + (*labels)[r]] -= d;
                              }
                            });
}

Var segment_attention(Var q, Var k, Var v, const std::vector<Segment>& q_segments,
                      const std::vector<Segment>& kv_segments, const AttentionSpec& spec) {
  check_same_graph(q, k);
  check_same_graph(q, v);
  const Tensor& Q = q.value();
  const Tensor& Kt = k.value();
  const Tensor& V = v.value();
  const std::size_t dq = Q.cols(), dv = V.cols();
  if (spec.heads == 0 || dq % spec.heads != 0 || dv % spec.heads != 0)
    throw ConfigError("attention width " + std::to_string(dq) + " is not divisible by " +
                      std::to_string(spec.heads) + " heads");
  if (Kt.cols() != dq) throw DimensionError("attention: query/key widths differ");
  if (Kt.rows() != V.rows()) throw DimensionError("attention: key/value row counts differ");
  if (q_segments.size() != kv_segments.size()) throw DimensionError("attention: segment lists differ in length");
  const std::size_t H = spec.heads, dk = dq / H, dh = dv / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const bool use_dropout = spec.train && spec.dropout > 0.0;
  if (use_dropout && !spec.rng) throw ContractError("attention dropout needs a random generator");
  const double keep_scale = use_dropout ? 1.0 / (1.0 - spec.dropout) : 1.0;

  for (std::size_t s = 0; s < q_segments.size(); ++s) {
    if (q_segments[s].offset + q_segments[s].length > Q.rows() ||
        kv_segments[s].offset + kv_segments[s].length > Kt.rows() || kv_segments[s].length == 0)
      throw DimensionError("attention: segment outside operand rows");
  }

  struct Saved {
    std::vector<std::vector<double>> probs;  // per (segment, head): [ql x kl] softmax
    std::vector<std::vector<double>> masks;  // dropout multipliers, same layout
  };
  auto saved = std::make_shared<Saved>();
  const bool keep = q.graph->recording();

  Tensor out({Q.rows(), dv});
  std::vector<double> qh, kh, vh, p, oh;
  auto slice = [](const Tensor& t, std::size_t off, std::size_t len, std::size_t col, std::size_t w,
                  std::vector<double>& dst) {
    dst.resize(len * w);
    const std::size_t stride = t.cols();
    for (std::size_t r = 0; r < len; ++r) std::copy_n(t.ptr() + (off + r) * stride + col, w, dst.data() + r * w);
  };
  for (std::size_t s = 0; s < q_segments.size(); ++s) {
    const auto [qo, ql] = q_segments[s];
    const auto [ko, kl] = kv_segments[s];
    if (ql == 0) {
      if (keep) {
        for (std::size_t h = 0; h < H; ++h) {
          saved->probs.emplace_back();
          saved->masks.emplace_back();
        }
      }
      continue;
    }
    for (std::size_t h = 0; h < H; ++h) {
      slice(Q, qo, ql, h * dk, dk, qh);
      slice(Kt, ko, kl, h * dk, dk, kh);
      slice(V, ko, kl, h * dh, dh, vh);
      p.assign(ql * kl, 0.0);
      K().gemm_nt(ql, kl, dk, qh.data(), kh.data(), p.data());
      for (double& x : p) x *= scale;
      for (double x : p)
        if (std::isnan(x)) throw NumericError("attention: NaN scores");
      for (std::size_t r = 0; r < ql; ++r) softmax_row_inplace(p.data() + r * kl, kl);
      std::vector<double> mask;
      std::vector<double> used = p;
      if (use_dropout) {
        mask.resize(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          mask[i] = uniform01(*spec.rng) < spec.dropout ? 0.0 : keep_scale;
          used[i] *= mask[i];
        }
      }
      oh.assign(ql * dh, 0.0);
      K().gemm_nn(ql, dh, kl, used.data(), vh.data(), oh.data());
      for (std::size_t r = 0; r < ql; ++r) std::copy_n(oh.data() + r * dh, dh, out.ptr() + (qo + r) * dv + h * dh);
      if (keep) {
        saved->probs.push_back(std::move(p));
        saved->masks.push_back(std::move(mask));
        p = {};
      }
    }
  }

  return q.graph->push(
      std::move(out), {q.id, k.id, v.id},
      [q, k, v, q_segments, kv_segments, saved, H, dk, dh, scale](Graph& g, std::size_t self) {
        const Tensor& dOut = g.upstream(self);
        const Tensor& Q = g.value(q.id);
        const Tensor& Kt = g.value(k.id);
        const Tensor& V = g.value(v.id);
        const bool gq = g.requires_grad(q.id), gk = g.requires_grad(k.id), gv = g.requires_grad(v.id);
        Tensor* dQ = gq ? &g.grad_buffer(q.id) : nullptr;
        Tensor* dK = gk ? &g.grad_buffer(k.id) : nullptr;
        Tensor* dV = gv ? &g.grad_buffer(v.id) : nullptr;
        std::vector<double> qh, kh, vh, doh, dp, ds, tmp_q, tmp_k, tmp_v, used;
        auto slice = [](const Tensor& t, std::size_t off, std::size_t len, std::size_t col, std::size_t w,
                        std::vector<double>& dst) {
          dst.resize(len * w);
          const std::size_t stride = t.cols();
          for (std::size_t r = 0; r < len; ++r)
            std::copy_n(t.ptr() + (off + r) * stride + col, w, dst.data() + r * w);
        };
        auto scatter = [](Tensor& t, std::size_t off, std::size_t len, std::size_t col, std::size_t w,
                          const std::vector<double>& src) {
          const std::size_t stride = t.cols();
          for (std::size_t r = 0; r < len; ++r)
            for (std::size_t c = 0; c < w; ++c) t[(off + r) * stride + col + c] += src[r * w + c];
        };
        std::size_t slot = 0;
        for (std::size_t s = 0; s < q_segments.size(); ++s) {
          const auto [qo, ql] = q_segments[s];
          const auto [ko, kl] = kv_segments[s];
          for (std::size_t h = 0; h < H; ++h, ++slot) {
            if (ql == 0) continue;
            const std::vector<double>& P = saved->probs[slot];
            const std::vector<double>& M = saved->masks[slot];
            slice(dOut, qo, ql, h * dh, dh, doh);
            slice(V, ko, kl, h * dh, dh, vh);
            used = P;
            if (!M.empty())
              for (std::size_t i = 0; i < used.size(); ++i) used[i] *= M[i];
            if (dV) {
              tmp_v.assign(kl * dh, 0.0);
              K().gemm_tn(kl, dh, ql, used.data(), doh.data(), tmp_v.data());
              scatter(*dV, ko, kl, h * dh, dh, tmp_v);
            }
            if (!dQ && !dK) continue;
            dp.assign(ql * kl, 0.0);
            K().gemm_nt(ql, kl, dh, doh.data(), vh.data(), dp.data());
            if (!M.empty())
              for (std::size_t i = 0; i < dp.size(); ++i) dp[i] *= M[i];
            ds.assign(ql * kl, 0.0);
            for (std::size_t r = 0; r < ql; ++r)
              softmax_row_backward(P.data() + r * kl, dp.data() + r * kl, ds.data() + r * kl, kl);
            for (double& x : ds) x *= scale;
            if (dQ) {
              slice(Kt, ko, kl, h * dk, dk, kh);
              tmp_q.assign(ql * dk, 0.0);
              K().gemm_nn(ql, dk, kl, ds.data(), kh.data(), tmp_q.data());
              scatter(*dQ, qo, ql, h * dk, dk, tmp_q);
            }
            if (dK) {
              slice(Q, qo, ql, h * dk, dk, qh);
              tmp_k.assign(kl * dk, 0.0);
              K().gemm_tn(kl, dk, ql, ds.data(), qh.data(), tmp_k.data());
              scatter(*dK, ko, kl, h * dk, dk, tmp_k);
            }
          }
        }
      });
}

}  // namespace ops
}  // namespace scm
