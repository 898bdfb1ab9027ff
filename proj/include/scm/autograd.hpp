#pragma once

// Reverse-mode differentiation over a per-forward computation record.
//
// A Graph owns every intermediate value created during one forward pass, in
// creation order. Creation order is a topological order, so backward() walks
// the record once in reverse. Parameters live outside the graph and receive
// accumulated gradients when a graph that read them is differentiated.

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "scm/tensor.hpp"

namespace scm {

enum class ParamGroup { encoder, scm };

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::encoder;
  Tensor value;
  Tensor grad;  // same shape as value once allocated; empty means zero

  void zero_grad();
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  /// With record=false no backward closures are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the graph (tests, probes).
  Var input(Tensor value, bool requires_grad = true);
  /// Leaf bound to a parameter; reused if the same parameter is read twice.
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss)=1 and accumulates into every reachable leaf.
  /// Repeated calls accumulate into parameter and input-leaf gradients.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Op implementation interface.
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  /// Gradient buffer of node `id`, zero-initialized on first touch.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Tensor leaf_grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool leaf = false;
  };

  bool record_;
  std::deque<Node> nodes_;  // deque: value references survive later pushes
  std::unordered_map<Parameter*, std::size_t> param_nodes_;
};

/// State shared by one forward pass: graph, train/eval mode and dropout RNG.
struct ForwardContext {
  Graph& graph;
  bool train = false;
  double dropout = 0.1;
  std::mt19937_64* rng = nullptr;
};

/// Row range [offset, offset + length) of a stacked matrix.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

namespace ops {

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// x[n x d] + b[d] broadcast over rows.
Var add_row(Var x, Var b);
/// alpha * x + beta elementwise.
Var affine(Var x, double alpha, double beta);
Var linear(Var x, Var w, Var b);

Var tanh(Var x);
Var sigmoid(Var x);
Var softmax_rows(Var x);

inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
/// layer_norm(a + b): the residual form used after every sublayer.
Var layer_norm_residual(Var a, Var b, Var gain, Var bias, double eps = kLayerNormEps);

Var concat_last_axis(const std::vector<Var>& parts);
/// Identity in eval mode; in train mode zeroes each entry with probability p
/// and rescales survivors by 1/(1-p).
Var dropout(Var x, double p, bool train, std::mt19937_64* rng);

/// out[i] = x[index[i]]; backward scatters-adds.
Var gather_rows(Var x, std::vector<std::size_t> index);
/// Per-row dot product of two equally shaped matrices -> [n].
Var rows_dot(Var a, Var b);
Var sum(Var x);
/// Mean over rows of -log softmax(logits[r])[gold[r]]. logits may be rank 1.
Var cross_entropy(Var logits, std::vector<std::size_t> gold);

struct AttentionSpec {
  std::size_t heads = 1;
  double dropout = 0.0;
  bool train = false;
  std::mt19937_64* rng = nullptr;
};

/// Scaled dot-product attention per head and per segment pair. Query rows of
/// q_segments[s] attend to key/value rows of kv_segments[s]; heads split the
/// columns into equal slices of width d/heads and outputs are re-concatenated.
Var segment_attention(Var q, Var k, Var v, const std::vector<Segment>& q_segments,
                      const std::vector<Segment>& kv_segments, const AttentionSpec& spec);

}  // namespace ops
}  // namespace scm
