#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedrank/tensor.hpp"

namespace fedrank {

inline constexpr double kLayerNormEps = 1e-5;

// Reverse-mode gradient tape over double-precision kernels.
//
// Nodes are recorded in execution order; backward() replays them in reverse,
// accumulating exactly one gradient contribution per input use. Values and
// gradients live in flat arenas so a tape can be reset and reused across
// batches without reallocation. A tape instance is confined to one thread;
// the kernels themselves are pure.
class Tape {
 public:
  using VarId = std::int32_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaf holding a copy of `t`; gradients accumulate into its arena slot.
  VarId leaf(const Tensor& t);

  // y[r,o] = sum_i W[o,i] * x[r,i] (+ b[o]). W is [d_out, d_in]; x may be
  // rank 1 or 2 with trailing dim d_in. Pass b = -1 for no bias.
  VarId linear(VarId x, VarId W, VarId b = -1);

  VarId add(VarId a, VarId b);
  VarId scale(VarId a, double c);

  // Row-wise softmax with max-subtraction over the trailing axis.
  VarId softmax_rows(VarId x);

  // Per-row normalization: (x - mean) / sqrt(var + eps) * gain + bias.
  VarId layer_norm(VarId x, VarId gain, VarId bias);

  // Elementwise GELU, tanh approximation.
  VarId gelu(VarId x);

  // Gather rows of `table` ([n, d]) by index; output [ids.size(), d].
  VarId gather_rows(VarId table, const std::vector<int>& ids);

  // Multi-head scaled dot-product attention. q, k, v are [seq, d] with d
  // divisible by heads; per head: softmax(scale * Q_h K_h^T) V_h, heads
  // concatenated back to [seq, d].
  VarId attention(VarId q, VarId k, VarId v, int heads, double scale);

  VarId select_row(VarId x, std::size_t row);
  VarId dot(VarId a, VarId b);

  // max(0, 1 - pos + neg); subgradient at the kink is zero.
  VarId hinge(VarId pos, VarId neg);

  VarId sum_scalars(const std::vector<VarId>& xs);

  void backward(VarId output);

  double scalar_value(VarId id) const { return vals_[nodes_[id].off]; }
  std::span<const double> value(VarId id) const {
    const Node& n = nodes_[id];
    return {vals_.data() + n.off, n.len};
  }
  std::span<const double> grad(VarId id) const {
    const Node& n = nodes_[id];
    return {grads_.data() + n.off, n.len};
  }
  Tensor value_tensor(VarId id) const { return make_tensor(id, vals_); }
  Tensor grad_tensor(VarId id) const { return make_tensor(id, grads_); }

  // Attention probabilities saved by node `id` for `head`; rows sum to 1.
  std::span<const double> attention_probs(VarId id, int head) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Drop all nodes and arena contents, keeping capacity.
  void reset();

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kLinear,
    kAdd,
    kScale,
    kSoftmax,
    kLayerNorm,
    kGelu,
    kGather,
    kAttention,
    kSelectRow,
    kDot,
    kHinge,
    kSumScalars,
  };

  struct Node {
    Op op;
    std::uint8_t rank;
    int heads = 0;
    VarId in0 = -1, in1 = -1, in2 = -1;
    std::int64_t aux_off = 0;
    std::int64_t aux_len = 0;
    std::int64_t save_off = -1;
    double scalar = 0.0;
    std::size_t rows = 0, cols = 0;
    std::size_t off = 0, len = 0;
  };

  VarId push(Op op, std::uint8_t rank, std::size_t rows, std::size_t cols);
  std::size_t alloc(std::size_t n);
  std::size_t alloc_save(std::size_t n);
  Tensor make_tensor(VarId id, const std::vector<double>& arena) const;
  void check_exists(VarId id, const char* who) const;

  void backward_node(const Node& n);

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> grads_;
  std::vector<double> save_;
  std::vector<int> aux_;
  std::vector<double> scratch_;
};

// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-8), numeric by central differences of `build`'s scalar output. `build`
// must add one leaf per tensor in `params`, in order, and return the output.
double grad_check(
    const std::function<Tape::VarId(Tape&, const std::vector<Tape::VarId>&)>& build,
    const std::vector<Tensor>& params, double step = 1e-5);

}  // namespace fedrank
