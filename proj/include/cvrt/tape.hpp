#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "cvrt/rng.hpp"
#include "cvrt/tensor.hpp"

namespace cvrt {

// Reverse-mode autodiff over a define-by-run graph of Tensor ops. One tape
// owns one forward/backward pass; gradients land on the leaf nodes that were
// created with needs_grad = true.
//
// When fp16_activations is set, every op output is rounded through binary16
// before downstream ops consume it (mixed-precision simulation). Gradients
// pass straight through the rounding. The numerically sensitive ops still do
// their internal computation in full precision.
class Tape {
 public:
  using NodeId = int;

  Tape() = default;
  explicit Tape(bool fp16_activations) : fp16_activations_(fp16_activations) {}

  bool fp16_activations() const { return fp16_activations_; }

  NodeId leaf(Tensor value, bool needs_grad);

  // c = a @ b                       [m,k] x [k,n] -> [m,n]
  NodeId matmul(NodeId a, NodeId b);
  // c = a @ b^T                     [m,k] x [n,k] -> [m,n]
  NodeId matmul_nt(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  // broadcast-add a 1xN bias to every row
  NodeId add_rowvec(NodeId a, NodeId bias);
  NodeId scale(NodeId a, double c);
  NodeId gelu(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
  NodeId l2_normalize_rows(NodeId x);
  // mask: empty = none, else rows*cols flags; masked entries get exactly 0.
  NodeId softmax_masked(NodeId scores, std::shared_ptr<const std::vector<uint8_t>> mask);
  NodeId log_softmax_rows(NodeId scores);
  // out[i] = src[idx[i]]; backward scatter-adds into src rows.
  NodeId rows_gather(NodeId src, std::shared_ptr<const std::vector<int>> idx);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId reshape(NodeId a, int rows, int cols);
  // inverted dropout; identity when rate == 0.
  NodeId dropout(NodeId a, double rate, Rng& rng);

  // Per-sequence attention scores: q,k are [seqs*len, dim]; output
  // [seqs*len, len] holds q_i . k_j / sqrt(dim) within each sequence.
  NodeId attn_scores(NodeId q, NodeId k, int seqs, int len);
  // scores[s*len+i][j] += bias[j - i + max_len - 1]; bias is 1 x (2*max_len-1).
  NodeId add_relative_bias(NodeId scores, NodeId bias, int seqs, int len, int max_len);
  // out[s*len+i] = sum_j probs[s*len+i][j] * x[s*len+j]
  NodeId attn_apply(NodeId probs, NodeId x, int seqs, int len);
  // out[s] = scale[s] * sum_j w[s][j] * x[s*len+j]; w is [seqs, len].
  NodeId seq_weighted_sum(NodeId w, NodeId x, std::shared_ptr<const std::vector<double>> row_scale);

  // scalar = sum_ij weights[i][j] * a[i][j]
  NodeId weighted_sum_all(NodeId a, std::shared_ptr<const Tensor> weights);

  const Tensor& val(NodeId id) const { return nodes_[id].val; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  double scalar(NodeId id) const { return nodes_[id].val.v[0]; }

  // Seeds d(loss)/d(loss) = seed and propagates. The seed carries the loss
  // scale so small gradients survive a 16-bit backward.
  void backward(NodeId loss, double seed = 1.0);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool needs_grad{false};
    std::function<void()> back;  // adds into input grads
  };

  NodeId push(Tensor val, bool needs_grad, std::function<void()> back);
  Tensor& mut_grad(NodeId id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  bool fp16_activations_{false};
};

}  // namespace cvrt
