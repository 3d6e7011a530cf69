#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvrt/model.hpp"
#include "cvrt/rng.hpp"
#include "cvrt/tape.hpp"

namespace cvrt {

enum class Side { input, response, extra_context };

// Builds the differentiable encoder graph for one batch on one tape.
//
// Under quantized execution, parameter leaves hold the rendered values
// (dequantized 8-bit embeddings, 16-bit casts of everything else) and the
// tape rounds activations through binary16. Gradients read at the leaves are
// straight-through gradients for the full-precision shadows.
class Forward {
 public:
  struct Options {
    bool quantized = false;
    bool training = false;  // parameter leaves need gradients; dropout active
    double dropout = 0.0;
    Rng* rng = nullptr;     // required when training with dropout > 0
  };

  Forward(Model& model, Tape& tape, Options opt);

  // Leaf for a named parameter, created on first use and cached, so both
  // encoder sides share one node per tensor.
  Tape::NodeId param(const std::string& name);

  // [batch, r_dim] reduced representations. Sequences may be empty; ids must
  // be valid for the embedding table.
  Tape::NodeId encode_r(const std::vector<std::vector<int>>& seqs);

  // [batch, out_dim] unit-norm rows through the side's projection head.
  Tape::NodeId project(Tape::NodeId r, Side side);

  Tape::NodeId encode_h(const std::vector<std::vector<int>>& seqs, Side side) {
    return project(encode_r(seqs), side);
  }

  // State of the most recent encode_r, for diagnostics and oracles.
  Tape::NodeId embedding_output() const { return embed_out_; }
  Tape::NodeId last_block_output() const { return last_block_out_; }
  int last_pad_len() const { return pad_len_; }
  const std::vector<int>& last_lens() const { return lens_; }

  const std::unordered_map<std::string, Tape::NodeId>& param_leaves() const {
    return leaves_;
  }

 private:
  Tape::NodeId transformer_block(Tape::NodeId x, int layer, int seqs, int len);
  std::shared_ptr<const std::vector<uint8_t>> attention_mask(int cap, int seqs, int len);

  Model& model_;
  Tape& tape_;
  Options opt_;
  std::unordered_map<std::string, Tape::NodeId> leaves_;
  std::unordered_map<int, std::shared_ptr<const std::vector<uint8_t>>> mask_cache_;
  std::vector<int> lens_;
  int pad_len_ = 0;
  Tape::NodeId embed_out_ = -1;
  Tape::NodeId last_block_out_ = -1;
};

// Reference reduction: per head, softmax the position scores over real
// positions, form the weighted sum of rows explicitly, scale by sqrt(len),
// concatenate heads. `x` is the final block output, flattened [seqs*len, D];
// head vectors are passed as plain tensors.
Tensor reduce_reference(const Tensor& x, const std::vector<Tensor>& head_vecs,
                        const std::vector<int>& lens, int pad_len);

}  // namespace cvrt
