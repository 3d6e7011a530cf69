#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvrt/params.hpp"

namespace cvrt {

// Rows of the two learned positional matrices. 47 and 11 are coprime, so
// positions 0..516 all see distinct row pairs.
inline constexpr int kPosRows1 = 47;
inline constexpr int kPosRows2 = 11;

struct ModelConfig {
  int vocab_size = 0;
  int oov_buckets = 1000;
  int embed_dim = 512;
  int num_blocks = 6;
  int qk_dim = 64;
  int ff1_dim = 2048;
  int ff2_layers = 3;
  int out_dim = 512;
  int max_seq_len = 60;
  int reduction_heads = 2;            // ablation E: 1
  int attention_heads = 1;            // ablation A: 8
  bool use_relative_bias = true;      // ablation B: false
  std::vector<int> relative_caps = {3, 5, 48, 48, 48, 48};  // ablation C: all 48
  bool ff2_skip = true;               // ablation F: false
  bool multi_context = false;
  int64_t trained_steps = 0;          // checkpoint resume state

  int table_rows() const { return vocab_size + oov_buckets; }
  int r_dim() const { return embed_dim * reduction_heads; }

  void validate() const;  // throws std::invalid_argument
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// The graduated default window pattern, adapted to the block count.
std::vector<int> default_caps(int num_blocks);

struct Model {
  ModelConfig cfg;
  ParamStore params;
};

// Orthogonal weight matrices, zero biases, unit layer-norm gains, Gaussian
// (sigma 0.1) embeddings and positional rows. Embedding quantization ranges
// start from the observed initial values. Deterministic in the seed.
Model init_model(const ModelConfig& cfg, uint64_t seed);

}  // namespace cvrt
