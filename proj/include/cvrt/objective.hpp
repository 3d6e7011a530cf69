#pragma once

#include <cstdint>
#include <vector>

#include "cvrt/tape.hpp"
#include "cvrt/tensor.hpp"

namespace cvrt {

struct ScoreConfig {
  int dim = 512;               // encoding dimension d
  double anneal_steps = 10000;
  double smoothing = 0.2;      // probability mass spread over negatives
};

// c(t) = 1 + (sqrt(d) - 1) * min(t / anneal_steps, 1).
double anneal_scale(int64_t step, const ScoreConfig& cfg);

// S = c(step) * (h_x . h_y). Debug builds assert both inputs are unit norm
// within 1%.
double score(const Tensor& h_x, const Tensor& h_y, int64_t step, const ScoreConfig& cfg);

// K x K scaled score matrix: c * (H_x . H_y^T), rows paired by index.
Tape::NodeId batch_scores(Tape& tape, Tape::NodeId h_x, Tape::NodeId h_y,
                          int64_t step, const ScoreConfig& cfg);

// Smoothed in-batch-negatives cross entropy, summed over rows: the target
// row puts (1 - smoothing) on the diagonal and smoothing/(K-1) on each
// negative. smoothing = 0 recovers the plain objective (per-row log K at
// all-equal scores). Throws std::invalid_argument for K < 2.
Tape::NodeId batch_loss(Tape& tape, Tape::NodeId scores, double smoothing);

// Candidate order by descending cosine against h_x; ties break toward the
// smaller index. `candidates` rows are the candidate encodings.
std::vector<int> rank_responses(const Tensor& h_x, const Tensor& candidates);

// Same ordering rule applied to precomputed scores.
std::vector<int> rank_scores(const std::vector<double>& scores);

}  // namespace cvrt
