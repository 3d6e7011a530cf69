#include "cvrt/objective.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace cvrt {

double anneal_scale(int64_t step, const ScoreConfig& cfg) {
  double frac = cfg.anneal_steps <= 0 ? 1.0
              : std::min(static_cast<double>(step) / cfg.anneal_steps, 1.0);
  return 1.0 + (std::sqrt(static_cast<double>(cfg.dim)) - 1.0) * frac;
}

namespace {

double dot(const Tensor& a, const Tensor& b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

#ifndef NDEBUG
bool unit_norm(const Tensor& t) {
  return std::fabs(std::sqrt(dot(t, t)) - 1.0) < 0.01;
}
#endif

}  // namespace

double score(const Tensor& h_x, const Tensor& h_y, int64_t step, const ScoreConfig& cfg) {
  assert(unit_norm(h_x) && "score() expects unit-norm encodings");
  assert(unit_norm(h_y) && "score() expects unit-norm encodings");
  return anneal_scale(step, cfg) * dot(h_x, h_y);
}

Tape::NodeId batch_scores(Tape& tape, Tape::NodeId h_x, Tape::NodeId h_y,
                          int64_t step, const ScoreConfig& cfg) {
  return tape.scale(tape.matmul_nt(h_x, h_y), anneal_scale(step, cfg));
}

Tape::NodeId batch_loss(Tape& tape, Tape::NodeId scores, double smoothing) {
  const Tensor& s = tape.val(scores);
  int k = s.rows;
  if (k < 2 || s.cols != k)
    throw std::invalid_argument("batch_loss needs a square score matrix with K >= 2");
  auto targets = std::make_shared<Tensor>(k, k);
  double off = smoothing / (k - 1);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      targets->at(i, j) = i == j ? 1.0 - smoothing : off;
  Tape::NodeId log_probs = tape.log_softmax_rows(scores);
  // loss = -sum_ij targets_ij * log_probs_ij, so weight by -targets.
  for (double& t : targets->v) t = -t;
  return tape.weighted_sum_all(log_probs, targets);
}

std::vector<int> rank_responses(const Tensor& h_x, const Tensor& candidates) {
  assert(static_cast<int>(h_x.size()) == candidates.cols);
  std::vector<double> scores(candidates.rows);
  for (int i = 0; i < candidates.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < candidates.cols; ++j) s += candidates.at(i, j) * h_x.v[j];
    scores[i] = s;
  }
  return rank_scores(scores);
}

std::vector<int> rank_scores(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace cvrt
