#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvrt/model.hpp"
#include "cvrt/rng.hpp"
#include "cvrt/tensor.hpp"
#include "cvrt/tokenizer.hpp"

namespace cvrt {

struct TrainConfig {
  int batch_size = 512;        // fine-tune default 256
  double lr_start = 1.0;       // fine-tune 0.1
  double lr_end = 0.001;       // fine-tune 0.0001
  double rho = 0.9;
  double eps = 1e-6;
  double l2_reg = 1e-5;
  double embed_grad_clip = 1.0;
  double smoothing = 0.2;
  double dropout = 0.0;        // fine-tune 0.2
  int64_t max_steps = 0;
  double anneal_steps = 10000;
  double loss_scale = 128.0;
  int range_update_period = 1000;
  int max_skip_streak = 50;
  bool quantized = true;
  bool multi = false;              // train the multi-context objective
  bool digit_prefixes = false;     // fine-tune style extra-context strings
  std::array<double, 3> mc_weights = {1.0, 1.0, 1.0};
  uint64_t seed = 1;
};

// lr(t) = end + (start - end) * (1 + cos(pi * t / max_steps)) / 2.
double cosine_lr(int64_t t, double start, double end, int64_t max_steps);

// In-place norm clip; returns the pre-clip norm.
double clip_to_norm(Tensor& grad, double max_norm);

struct AdadeltaState {
  Tensor eg2;   // EMA of squared gradients
  Tensor edx2;  // EMA of squared updates
};

// One standard ADADELTA update scaled by lr, in place. State tensors are
// sized on first use.
void adadelta_update(Tensor& shadow, const Tensor& grad, AdadeltaState& state,
                     double rho, double eps, double lr);

struct TrainExample {
  std::vector<int> x;  // context ids
  std::vector<int> y;  // response ids
  std::vector<int> z;  // flattened extra-context ids (multi mode)
};

struct CorpusStats {
  int64_t kept = 0;
  int64_t skipped = 0;
};

// Newline-delimited JSON records with "context", "response" and optional
// "extra_contexts" (oldest first). Malformed lines and records that tokenize
// to nothing are skipped and counted; a file yielding no usable record
// throws DataError.
std::vector<TrainExample> load_corpus(const std::string& path, const SubwordVocab& vocab,
                                      int max_seq_len, bool multi, bool digit_prefixes,
                                      CorpusStats* stats = nullptr);

struct StepInfo {
  int64_t step = 0;      // step number just completed (1-based)
  double loss = 0.0;     // total batch loss (summed over rows)
  double loss_x = 0.0;
  double loss_z = 0.0;   // multi mode only
  double loss_xz = 0.0;  // multi mode only
  double lr = 0.0;
  double scale_c = 0.0;
  bool skipped = false;
  int64_t total_skips = 0;
};

class Trainer {
 public:
  // Step callback may return false to stop early. Checkpoint hook runs after
  // quantization ranges are refreshed, so saves always cover the shadows.
  using StepFn = std::function<bool(const StepInfo&)>;
  using CheckpointFn = std::function<void(int64_t step)>;

  Trainer(Model& model, const TrainConfig& cfg);

  // Trains from model.cfg.trained_steps up to cfg.max_steps. Throws
  // DataError when data cannot fill one batch and DivergenceError after
  // max_skip_streak consecutive skipped steps.
  void run(const std::vector<TrainExample>& data, const StepFn& on_step = nullptr,
           int checkpoint_period = 0, const CheckpointFn& on_checkpoint = nullptr);

  // One optimizer step on an explicit batch; exposed for tests.
  StepInfo step(const std::vector<const TrainExample*>& batch);

  void refresh_quant_ranges();

 private:
  Model& model_;
  TrainConfig cfg_;
  Rng rng_;
  std::unordered_map<std::string, AdadeltaState> opt_state_;
  int skip_streak_ = 0;
  int64_t total_skips_ = 0;
};

}  // namespace cvrt
