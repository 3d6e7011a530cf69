#include "cvrt/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cvrt/encoder.hpp"
#include "cvrt/errors.hpp"
#include "cvrt/multi_context.hpp"
#include "cvrt/objective.hpp"

namespace cvrt {

using nlohmann::json;

double cosine_lr(int64_t t, double start, double end, int64_t max_steps) {
  if (max_steps <= 0 || t >= max_steps) return end;
  double frac = static_cast<double>(t) / static_cast<double>(max_steps);
  return end + (start - end) * (1.0 + std::cos(M_PI * frac)) / 2.0;
}

double clip_to_norm(Tensor& grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad.v) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (double& g : grad.v) g *= s;
  }
  return norm;
}

void adadelta_update(Tensor& shadow, const Tensor& grad, AdadeltaState& state,
                     double rho, double eps, double lr) {
  if (state.eg2.empty()) {
    state.eg2 = Tensor(shadow.rows, shadow.cols);
    state.edx2 = Tensor(shadow.rows, shadow.cols);
  }
  for (size_t i = 0; i < shadow.v.size(); ++i) {
    double g = grad.v[i];
    double& eg2 = state.eg2.v[i];
    double& edx2 = state.edx2.v[i];
    eg2 = rho * eg2 + (1.0 - rho) * g * g;
    double dx = -std::sqrt((edx2 + eps) / (eg2 + eps)) * g;
    edx2 = rho * edx2 + (1.0 - rho) * dx * dx;
    shadow.v[i] += lr * dx;
  }
}

std::vector<TrainExample> load_corpus(const std::string& path, const SubwordVocab& vocab,
                                      int max_seq_len, bool multi, bool digit_prefixes,
                                      CorpusStats* stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus " + path);

  std::vector<TrainExample> out;
  CorpusStats local;
  std::string line;
  while (std::getline(in, line)) {
    json j = json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("context") || !j["context"].is_string() ||
        !j.contains("response") || !j["response"].is_string()) {
      ++local.skipped;
      continue;
    }
    TrainExample ex;
    ex.x = tokenize(j["context"].get<std::string>(), vocab, max_seq_len);
    ex.y = tokenize(j["response"].get<std::string>(), vocab, max_seq_len);
    if (ex.x.empty() || ex.y.empty()) {
      ++local.skipped;
      continue;
    }
    if (multi) {
      std::vector<std::string> turns;
      if (j.contains("extra_contexts")) {
        if (!j["extra_contexts"].is_array()) {
          ++local.skipped;
          continue;
        }
        bool bad = false;
        for (const auto& t : j["extra_contexts"]) {
          if (!t.is_string()) {
            bad = true;
            break;
          }
          turns.push_back(t.get<std::string>());
        }
        if (bad) {
          ++local.skipped;
          continue;
        }
      }
      ex.z = tokenize(build_extra_context(turns, digit_prefixes), vocab, max_seq_len);
    }
    ++local.kept;
    out.push_back(std::move(ex));
  }
  if (stats) *stats = local;
  if (out.empty()) throw DataError("no usable records in " + path);
  return out;
}

Trainer::Trainer(Model& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), rng_(cfg.seed) {}

StepInfo Trainer::step(const std::vector<const TrainExample*>& batch) {
  const int64_t t = model_.cfg.trained_steps;
  StepInfo info;
  info.lr = cosine_lr(t, cfg_.lr_start, cfg_.lr_end, cfg_.max_steps);

  ScoreConfig scfg;
  scfg.dim = model_.cfg.out_dim;
  scfg.anneal_steps = cfg_.anneal_steps;
  scfg.smoothing = cfg_.smoothing;
  info.scale_c = anneal_scale(t, scfg);

  Tape tape(cfg_.quantized);
  Forward fwd(model_, tape,
              {cfg_.quantized, true, cfg_.dropout, cfg_.dropout > 0.0 ? &rng_ : nullptr});

  std::vector<std::vector<int>> xs, ys, zs;
  for (const TrainExample* ex : batch) {
    xs.push_back(ex->x);
    ys.push_back(ex->y);
    if (cfg_.multi) zs.push_back(ex->z);
  }

  Tape::NodeId hx = fwd.encode_h(xs, Side::input);
  Tape::NodeId hy = fwd.encode_h(ys, Side::response);
  Tape::NodeId loss;
  if (cfg_.multi) {
    Tape::NodeId hz = fwd.encode_h(zs, Side::extra_context);
    MultiLoss ml = multi_context_loss(tape, hx, hz, hy, t, scfg, cfg_.mc_weights);
    loss = ml.total;
    info.loss_x = tape.scalar(ml.loss_x);
    info.loss_z = tape.scalar(ml.loss_z);
    info.loss_xz = tape.scalar(ml.loss_xz);
  } else {
    loss = batch_loss(tape, batch_scores(tape, hx, hy, t, scfg), cfg_.smoothing);
    info.loss_x = tape.scalar(loss);
  }
  info.loss = tape.scalar(loss);

  tape.backward(loss, cfg_.loss_scale);

  // All-or-nothing: inspect every unscaled gradient before touching shadows.
  const auto& leaves = fwd.param_leaves();
  bool finite = std::isfinite(info.loss);
  std::unordered_map<std::string, Tensor> grads;
  grads.reserve(leaves.size());
  for (const auto& [name, leaf] : leaves) {
    Tensor g = tape.grad(leaf);
    for (double& v : g.v) {
      v /= cfg_.loss_scale;
      if (!std::isfinite(v)) finite = false;
    }
    if (!finite) break;
    grads.emplace(name, std::move(g));
  }

  if (!finite) {
    ++skip_streak_;
    ++total_skips_;
    info.skipped = true;
    info.step = t;
    info.total_skips = total_skips_;
    if (skip_streak_ > cfg_.max_skip_streak)
      throw DivergenceError("aborting after " + std::to_string(skip_streak_) +
                            " consecutive non-finite steps");
    return info;
  }
  skip_streak_ = 0;

  for (auto& [name, g] : grads) {
    Param& p = model_.params.at(name);
    if (name == "embed") clip_to_norm(g, cfg_.embed_grad_clip);
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += cfg_.l2_reg * p.shadow.v[i];
    adadelta_update(p.shadow, g, opt_state_[name], cfg_.rho, cfg_.eps, info.lr);
    if (p.prec == Precision::embed8) p.loaded_codes.clear();
  }

  model_.cfg.trained_steps = t + 1;
  info.step = t + 1;
  info.total_skips = total_skips_;
  if (cfg_.range_update_period > 0 && (t + 1) % cfg_.range_update_period == 0)
    refresh_quant_ranges();
  return info;
}

void Trainer::refresh_quant_ranges() {
  for (Param& p : model_.params.params) {
    if (p.prec != Precision::embed8 || p.shadow.empty()) continue;
    double lo = p.shadow.v[0], hi = p.shadow.v[0];
    for (double v : p.shadow.v) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    QuantRange next = update_quant_range(p.range, lo, hi);
    if (next.lo != p.range.lo || next.hi != p.range.hi) {
      p.range = next;
      p.loaded_codes.clear();
    }
  }
}

void Trainer::run(const std::vector<TrainExample>& data, const StepFn& on_step,
                  int checkpoint_period, const CheckpointFn& on_checkpoint) {
  if (model_.cfg.trained_steps >= cfg_.max_steps) {
    refresh_quant_ranges();
    return;
  }
  if (static_cast<int64_t>(data.size()) < cfg_.batch_size)
    throw DataError("corpus smaller than one batch (" + std::to_string(data.size()) +
                    " records, batch " + std::to_string(cfg_.batch_size) + ")");

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  while (model_.cfg.trained_steps < cfg_.max_steps) {
    rng_.shuffle(order);
    for (size_t off = 0; off + cfg_.batch_size <= order.size() &&
                         model_.cfg.trained_steps < cfg_.max_steps;
         off += cfg_.batch_size) {
      std::vector<const TrainExample*> batch(cfg_.batch_size);
      for (int i = 0; i < cfg_.batch_size; ++i) batch[i] = &data[order[off + i]];
      StepInfo info = step(batch);
      bool keep_going = !on_step || on_step(info);
      if (!info.skipped && checkpoint_period > 0 && on_checkpoint &&
          info.step % checkpoint_period == 0) {
        refresh_quant_ranges();
        on_checkpoint(info.step);
      }
      if (!keep_going) {
        refresh_quant_ranges();
        return;
      }
    }
  }
  refresh_quant_ranges();
}

}  // namespace cvrt
