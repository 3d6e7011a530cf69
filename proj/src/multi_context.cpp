#include "cvrt/multi_context.hpp"

#include <algorithm>

namespace cvrt {

std::string build_extra_context(const std::vector<std::string>& turns,
                                bool digit_prefixes) {
  size_t keep = std::min<size_t>(turns.size(), 10);
  std::string out;
  for (size_t k = 0; k < keep; ++k) {
    const std::string& turn = turns[turns.size() - 1 - k];
    if (!out.empty()) out += ' ';
    if (digit_prefixes) {
      out += std::to_string(k);
      out += ' ';
    }
    out += turn;
  }
  return out;
}

Tape::NodeId combine_contexts(Tape& tape, Tape::NodeId h_x, Tape::NodeId h_z) {
  return tape.l2_normalize_rows(tape.scale(tape.add(h_x, h_z), 0.5));
}

MultiLoss multi_context_loss(Tape& tape, Tape::NodeId h_x, Tape::NodeId h_z,
                             Tape::NodeId h_y, int64_t step, const ScoreConfig& cfg,
                             const std::array<double, 3>& weights) {
  MultiLoss out;
  Tape::NodeId h_xz = combine_contexts(tape, h_x, h_z);
  out.loss_x = batch_loss(tape, batch_scores(tape, h_x, h_y, step, cfg), cfg.smoothing);
  out.loss_z = batch_loss(tape, batch_scores(tape, h_z, h_y, step, cfg), cfg.smoothing);
  out.loss_xz = batch_loss(tape, batch_scores(tape, h_xz, h_y, step, cfg), cfg.smoothing);
  out.total = tape.add(tape.add(tape.scale(out.loss_x, weights[0]),
                                tape.scale(out.loss_z, weights[1])),
                       tape.scale(out.loss_xz, weights[2]));
  return out;
}

}  // namespace cvrt
