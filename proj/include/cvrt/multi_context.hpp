#pragma once

#include <array>
#include <string>
#include <vector>

#include "cvrt/objective.hpp"
#include "cvrt/tape.hpp"

namespace cvrt {

// Flatten previous turns (oldest first on input) into the extra-context
// string: most recent turn first, space separated. With digit_prefixes each
// turn is preceded by its distance from the current turn ("0 t3 1 t2 2 t1").
// At most the 10 most recent turns are kept.
std::string build_extra_context(const std::vector<std::string>& turns,
                                bool digit_prefixes);

// h_xz = l2norm((h_x + h_z) / 2): the combined-context encoding shares the
// two input heads rather than owning a third.
Tape::NodeId combine_contexts(Tape& tape, Tape::NodeId h_x, Tape::NodeId h_z);

struct MultiLoss {
  Tape::NodeId total;
  Tape::NodeId loss_x;   // immediate context vs response
  Tape::NodeId loss_z;   // extra context vs response
  Tape::NodeId loss_xz;  // combined vs response
};

// Weighted sum of the three sub-losses, each a smoothed in-batch objective at
// the same annealing scale.
MultiLoss multi_context_loss(Tape& tape, Tape::NodeId h_x, Tape::NodeId h_z,
                             Tape::NodeId h_y, int64_t step, const ScoreConfig& cfg,
                             const std::array<double, 3>& weights);

}  // namespace cvrt
