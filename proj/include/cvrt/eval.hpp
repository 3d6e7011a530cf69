#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvrt/model.hpp"
#include "cvrt/tokenizer.hpp"
#include "cvrt/trainer.hpp"

namespace cvrt {

struct EvalInstance {
  std::string context;
  std::vector<std::string> extra_contexts;  // oldest first
  std::vector<std::string> candidates;
  int relevant_index = 0;
};

// Newline-delimited JSON {"context", "extra_contexts"?, "candidates",
// "relevant_index"}. Requires >= 2 candidates and a valid relevant index per
// record; malformed records are skipped and counted, an unusable file throws
// DataError.
std::vector<EvalInstance> load_eval_file(const std::string& path,
                                         CorpusStats* stats = nullptr);

struct EvalOptions {
  bool multi = false;            // rank with the combined-context encoding
  bool digit_prefixes = false;
  bool quantized = true;
  int expected_n = 0;            // 0: take N from the first instance
};

// 1-based rank of the relevant candidate per instance. Throws DataError on
// candidate-count mismatches or when multi mode meets a single-context model.
std::vector<int> evaluate_ranks(Model& model, const SubwordVocab& vocab,
                                const std::vector<EvalInstance>& instances,
                                const EvalOptions& opt);

// Mean of [rank <= k].
double recall_at_k(const std::vector<int>& ranks, int k);

// Mean of 1/rank.
double mean_reciprocal_rank(const std::vector<int>& ranks);

}  // namespace cvrt
