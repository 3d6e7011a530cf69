#include "cvrt/eval.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cvrt/encoder.hpp"
#include "cvrt/errors.hpp"
#include "cvrt/multi_context.hpp"
#include "cvrt/objective.hpp"
#include "cvrt/tape.hpp"

namespace cvrt {

using nlohmann::json;

std::vector<EvalInstance> load_eval_file(const std::string& path, CorpusStats* stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read eval file " + path);

  std::vector<EvalInstance> out;
  CorpusStats local;
  std::string line;
  while (std::getline(in, line)) {
    json j = json::parse(line, nullptr, false);
    bool ok = j.is_object() && j.contains("context") && j["context"].is_string() &&
              j.contains("candidates") && j["candidates"].is_array() &&
              j.contains("relevant_index") && j["relevant_index"].is_number_integer();
    if (ok) {
      for (const auto& c : j["candidates"]) ok = ok && c.is_string();
    }
    if (ok && j.contains("extra_contexts")) {
      ok = j["extra_contexts"].is_array();
      if (ok)
        for (const auto& t : j["extra_contexts"]) ok = ok && t.is_string();
    }
    if (!ok) {
      ++local.skipped;
      continue;
    }
    EvalInstance inst;
    inst.context = j["context"].get<std::string>();
    inst.candidates = j["candidates"].get<std::vector<std::string>>();
    inst.relevant_index = j["relevant_index"].get<int>();
    if (j.contains("extra_contexts"))
      inst.extra_contexts = j["extra_contexts"].get<std::vector<std::string>>();
    if (inst.candidates.size() < 2 || inst.relevant_index < 0 ||
        inst.relevant_index >= static_cast<int>(inst.candidates.size())) {
      ++local.skipped;
      continue;
    }
    ++local.kept;
    out.push_back(std::move(inst));
  }
  if (stats) *stats = local;
  if (out.empty()) throw DataError("no usable eval instances in " + path);
  return out;
}

std::vector<int> evaluate_ranks(Model& model, const SubwordVocab& vocab,
                                const std::vector<EvalInstance>& instances,
                                const EvalOptions& opt) {
  if (opt.multi && !model.cfg.multi_context)
    throw DataError("combined-context evaluation needs a multi-context model");

  size_t n = opt.expected_n > 0 ? static_cast<size_t>(opt.expected_n)
                                : instances.at(0).candidates.size();
  std::vector<int> ranks;
  ranks.reserve(instances.size());

  for (const EvalInstance& inst : instances) {
    if (inst.candidates.size() != n)
      throw DataError("instance has " + std::to_string(inst.candidates.size()) +
                      " candidates, expected " + std::to_string(n));

    Tape tape(opt.quantized);
    Forward fwd(model, tape, {opt.quantized, false, 0.0, nullptr});

    std::vector<std::vector<int>> ctx = {
        tokenize(inst.context, vocab, model.cfg.max_seq_len)};
    Tape::NodeId h_ctx = fwd.encode_h(ctx, Side::input);
    if (opt.multi) {
      std::vector<std::vector<int>> z = {tokenize(
          build_extra_context(inst.extra_contexts, opt.digit_prefixes), vocab,
          model.cfg.max_seq_len)};
      h_ctx = combine_contexts(tape, h_ctx, fwd.encode_h(z, Side::extra_context));
    }

    std::vector<std::vector<int>> cands;
    cands.reserve(n);
    for (const std::string& c : inst.candidates)
      cands.push_back(tokenize(c, vocab, model.cfg.max_seq_len));
    Tape::NodeId h_cand = fwd.encode_h(cands, Side::response);

    std::vector<int> order = rank_responses(tape.val(h_ctx), tape.val(h_cand));
    int rank = 0;
    for (size_t pos = 0; pos < order.size(); ++pos)
      if (order[pos] == inst.relevant_index) {
        rank = static_cast<int>(pos) + 1;
        break;
      }
    ranks.push_back(rank);
  }
  return ranks;
}

double recall_at_k(const std::vector<int>& ranks, int k) {
  if (ranks.empty()) throw std::invalid_argument("no ranks");
  int64_t hits = 0;
  for (int r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mean_reciprocal_rank(const std::vector<int>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("no ranks");
  double sum = 0.0;
  for (int r : ranks) sum += 1.0 / r;
  return sum / static_cast<double>(ranks.size());
}

}  // namespace cvrt
