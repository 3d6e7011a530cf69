#include "cvrt/encoder.hpp"

#include <cassert>
#include <cmath>

#include "cvrt/errors.hpp"

namespace cvrt {

Forward::Forward(Model& model, Tape& tape, Options opt)
    : model_(model), tape_(tape), opt_(opt) {
  assert(!(opt_.training && opt_.dropout > 0.0) || opt_.rng != nullptr);
}

Tape::NodeId Forward::param(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  const Param& p = model_.params.at(name);
  Tensor value = opt_.quantized ? p.quantized_value() : p.shadow;
  const Tape::NodeId id = tape_.leaf(std::move(value), opt_.training);
  leaves_.emplace(name, id);
  return id;
}

std::shared_ptr<const std::vector<uint8_t>> Forward::attention_mask(int cap, int seqs,
                                                                    int len) {
  auto it = mask_cache_.find(cap);
  if (it != mask_cache_.end()) return it->second;
  auto mask = std::make_shared<std::vector<uint8_t>>(
      static_cast<size_t>(seqs) * len * len, uint8_t{0});
  for (int s = 0; s < seqs; ++s) {
    const int n = lens_[s];
    for (int i = 0; i < len; ++i) {
      uint8_t* row = mask->data() + (static_cast<size_t>(s) * len + i) * len;
      if (i < n) {
        for (int j = 0; j < n; ++j)
          if (std::abs(i - j) <= cap) row[j] = 1;
      } else {
        row[i] = 1;  // padding rows attend to themselves only
      }
    }
  }
  mask_cache_.emplace(cap, mask);
  return mask;
}

Tape::NodeId Forward::transformer_block(Tape::NodeId x, int layer, int seqs, int len) {
  const std::string pre = "block" + std::to_string(layer) + ".";
  const auto mask = attention_mask(model_.cfg.relative_caps[layer], seqs, len);

  Tape::NodeId attn = -1;
  for (int h = 0; h < model_.cfg.attention_heads; ++h) {
    const std::string hs = std::to_string(h);
    Tape::NodeId q = tape_.matmul(x, param(pre + "wq" + hs));
    Tape::NodeId k = tape_.matmul(x, param(pre + "wk" + hs));
    Tape::NodeId scores = tape_.attn_scores(q, k, seqs, len);
    if (model_.cfg.use_relative_bias)
      scores = tape_.add_relative_bias(scores, param(pre + "rel_bias"), seqs, len,
                                       model_.cfg.max_seq_len);
    Tape::NodeId probs = tape_.softmax_masked(scores, mask);
    Tape::NodeId out = tape_.attn_apply(probs, x, seqs, len);
    attn = (h == 0) ? out : tape_.add(attn, out);
  }
  if (model_.cfg.attention_heads > 1)
    attn = tape_.scale(attn, 1.0 / model_.cfg.attention_heads);
  if (opt_.training && opt_.dropout > 0.0)
    attn = tape_.dropout(attn, opt_.dropout, *opt_.rng);

  x = tape_.layer_norm(tape_.add(x, attn), param(pre + "ln1.gain"),
                       param(pre + "ln1.bias"));

  Tape::NodeId ff = tape_.add_rowvec(tape_.matmul(x, param(pre + "ff1.w1")),
                                     param(pre + "ff1.b1"));
  ff = tape_.gelu(ff);
  ff = tape_.add_rowvec(tape_.matmul(ff, param(pre + "ff1.w2")), param(pre + "ff1.b2"));
  return tape_.layer_norm(tape_.add(x, ff), param(pre + "ln2.gain"),
                          param(pre + "ln2.bias"));
}

Tape::NodeId Forward::encode_r(const std::vector<std::vector<int>>& seqs) {
  assert(!seqs.empty());
  const ModelConfig& cfg = model_.cfg;
  const int S = static_cast<int>(seqs.size());
  lens_.clear();
  int len = 1;
  for (const auto& seq : seqs) {
    if (static_cast<int>(seq.size()) > cfg.max_seq_len)
      throw DataError("sequence exceeds max_seq_len");
    lens_.push_back(static_cast<int>(seq.size()));
    len = std::max(len, static_cast<int>(seq.size()));
  }
  pad_len_ = len;
  mask_cache_.clear();

  auto ids = std::make_shared<std::vector<int>>();
  auto pos1 = std::make_shared<std::vector<int>>();
  auto pos2 = std::make_shared<std::vector<int>>();
  ids->reserve(static_cast<size_t>(S) * len);
  for (const auto& seq : seqs) {
    for (int i = 0; i < len; ++i) {
      int id = 0;  // padding gathers row 0; masks keep it out of every result
      if (i < static_cast<int>(seq.size())) {
        id = seq[i];
        if (id < 0 || id >= cfg.table_rows()) throw DataError("token id out of range");
      }
      ids->push_back(id);
      pos1->push_back(i % kPosRows1);
      pos2->push_back(i % kPosRows2);
    }
  }

  Tape::NodeId x = tape_.rows_gather(param("embed"), ids);
  x = tape_.add(x, tape_.rows_gather(param("pos_m1"), pos1));
  x = tape_.add(x, tape_.rows_gather(param("pos_m2"), pos2));
  embed_out_ = x;
  if (opt_.training && opt_.dropout > 0.0) x = tape_.dropout(x, opt_.dropout, *opt_.rng);

  for (int b = 0; b < cfg.num_blocks; ++b) x = transformer_block(x, b, S, len);
  last_block_out_ = x;

  // Reduction softmax support: real positions only. A zero-length sequence
  // gets scale 0, making its r exactly zero.
  auto red_mask = std::make_shared<std::vector<uint8_t>>(
      static_cast<size_t>(S) * len, uint8_t{0});
  auto row_scale = std::make_shared<std::vector<double>>(S);
  for (int s = 0; s < S; ++s) {
    (*row_scale)[s] = std::sqrt(static_cast<double>(lens_[s]));
    for (int j = 0; j < lens_[s]; ++j) (*red_mask)[static_cast<size_t>(s) * len + j] = 1;
  }

  Tape::NodeId r = -1;
  for (int h = 0; h < cfg.reduction_heads; ++h) {
    Tape::NodeId scores = tape_.matmul(x, param("reduce.w" + std::to_string(h)));
    scores = tape_.reshape(scores, S, len);
    Tape::NodeId probs = tape_.softmax_masked(scores, red_mask);
    Tape::NodeId head = tape_.seq_weighted_sum(probs, x, row_scale);
    r = (h == 0) ? head : tape_.concat_cols(r, head);
  }
  return r;
}

Tape::NodeId Forward::project(Tape::NodeId r, Side side) {
  const char* names[] = {"input", "response", "extra"};
  const std::string side_name = names[static_cast<int>(side)];
  if (side == Side::extra_context && !model_.cfg.multi_context)
    throw std::logic_error("extra-context head requires a multi-context model");
  Tape::NodeId h = r;
  for (int l = 0; l < model_.cfg.ff2_layers; ++l) {
    const std::string pre = side_name + ".ff2." + std::to_string(l) + ".";
    Tape::NodeId t =
        tape_.gelu(tape_.add_rowvec(tape_.matmul(h, param(pre + "w")), param(pre + "b")));
    Tape::NodeId pre_norm = model_.cfg.ff2_skip ? tape_.add(h, t) : t;
    h = tape_.layer_norm(pre_norm, param(pre + "ln.gain"), param(pre + "ln.bias"));
  }
  Tape::NodeId out = tape_.add_rowvec(tape_.matmul(h, param(side_name + ".out.w")),
                                      param(side_name + ".out.b"));
  return tape_.l2_normalize_rows(out);
}

Tensor reduce_reference(const Tensor& x, const std::vector<Tensor>& head_vecs,
                        const std::vector<int>& lens, int pad_len) {
  const int S = static_cast<int>(lens.size());
  const int D = x.cols;
  assert(x.rows == S * pad_len);
  Tensor r(S, D * static_cast<int>(head_vecs.size()));
  for (size_t h = 0; h < head_vecs.size(); ++h) {
    const Tensor& w = head_vecs[h];
    assert(w.rows == D && w.cols == 1);
    for (int s = 0; s < S; ++s) {
      const int n = lens[s];
      if (n == 0) continue;
      std::vector<double> scores(n);
      double mx = -1e300;
      for (int j = 0; j < n; ++j) {
        double dot = 0;
        for (int c = 0; c < D; ++c) dot += x.at(s * pad_len + j, c) * w.v[c];
        scores[j] = dot;
        mx = std::max(mx, dot);
      }
      double sum = 0;
      for (int j = 0; j < n; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        sum += scores[j];
      }
      // Attend, then reduce: materialize the weighted rows and add them up.
      const double scale = std::sqrt(static_cast<double>(n));
      for (int j = 0; j < n; ++j) {
        const double wj = scores[j] / sum;
        for (int c = 0; c < D; ++c)
          r.at(s, static_cast<int>(h) * D + c) += scale * wj * x.at(s * pad_len + j, c);
      }
    }
  }
  return r;
}

}  // namespace cvrt
