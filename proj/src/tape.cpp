#include "cvrt/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cassert>
#include <cmath>

#include "cvrt/fp16.hpp"
#include "cvrt/numeric.hpp"

namespace cvrt {

namespace {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

CMap cmap(const Tensor& t) { return CMap(t.data(), t.rows, t.cols); }
Map mmap(Tensor& t) { return Map(t.data(), t.rows, t.cols); }
}  // namespace

Tape::NodeId Tape::push(Tensor val, bool needs_grad, std::function<void()> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

void Tape::backward(NodeId loss, double seed) {
  assert(nodes_[loss].val.size() == 1);
  for (Node& n : nodes_) {
    if (n.needs_grad) {
      n.grad = Tensor(n.val.rows, n.val.cols);
    }
  }
  assert(nodes_[loss].needs_grad);
  nodes_[loss].grad.v[0] = seed;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    if (nodes_[id].needs_grad && nodes_[id].back) nodes_[id].back();
  }
}

#define CVRT_ROUND_OUT(t)                         \
  do {                                            \
    if (fp16_activations_) fp16_round_inplace(t.v); \
  } while (0)

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  assert(A.cols == B.rows);
  Tensor out(A.rows, B.cols);
  mmap(out).noalias() = cmap(A) * cmap(B);
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, b, id]() {
      const Tensor& g = nodes_[id].grad;
      if (nodes_[a].needs_grad)
        mmap(mut_grad(a)).noalias() += cmap(g) * cmap(nodes_[b].val).transpose();
      if (nodes_[b].needs_grad)
        mmap(mut_grad(b)).noalias() += cmap(nodes_[a].val).transpose() * cmap(g);
    };
  }
  return id;
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  assert(A.cols == B.cols);
  Tensor out(A.rows, B.rows);
  mmap(out).noalias() = cmap(A) * cmap(B).transpose();
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, b, id]() {
      const Tensor& g = nodes_[id].grad;
      if (nodes_[a].needs_grad)
        mmap(mut_grad(a)).noalias() += cmap(g) * cmap(nodes_[b].val);
      if (nodes_[b].needs_grad)
        mmap(mut_grad(b)).noalias() += cmap(g).transpose() * cmap(nodes_[a].val);
    };
  }
  return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  assert(A.same_shape(B));
  Tensor out(A.rows, A.cols);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] = A.v[i] + B.v[i];
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, b, id]() {
      const Tensor& g = nodes_[id].grad;
      if (nodes_[a].needs_grad) {
        Tensor& ga = mut_grad(a);
        for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
      }
      if (nodes_[b].needs_grad) {
        Tensor& gb = mut_grad(b);
        for (size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i];
      }
    };
  }
  return id;
}

Tape::NodeId Tape::add_rowvec(NodeId a, NodeId bias) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[bias].val;
  assert(B.rows == 1 && B.cols == A.cols);
  Tensor out(A.rows, A.cols);
  for (int r = 0; r < A.rows; ++r)
    for (int c = 0; c < A.cols; ++c) out.at(r, c) = A.at(r, c) + B.v[c];
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[a].needs_grad || nodes_[bias].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, bias, id]() {
      const Tensor& g = nodes_[id].grad;
      if (nodes_[a].needs_grad) {
        Tensor& ga = mut_grad(a);
        for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
      }
      if (nodes_[bias].needs_grad) {
        Tensor& gb = mut_grad(bias);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) gb.v[c] += g.at(r, c);
      }
    };
  }
  return id;
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  const Tensor& A = nodes_[a].val;
  Tensor out(A.rows, A.cols);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] = A.v[i] * c;
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[a].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, c, id]() {
      const Tensor& g = nodes_[id].grad;
      Tensor& ga = mut_grad(a);
      for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * c;
    };
  }
  return id;
}

Tape::NodeId Tape::gelu(NodeId a) {
  const Tensor& A = nodes_[a].val;
  Tensor out(A.rows, A.cols);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] = gelu_fast(A.v[i]);
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[a].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, id]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& A2 = nodes_[a].val;
      Tensor& ga = mut_grad(a);
      for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * gelu_fast_grad(A2.v[i]);
    };
  }
  return id;
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  const Tensor& X = nodes_[x].val;
  const Tensor& G = nodes_[gain].val;
  const Tensor& B = nodes_[bias].val;
  assert(G.cols == X.cols && B.cols == X.cols);
  const int n = X.cols;
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(X.rows) * 2);
  Tensor out(X.rows, n);
  for (int r = 0; r < X.rows; ++r) {
    const double* xr = X.data() + static_cast<size_t>(r) * n;
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += xr[c];
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = inv;
    double* or_ = out.data() + static_cast<size_t>(r) * n;
    for (int c = 0; c < n; ++c) or_[c] = (xr[c] - mean) * inv * G.v[c] + B.v[c];
  }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[x].needs_grad || nodes_[gain].needs_grad || nodes_[bias].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, x, gain, bias, id, stats]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& X2 = nodes_[x].val;
      const Tensor& G2 = nodes_[gain].val;
      const int n2 = X2.cols;
      for (int r = 0; r < X2.rows; ++r) {
        const double mean = (*stats)[2 * r];
        const double inv = (*stats)[2 * r + 1];
        const double* xr = X2.data() + static_cast<size_t>(r) * n2;
        const double* gr = g.data() + static_cast<size_t>(r) * n2;
        // xhat and the two row reductions of dxhat
        double sum_dx = 0.0, sum_dx_xhat = 0.0;
        for (int c = 0; c < n2; ++c) {
          const double xhat = (xr[c] - mean) * inv;
          const double dxhat = gr[c] * G2.v[c];
          sum_dx += dxhat;
          sum_dx_xhat += dxhat * xhat;
        }
        if (nodes_[gain].needs_grad) {
          Tensor& gg = mut_grad(gain);
          for (int c = 0; c < n2; ++c) gg.v[c] += gr[c] * (xr[c] - mean) * inv;
        }
        if (nodes_[bias].needs_grad) {
          Tensor& gb = mut_grad(bias);
          for (int c = 0; c < n2; ++c) gb.v[c] += gr[c];
        }
        if (nodes_[x].needs_grad) {
          Tensor& gx = mut_grad(x);
          double* gxr = gx.data() + static_cast<size_t>(r) * n2;
          for (int c = 0; c < n2; ++c) {
            const double xhat = (xr[c] - mean) * inv;
            const double dxhat = gr[c] * G2.v[c];
            gxr[c] += inv * (dxhat - sum_dx / n2 - xhat * sum_dx_xhat / n2);
          }
        }
      }
    };
  }
  return id;
}

Tape::NodeId Tape::l2_normalize_rows(NodeId x) {
  const Tensor& X = nodes_[x].val;
  auto invs = std::make_shared<std::vector<double>>(X.rows);
  Tensor out(X.rows, X.cols);
  for (int r = 0; r < X.rows; ++r) {
    const double* xr = X.data() + static_cast<size_t>(r) * X.cols;
    double s = 0.0;
    for (int c = 0; c < X.cols; ++c) s += xr[c] * xr[c];
    const double inv = 1.0 / std::sqrt(s + kL2NormEps);
    (*invs)[r] = inv;
    double* or_ = out.data() + static_cast<size_t>(r) * X.cols;
    for (int c = 0; c < X.cols; ++c) or_[c] = xr[c] * inv;
  }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[x].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, x, id, invs]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& X2 = nodes_[x].val;
      Tensor& gx = mut_grad(x);
      for (int r = 0; r < X2.rows; ++r) {
        const double inv = (*invs)[r];
        const double* xr = X2.data() + static_cast<size_t>(r) * X2.cols;
        const double* gr = g.data() + static_cast<size_t>(r) * X2.cols;
        double dot = 0.0;
        for (int c = 0; c < X2.cols; ++c) dot += gr[c] * xr[c] * inv;
        double* gxr = gx.data() + static_cast<size_t>(r) * X2.cols;
        for (int c = 0; c < X2.cols; ++c) gxr[c] += inv * (gr[c] - xr[c] * inv * dot);
      }
    };
  }
  return id;
}

Tape::NodeId Tape::softmax_masked(NodeId scores,
                                  std::shared_ptr<const std::vector<uint8_t>> mask) {
  const Tensor& S = nodes_[scores].val;
  Tensor out = cvrt::softmax_masked(S, mask ? *mask : std::vector<uint8_t>{});
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[scores].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, scores, id]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& P = nodes_[id].val;
      Tensor& gs = mut_grad(scores);
      for (int r = 0; r < P.rows; ++r) {
        const double* pr = P.data() + static_cast<size_t>(r) * P.cols;
        const double* gr = g.data() + static_cast<size_t>(r) * P.cols;
        double dot = 0.0;
        for (int c = 0; c < P.cols; ++c) dot += pr[c] * gr[c];
        double* gsr = gs.data() + static_cast<size_t>(r) * P.cols;
        for (int c = 0; c < P.cols; ++c) gsr[c] += pr[c] * (gr[c] - dot);
      }
    };
  }
  return id;
}

Tape::NodeId Tape::log_softmax_rows(NodeId scores) {
  const Tensor& S = nodes_[scores].val;
  Tensor out(S.rows, S.cols);
  for (int r = 0; r < S.rows; ++r) {
    const double* sr = S.data() + static_cast<size_t>(r) * S.cols;
    double mx = sr[0];
    for (int c = 1; c < S.cols; ++c) mx = std::max(mx, sr[c]);
    double sum = 0.0;
    for (int c = 0; c < S.cols; ++c) sum += std::exp(sr[c] - mx);
    const double lse = mx + std::log(sum);
    double* or_ = out.data() + static_cast<size_t>(r) * S.cols;
    for (int c = 0; c < S.cols; ++c) or_[c] = sr[c] - lse;
  }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[scores].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, scores, id]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& LS = nodes_[id].val;
      Tensor& gs = mut_grad(scores);
      for (int r = 0; r < LS.rows; ++r) {
        const double* lr = LS.data() + static_cast<size_t>(r) * LS.cols;
        const double* gr = g.data() + static_cast<size_t>(r) * LS.cols;
        double gsum = 0.0;
        for (int c = 0; c < LS.cols; ++c) gsum += gr[c];
        double* gsr = gs.data() + static_cast<size_t>(r) * LS.cols;
        for (int c = 0; c < LS.cols; ++c) gsr[c] += gr[c] - std::exp(lr[c]) * gsum;
      }
    };
  }
  return id;
}

Tape::NodeId Tape::rows_gather(NodeId src, std::shared_ptr<const std::vector<int>> idx) {
  const Tensor& S = nodes_[src].val;
  Tensor out(static_cast<int>(idx->size()), S.cols);
  for (size_t i = 0; i < idx->size(); ++i) {
    const int r = (*idx)[i];
    assert(r >= 0 && r < S.rows);
    std::copy_n(S.data() + static_cast<size_t>(r) * S.cols, S.cols,
                out.data() + i * S.cols);
  }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[src].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, src, id, idx]() {
      const Tensor& g = nodes_[id].grad;
      Tensor& gs = mut_grad(src);
      for (size_t i = 0; i < idx->size(); ++i) {
        double* dst = gs.data() + static_cast<size_t>((*idx)[i]) * gs.cols;
        const double* gr = g.data() + i * g.cols;
        for (int c = 0; c < g.cols; ++c) dst[c] += gr[c];
      }
    };
  }
  return id;
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  assert(A.rows == B.rows);
  Tensor out(A.rows, A.cols + B.cols);
  for (int r = 0; r < A.rows; ++r) {
    std::copy_n(A.data() + static_cast<size_t>(r) * A.cols, A.cols,
                out.data() + static_cast<size_t>(r) * out.cols);
    std::copy_n(B.data() + static_cast<size_t>(r) * B.cols, B.cols,
                out.data() + static_cast<size_t>(r) * out.cols + A.cols);
  }
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, b, id]() {
      const Tensor& g = nodes_[id].grad;
      const int ac = nodes_[a].val.cols;
      if (nodes_[a].needs_grad) {
        Tensor& ga = mut_grad(a);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < ac; ++c) ga.at(r, c) += g.at(r, c);
      }
      if (nodes_[b].needs_grad) {
        Tensor& gb = mut_grad(b);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < gb.cols; ++c) gb.at(r, c) += g.at(r, ac + c);
      }
    };
  }
  return id;
}

Tape::NodeId Tape::reshape(NodeId a, int rows, int cols) {
  const Tensor& A = nodes_[a].val;
  assert(static_cast<size_t>(rows) * cols == A.size());
  Tensor out(rows, cols, A.v);
  const bool ng = nodes_[a].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, id]() {
      const Tensor& g = nodes_[id].grad;
      Tensor& ga = mut_grad(a);
      for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
    };
  }
  return id;
}

Tape::NodeId Tape::dropout(NodeId a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  assert(rate < 1.0);
  const Tensor& A = nodes_[a].val;
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  auto mask = std::make_shared<std::vector<uint8_t>>(A.size());
  Tensor out(A.rows, A.cols);
  for (size_t i = 0; i < A.size(); ++i) {
    const bool on = rng.uniform() < keep;
    (*mask)[i] = on;
    out.v[i] = on ? A.v[i] * inv_keep : 0.0;
  }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[a].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, id, mask, inv_keep]() {
      const Tensor& g = nodes_[id].grad;
      Tensor& ga = mut_grad(a);
      for (size_t i = 0; i < g.size(); ++i)
        if ((*mask)[i]) ga.v[i] += g.v[i] * inv_keep;
    };
  }
  return id;
}

Tape::NodeId Tape::attn_scores(NodeId q, NodeId k, int seqs, int len) {
  const Tensor& Q = nodes_[q].val;
  const Tensor& K = nodes_[k].val;
  assert(Q.rows == seqs * len && K.rows == seqs * len && Q.cols == K.cols);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(Q.cols));
  Tensor out(seqs * len, len);
  for (int s = 0; s < seqs; ++s) {
    CMap qs(Q.data() + static_cast<size_t>(s) * len * Q.cols, len, Q.cols);
    CMap ks(K.data() + static_cast<size_t>(s) * len * K.cols, len, K.cols);
    Map os(out.data() + static_cast<size_t>(s) * len * len, len, len);
    os.noalias() = qs * ks.transpose() * inv_sqrt;
  }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[q].needs_grad || nodes_[k].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, q, k, id, seqs, len, inv_sqrt]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& Q2 = nodes_[q].val;
      const Tensor& K2 = nodes_[k].val;
      const int d = Q2.cols;
      for (int s = 0; s < seqs; ++s) {
        CMap gs(g.data() + static_cast<size_t>(s) * len * len, len, len);
        CMap qs(Q2.data() + static_cast<size_t>(s) * len * d, len, d);
        CMap ks(K2.data() + static_cast<size_t>(s) * len * d, len, d);
        if (nodes_[q].needs_grad) {
          Map gq(mut_grad(q).data() + static_cast<size_t>(s) * len * d, len, d);
          gq.noalias() += gs * ks * inv_sqrt;
        }
        if (nodes_[k].needs_grad) {
          Map gk(mut_grad(k).data() + static_cast<size_t>(s) * len * d, len, d);
          gk.noalias() += gs.transpose() * qs * inv_sqrt;
        }
      }
    };
  }
  return id;
}

Tape::NodeId Tape::add_relative_bias(NodeId scores, NodeId bias, int seqs, int len,
                                     int max_len) {
  const Tensor& S = nodes_[scores].val;
  const Tensor& B = nodes_[bias].val;
  assert(S.rows == seqs * len && S.cols == len);
  assert(B.rows == 1 && B.cols == 2 * max_len - 1);
  assert(len <= max_len);
  const int off = max_len - 1;
  Tensor out = S;
  for (int s = 0; s < seqs; ++s)
    for (int i = 0; i < len; ++i) {
      double* row = out.data() + (static_cast<size_t>(s) * len + i) * len;
      for (int j = 0; j < len; ++j) row[j] += B.v[j - i + off];
    }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[scores].needs_grad || nodes_[bias].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, scores, bias, id, seqs, len, off]() {
      const Tensor& g = nodes_[id].grad;
      if (nodes_[scores].needs_grad) {
        Tensor& gs = mut_grad(scores);
        for (size_t i = 0; i < g.size(); ++i) gs.v[i] += g.v[i];
      }
      if (nodes_[bias].needs_grad) {
        Tensor& gb = mut_grad(bias);
        for (int s = 0; s < seqs; ++s)
          for (int i = 0; i < len; ++i) {
            const double* row = g.data() + (static_cast<size_t>(s) * len + i) * len;
            for (int j = 0; j < len; ++j) gb.v[j - i + off] += row[j];
          }
      }
    };
  }
  return id;
}

Tape::NodeId Tape::attn_apply(NodeId probs, NodeId x, int seqs, int len) {
  const Tensor& P = nodes_[probs].val;
  const Tensor& X = nodes_[x].val;
  assert(P.rows == seqs * len && P.cols == len && X.rows == seqs * len);
  const int d = X.cols;
  Tensor out(seqs * len, d);
  for (int s = 0; s < seqs; ++s) {
    CMap ps(P.data() + static_cast<size_t>(s) * len * len, len, len);
    CMap xs(X.data() + static_cast<size_t>(s) * len * d, len, d);
    Map os(out.data() + static_cast<size_t>(s) * len * d, len, d);
    os.noalias() = ps * xs;
  }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[probs].needs_grad || nodes_[x].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, probs, x, id, seqs, len, d]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& P2 = nodes_[probs].val;
      const Tensor& X2 = nodes_[x].val;
      for (int s = 0; s < seqs; ++s) {
        CMap gs(g.data() + static_cast<size_t>(s) * len * d, len, d);
        CMap ps(P2.data() + static_cast<size_t>(s) * len * len, len, len);
        CMap xs(X2.data() + static_cast<size_t>(s) * len * d, len, d);
        if (nodes_[probs].needs_grad) {
          Map gp(mut_grad(probs).data() + static_cast<size_t>(s) * len * len, len, len);
          gp.noalias() += gs * xs.transpose();
        }
        if (nodes_[x].needs_grad) {
          Map gx(mut_grad(x).data() + static_cast<size_t>(s) * len * d, len, d);
          gx.noalias() += ps.transpose() * gs;
        }
      }
    };
  }
  return id;
}

Tape::NodeId Tape::seq_weighted_sum(NodeId w, NodeId x,
                                    std::shared_ptr<const std::vector<double>> row_scale) {
  const Tensor& W = nodes_[w].val;
  const Tensor& X = nodes_[x].val;
  const int seqs = W.rows;
  const int len = W.cols;
  const int d = X.cols;
  assert(X.rows == seqs * len && static_cast<int>(row_scale->size()) == seqs);
  Tensor out(seqs, d);
  for (int s = 0; s < seqs; ++s) {
    const double cs = (*row_scale)[s];
    double* os = out.data() + static_cast<size_t>(s) * d;
    for (int j = 0; j < len; ++j) {
      const double wj = W.at(s, j) * cs;
      if (wj == 0.0) continue;
      const double* xj = X.data() + (static_cast<size_t>(s) * len + j) * d;
      for (int c = 0; c < d; ++c) os[c] += wj * xj[c];
    }
  }
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[w].needs_grad || nodes_[x].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, w, x, id, seqs, len, d, row_scale]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& W2 = nodes_[w].val;
      const Tensor& X2 = nodes_[x].val;
      for (int s = 0; s < seqs; ++s) {
        const double cs = (*row_scale)[s];
        const double* gs = g.data() + static_cast<size_t>(s) * d;
        for (int j = 0; j < len; ++j) {
          const double* xj = X2.data() + (static_cast<size_t>(s) * len + j) * d;
          if (nodes_[w].needs_grad) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += gs[c] * xj[c];
            mut_grad(w).at(s, j) += cs * dot;
          }
          if (nodes_[x].needs_grad) {
            const double wj = W2.at(s, j) * cs;
            if (wj != 0.0) {
              double* gx = mut_grad(x).data() + (static_cast<size_t>(s) * len + j) * d;
              for (int c = 0; c < d; ++c) gx[c] += wj * gs[c];
            }
          }
        }
      }
    };
  }
  return id;
}

Tape::NodeId Tape::weighted_sum_all(NodeId a, std::shared_ptr<const Tensor> weights) {
  const Tensor& A = nodes_[a].val;
  assert(A.same_shape(*weights));
  double s = 0.0;
  for (size_t i = 0; i < A.size(); ++i) s += A.v[i] * weights->v[i];
  Tensor out(1, 1);
  out.v[0] = s;
  CVRT_ROUND_OUT(out);
  const bool ng = nodes_[a].needs_grad;
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].back = [this, a, id, weights]() {
      const double g = nodes_[id].grad.v[0];
      Tensor& ga = mut_grad(a);
      for (size_t i = 0; i < ga.size(); ++i) ga.v[i] += g * weights->v[i];
    };
  }
  return id;
}

#undef CVRT_ROUND_OUT

}  // namespace cvrt
