// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace smit {

namespace {
void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

const Tensor& Var::val() const { return g->value_of(id); }

int Graph::add_node(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes.push_back(std::move(n));
  return static_cast<int>(nodes.size()) - 1;
}

Var Graph::constant(Tensor v) { return Var{this, add_node(std::move(v), false)}; }

Var Graph::param(const std::string& name, const Tensor& v, bool trainable) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var{this, it->second};
  const int id = add_node(v, trainable);
  if (trainable) nodes[static_cast<size_t>(id)].param_name = name;
  param_nodes_[name] = id;
  return Var{this, id};
}

Tensor& Graph::grad_of(int id) {
  Node& n = nodes[static_cast<size_t>(id)];
  if (!n.grad_ready) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_ready = true;
  }
  return n.grad;
}

void Graph::backward(Var root) {
  check(root.g == this, "backward: var from another graph");
  check(value_of(root.id).numel() == 1, "backward: root must be scalar");
  grad_of(root.id).data[0] = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes[static_cast<size_t>(i)];
    if (n.grad_ready && n.backward) n.backward(*this, i);
  }
}

void Graph::export_grads(std::map<std::string, Tensor>& out) const {
  for (const auto& n : nodes) {
    if (n.param_name.empty() || !n.grad_ready) continue;
    auto it = out.find(n.param_name);
    if (it == out.end()) {
      out.emplace(n.param_name, n.grad);
    } else {
      check(it->second.same_shape(n.grad), "export_grads: shape clash");
      for (int64_t i = 0; i < n.grad.numel(); ++i) it->second.data[static_cast<size_t>(i)] += n.grad[i];
    }
  }
}

Var make_op(Graph& g, Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> bw) {
  bool req = false;
  for (int p : parents) req = req || g.nodes[static_cast<size_t>(p)].requires_grad;
  const int id = g.add_node(std::move(value), req);
  if (req) g.nodes[static_cast<size_t>(id)].backward = std::move(bw);
  return Var{&g, id};
}

// ---------------------------------------------------------------------------------------------

Var add(Var a, Var b) {
  check(a.val().same_shape(b.val()), "add: shape mismatch");
  Tensor out = a.val();
  const Tensor& bv = b.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[static_cast<size_t>(i)] += bv[i];
  const int pa = a.id, pb = b.id;
  return make_op(*a.g, std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    if (g.nodes[static_cast<size_t>(pa)].requires_grad) {
      Tensor& da = g.grad_of(pa);
      for (int64_t i = 0; i < dy.numel(); ++i) da.data[static_cast<size_t>(i)] += dy[i];
    }
    if (g.nodes[static_cast<size_t>(pb)].requires_grad) {
      Tensor& db = g.grad_of(pb);
      for (int64_t i = 0; i < dy.numel(); ++i) db.data[static_cast<size_t>(i)] += dy[i];
    }
  });
}

Var add_scaled(Var a, Var b, double alpha) {
  check(a.val().same_shape(b.val()), "add_scaled: shape mismatch");
  Tensor out = a.val();
  const Tensor& bv = b.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[static_cast<size_t>(i)] += alpha * bv[i];
  const int pa = a.id, pb = b.id;
  return make_op(*a.g, std::move(out), {pa, pb}, [pa, pb, alpha](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    if (g.nodes[static_cast<size_t>(pa)].requires_grad) {
      Tensor& da = g.grad_of(pa);
      for (int64_t i = 0; i < dy.numel(); ++i) da.data[static_cast<size_t>(i)] += dy[i];
    }
    if (g.nodes[static_cast<size_t>(pb)].requires_grad) {
      Tensor& db = g.grad_of(pb);
      for (int64_t i = 0; i < dy.numel(); ++i) db.data[static_cast<size_t>(i)] += alpha * dy[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.val();
  for (auto& v : out.data) v *= s;
  const int pa = a.id;
  return make_op(*a.g, std::move(out), {pa}, [pa, s](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    Tensor& da = g.grad_of(pa);
    for (int64_t i = 0; i < dy.numel(); ++i) da.data[static_cast<size_t>(i)] += s * dy[i];
  });
}

Var gelu(Var x) {
  const Tensor& xv = x.val();
  Tensor out(xv.shape);
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (int64_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    out.data[static_cast<size_t>(i)] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  const int px = x.id;
  return make_op(*x.g, std::move(out), {px}, [px](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    const Tensor& xv = g.value_of(px);
    Tensor& dx = g.grad_of(px);
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    for (int64_t i = 0; i < dy.numel(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      dx.data[static_cast<size_t>(i)] += dy[i] * (cdf + v * pdf);
    }
  });
}

Var layernorm(Var x, Var gamma, Var beta, int64_t C, double eps) {
  const Tensor& xv = x.val();
  check(xv.numel() % C == 0, "layernorm: C must divide numel");
  const int64_t N = xv.numel() / C;
  const Tensor& gv = gamma.val();
  const Tensor& bv = beta.val();
  check(gv.numel() == C && bv.numel() == C, "layernorm: affine shape");
  Tensor out(xv.shape);
  Tensor xhat({N, C});
  Tensor inv_sd({N});
  for (int64_t r = 0; r < N; ++r) {
    const double* xr = xv.data.data() + r * C;
    double mu = 0.0;
    for (int64_t c = 0; c < C; ++c) mu += xr[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      const double d = xr[c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const double isd = 1.0 / std::sqrt(var + eps);
    inv_sd.data[static_cast<size_t>(r)] = isd;
    double* hr = xhat.data.data() + r * C;
    double* yr = out.data.data() + r * C;
    for (int64_t c = 0; c < C; ++c) {
      hr[c] = (xr[c] - mu) * isd;
      yr[c] = hr[c] * gv[c] + bv[c];
    }
  }
  const int px = x.id, pg = gamma.id, pb = beta.id;
  auto xh = std::make_shared<Tensor>(std::move(xhat));
  auto isd_keep = std::make_shared<Tensor>(std::move(inv_sd));
  return make_op(*x.g, std::move(out), {px, pg, pb},
                 [px, pg, pb, C, N, xh, isd_keep](Graph& g, int self) {
                   const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
                   const Tensor& gv = g.value_of(pg);
                   const bool need_x = g.nodes[static_cast<size_t>(px)].requires_grad;
                   const bool need_g = g.nodes[static_cast<size_t>(pg)].requires_grad;
                   const bool need_b = g.nodes[static_cast<size_t>(pb)].requires_grad;
                   Tensor* dx = need_x ? &g.grad_of(px) : nullptr;
                   Tensor* dg = need_g ? &g.grad_of(pg) : nullptr;
                   Tensor* db = need_b ? &g.grad_of(pb) : nullptr;
                   for (int64_t r = 0; r < N; ++r) {
                     const double* dyr = dy.data.data() + r * C;
                     const double* hr = xh->data.data() + r * C;
                     if (need_g || need_b) {
                       for (int64_t c = 0; c < C; ++c) {
                         if (dg) dg->data[static_cast<size_t>(c)] += dyr[c] * hr[c];
                         if (db) db->data[static_cast<size_t>(c)] += dyr[c];
                       }
                     }
                     if (!need_x) continue;
                     double sum_dh = 0.0, sum_dh_h = 0.0;
                     for (int64_t c = 0; c < C; ++c) {
                       const double dh = dyr[c] * gv[c];
                       sum_dh += dh;
                       sum_dh_h += dh * hr[c];
                     }
                     const double isd = isd_keep->data[static_cast<size_t>(r)];
                     const double invC = 1.0 / static_cast<double>(C);
                     double* dxr = dx->data.data() + r * C;
                     for (int64_t c = 0; c < C; ++c) {
                       const double dh = dyr[c] * gv[c];
                       dxr[c] += isd * (dh - invC * sum_dh - hr[c] * invC * sum_dh_h);
                     }
                   }
                 });
}

Var linear(Var x, Var W, Var b) {
  const Tensor& xv = x.val();
  const Tensor& wv = W.val();
  const Tensor& bv = b.val();
  check(wv.shape.size() == 2, "linear: W must be 2-d");
  const int64_t Co = wv.shape[0], Ci = wv.shape[1];
  check(xv.numel() % Ci == 0, "linear: input width mismatch");
  const int64_t N = xv.numel() / Ci;
  check(bv.numel() == Co, "linear: bias width mismatch");
  Tensor out({N, Co});
  for (int64_t r = 0; r < N; ++r) {
    double* yr = out.data.data() + r * Co;
    for (int64_t c = 0; c < Co; ++c) yr[c] = bv[c];
  }
  gemm_nt(out.data.data(), xv.data.data(), wv.data.data(), N, Ci, Co);
  const int px = x.id, pw = W.id, pb = b.id;
  return make_op(*x.g, std::move(out), {px, pw, pb}, [px, pw, pb, N, Ci, Co](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    const Tensor& xv = g.value_of(px);
    const Tensor& wv = g.value_of(pw);
    if (g.nodes[static_cast<size_t>(px)].requires_grad)
      gemm_nn(g.grad_of(px).data.data(), dy.data.data(), wv.data.data(), N, Co, Ci);
    if (g.nodes[static_cast<size_t>(pw)].requires_grad)
      gemm_tn(g.grad_of(pw).data.data(), dy.data.data(), xv.data.data(), N, Co, Ci);
    if (g.nodes[static_cast<size_t>(pb)].requires_grad) {
      Tensor& db = g.grad_of(pb);
      for (int64_t r = 0; r < N; ++r) {
        const double* dyr = dy.data.data() + r * Co;
        for (int64_t c = 0; c < Co; ++c) db.data[static_cast<size_t>(c)] += dyr[c];
      }
    }
  });
}

Var bmm_nt(Var A, Var B, int64_t bat, int64_t n, int64_t k, int64_t m) {
  check(A.val().numel() == bat * n * k, "bmm_nt: A size");
  check(B.val().numel() == bat * m * k, "bmm_nt: B size");
  Tensor out({bat, n, m});
  for (int64_t b = 0; b < bat; ++b)
    gemm_nt(out.data.data() + b * n * m, A.val().data.data() + b * n * k,
            B.val().data.data() + b * m * k, n, k, m);
  const int pa = A.id, pb = B.id;
  return make_op(*A.g, std::move(out), {pa, pb}, [pa, pb, bat, n, k, m](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    const Tensor& av = g.value_of(pa);
    const Tensor& bv = g.value_of(pb);
    const bool na = g.nodes[static_cast<size_t>(pa)].requires_grad;
    const bool nb = g.nodes[static_cast<size_t>(pb)].requires_grad;
    Tensor* da = na ? &g.grad_of(pa) : nullptr;
    Tensor* db = nb ? &g.grad_of(pb) : nullptr;
    for (int64_t b = 0; b < bat; ++b) {
      const double* dyb = dy.data.data() + b * n * m;
      if (na) gemm_nn(da->data.data() + b * n * k, dyb, bv.data.data() + b * m * k, n, m, k);
      if (nb) gemm_tn(db->data.data() + b * m * k, dyb, av.data.data() + b * n * k, n, m, k);
    }
  });
}

Var bmm_nn(Var A, Var B, int64_t bat, int64_t n, int64_t k, int64_t m) {
  check(A.val().numel() == bat * n * k, "bmm_nn: A size");
  check(B.val().numel() == bat * k * m, "bmm_nn: B size");
  Tensor out({bat, n, m});
  for (int64_t b = 0; b < bat; ++b)
    gemm_nn(out.data.data() + b * n * m, A.val().data.data() + b * n * k,
            B.val().data.data() + b * k * m, n, k, m);
  const int pa = A.id, pb = B.id;
  return make_op(*A.g, std::move(out), {pa, pb}, [pa, pb, bat, n, k, m](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    const Tensor& av = g.value_of(pa);
    const Tensor& bv = g.value_of(pb);
    const bool na = g.nodes[static_cast<size_t>(pa)].requires_grad;
    const bool nb = g.nodes[static_cast<size_t>(pb)].requires_grad;
    Tensor* da = na ? &g.grad_of(pa) : nullptr;
    Tensor* db = nb ? &g.grad_of(pb) : nullptr;
    for (int64_t b = 0; b < bat; ++b) {
      const double* dyb = dy.data.data() + b * n * m;
      if (na) gemm_nt(da->data.data() + b * n * k, dyb, bv.data.data() + b * k * m, n, m, k);
      if (nb) gemm_tn(db->data.data() + b * k * m, av.data.data() + b * n * k, dyb, n, k, m);
    }
  });
}

Var softmax_rows(Var x, int64_t rowlen, std::shared_ptr<const Tensor> addmask) {
  const Tensor& xv = x.val();
  check(xv.numel() % rowlen == 0, "softmax_rows: rowlen");
  if (addmask) check(addmask->numel() == xv.numel(), "softmax_rows: mask shape");
  const int64_t N = xv.numel() / rowlen;
  Tensor out(xv.shape);
  for (int64_t r = 0; r < N; ++r) {
    const double* xr = xv.data.data() + r * rowlen;
    const double* mr = addmask ? addmask->data.data() + r * rowlen : nullptr;
    double* yr = out.data.data() + r * rowlen;
    double mx = -1e300;
    for (int64_t c = 0; c < rowlen; ++c) {
      const double v = xr[c] + (mr ? mr[c] : 0.0);
      yr[c] = v;
      if (v > mx) mx = v;
    }
    double z = 0.0;
    for (int64_t c = 0; c < rowlen; ++c) {
      yr[c] = std::exp(yr[c] - mx);
      z += yr[c];
    }
    const double iz = 1.0 / z;
    for (int64_t c = 0; c < rowlen; ++c) yr[c] *= iz;
  }
  const int px = x.id;
  return make_op(*x.g, std::move(out), {px}, [px, rowlen, N](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    const Tensor& yv = g.value_of(self);
    Tensor& dx = g.grad_of(px);
    for (int64_t r = 0; r < N; ++r) {
      const double* dyr = dy.data.data() + r * rowlen;
      const double* yr = yv.data.data() + r * rowlen;
      double dot = 0.0;
      for (int64_t c = 0; c < rowlen; ++c) dot += dyr[c] * yr[c];
      double* dxr = dx.data.data() + r * rowlen;
      for (int64_t c = 0; c < rowlen; ++c) dxr[c] += yr[c] * (dyr[c] - dot);
    }
  });
}

Var gather_rows(Var x, IndexVec idx, int64_t C) {
  const Tensor& xv = x.val();
  const int64_t M = static_cast<int64_t>(idx->size());
  Tensor out({M, C});
  for (int64_t r = 0; r < M; ++r) {
    const int64_t s = (*idx)[static_cast<size_t>(r)];
    if (s < 0) continue;
    const double* src = xv.data.data() + s * C;
    double* dst = out.data.data() + r * C;
    for (int64_t c = 0; c < C; ++c) dst[c] = src[c];
  }
  const int px = x.id;
  return make_op(*x.g, std::move(out), {px}, [px, idx, C, M](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    Tensor& dx = g.grad_of(px);
    for (int64_t r = 0; r < M; ++r) {
      const int64_t s = (*idx)[static_cast<size_t>(r)];
      if (s < 0) continue;
      const double* dyr = dy.data.data() + r * C;
      double* dst = dx.data.data() + s * C;
      for (int64_t c = 0; c < C; ++c) dst[c] += dyr[c];
    }
  });
}

Var gather_rows_concat(Var x, IndexVec idx, int64_t k, int64_t C) {
  const Tensor& xv = x.val();
  check(static_cast<int64_t>(idx->size()) % k == 0, "gather_rows_concat: idx size");
  const int64_t M = static_cast<int64_t>(idx->size()) / k;
  Tensor out({M, k * C});
  for (int64_t r = 0; r < M; ++r) {
    for (int64_t j = 0; j < k; ++j) {
      const int64_t s = (*idx)[static_cast<size_t>(r * k + j)];
      if (s < 0) continue;
      const double* src = xv.data.data() + s * C;
      double* dst = out.data.data() + r * k * C + j * C;
      for (int64_t c = 0; c < C; ++c) dst[c] = src[c];
    }
  }
  const int px = x.id;
  return make_op(*x.g, std::move(out), {px}, [px, idx, k, C, M](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    Tensor& dx = g.grad_of(px);
    for (int64_t r = 0; r < M; ++r) {
      for (int64_t j = 0; j < k; ++j) {
        const int64_t s = (*idx)[static_cast<size_t>(r * k + j)];
        if (s < 0) continue;
        const double* dyr = dy.data.data() + r * k * C + j * C;
        double* dst = dx.data.data() + s * C;
        for (int64_t c = 0; c < C; ++c) dst[c] += dyr[c];
      }
    }
  });
}

Var rows_where(Var x, ByteVec row_mask, Var e) {
  const Tensor& xv = x.val();
  const Tensor& ev = e.val();
  const int64_t C = ev.numel();
  check(xv.numel() % C == 0, "rows_where: width mismatch");
  const int64_t N = xv.numel() / C;
  check(static_cast<int64_t>(row_mask->size()) == N, "rows_where: mask length");
  Tensor out = xv;
  for (int64_t r = 0; r < N; ++r) {
    if (!(*row_mask)[static_cast<size_t>(r)]) continue;
    double* dst = out.data.data() + r * C;
    for (int64_t c = 0; c < C; ++c) dst[c] = ev[c];
  }
  const int px = x.id, pe = e.id;
  return make_op(*x.g, std::move(out), {px, pe}, [px, pe, row_mask, C, N](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    const bool nx = g.nodes[static_cast<size_t>(px)].requires_grad;
    const bool ne = g.nodes[static_cast<size_t>(pe)].requires_grad;
    Tensor* dx = nx ? &g.grad_of(px) : nullptr;
    Tensor* de = ne ? &g.grad_of(pe) : nullptr;
    for (int64_t r = 0; r < N; ++r) {
      const double* dyr = dy.data.data() + r * C;
      if ((*row_mask)[static_cast<size_t>(r)]) {
        if (de)
          for (int64_t c = 0; c < C; ++c) de->data[static_cast<size_t>(c)] += dyr[c];
      } else if (dx) {
        double* dst = dx->data.data() + r * C;
        for (int64_t c = 0; c < C; ++c) dst[c] += dyr[c];
      }
    }
  });
}

Var add_rows_embed(Var x, Var table, IndexVec idx) {
  const Tensor& xv = x.val();
  const Tensor& tv = table.val();
  check(tv.shape.size() == 2, "add_rows_embed: table rank");
  const int64_t C = tv.shape[1];
  const int64_t N = xv.numel() / C;
  check(static_cast<int64_t>(idx->size()) == N, "add_rows_embed: idx length");
  Tensor out = xv;
  for (int64_t r = 0; r < N; ++r) {
    const double* src = tv.data.data() + (*idx)[static_cast<size_t>(r)] * C;
    double* dst = out.data.data() + r * C;
    for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
  }
  const int px = x.id, pt = table.id;
  return make_op(*x.g, std::move(out), {px, pt}, [px, pt, idx, C, N](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    if (g.nodes[static_cast<size_t>(px)].requires_grad) {
      Tensor& dx = g.grad_of(px);
      for (int64_t i = 0; i < dy.numel(); ++i) dx.data[static_cast<size_t>(i)] += dy[i];
    }
    if (g.nodes[static_cast<size_t>(pt)].requires_grad) {
      Tensor& dt = g.grad_of(pt);
      for (int64_t r = 0; r < N; ++r) {
        const double* dyr = dy.data.data() + r * C;
        double* dst = dt.data.data() + (*idx)[static_cast<size_t>(r)] * C;
        for (int64_t c = 0; c < C; ++c) dst[c] += dyr[c];
      }
    }
  });
}

Var mean_rows(Var x) {
  const Tensor& xv = x.val();
  check(xv.shape.size() == 2, "mean_rows: rank");
  const int64_t N = xv.shape[0], C = xv.shape[1];
  Tensor out({C});
  for (int64_t r = 0; r < N; ++r) {
    const double* xr = xv.data.data() + r * C;
    for (int64_t c = 0; c < C; ++c) out.data[static_cast<size_t>(c)] += xr[c];
  }
  for (auto& v : out.data) v /= static_cast<double>(N);
  const int px = x.id;
  return make_op(*x.g, std::move(out), {px}, [px, N, C](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    Tensor& dx = g.grad_of(px);
    const double invN = 1.0 / static_cast<double>(N);
    for (int64_t r = 0; r < N; ++r) {
      double* dst = dx.data.data() + r * C;
      for (int64_t c = 0; c < C; ++c) dst[c] += dy[c] * invN;
    }
  });
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check(av.shape.size() == 2 && bv.shape.size() == 2 && av.shape[0] == bv.shape[0],
        "concat_cols: shapes");
  const int64_t N = av.shape[0], Ca = av.shape[1], Cb = bv.shape[1];
  Tensor out({N, Ca + Cb});
  for (int64_t r = 0; r < N; ++r) {
    double* dst = out.data.data() + r * (Ca + Cb);
    const double* sa = av.data.data() + r * Ca;
    const double* sb = bv.data.data() + r * Cb;
    for (int64_t c = 0; c < Ca; ++c) dst[c] = sa[c];
    for (int64_t c = 0; c < Cb; ++c) dst[Ca + c] = sb[c];
  }
  const int pa = a.id, pb = b.id;
  return make_op(*a.g, std::move(out), {pa, pb}, [pa, pb, N, Ca, Cb](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    const bool na = g.nodes[static_cast<size_t>(pa)].requires_grad;
    const bool nb = g.nodes[static_cast<size_t>(pb)].requires_grad;
    Tensor* da = na ? &g.grad_of(pa) : nullptr;
    Tensor* db = nb ? &g.grad_of(pb) : nullptr;
    for (int64_t r = 0; r < N; ++r) {
      const double* dyr = dy.data.data() + r * (Ca + Cb);
      if (da) {
        double* dst = da->data.data() + r * Ca;
        for (int64_t c = 0; c < Ca; ++c) dst[c] += dyr[c];
      }
      if (db) {
        double* dst = db->data.data() + r * Cb;
        for (int64_t c = 0; c < Cb; ++c) dst[c] += dyr[Ca + c];
      }
    }
  });
}

Var concat_rows(Var a, Var b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  Tensor out({av.numel() + bv.numel()});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + static_cast<ptrdiff_t>(av.numel()));
  const int pa = a.id, pb = b.id;
  const int64_t na = av.numel(), nb = bv.numel();
  return make_op(*a.g, std::move(out), {pa, pb}, [pa, pb, na, nb](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    if (g.nodes[static_cast<size_t>(pa)].requires_grad) {
      Tensor& da = g.grad_of(pa);
      for (int64_t i = 0; i < na; ++i) da.data[static_cast<size_t>(i)] += dy[i];
    }
    if (g.nodes[static_cast<size_t>(pb)].requires_grad) {
      Tensor& db = g.grad_of(pb);
      for (int64_t i = 0; i < nb; ++i) db.data[static_cast<size_t>(i)] += dy[na + i];
    }
  });
}

Var transpose2d(Var x, int64_t R, int64_t C) {
  const Tensor& xv = x.val();
  check(xv.numel() == R * C, "transpose2d: size");
  Tensor out({C, R});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out.data[static_cast<size_t>(c * R + r)] = xv[r * C + c];
  const int px = x.id;
  return make_op(*x.g, std::move(out), {px}, [px, R, C](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    Tensor& dx = g.grad_of(px);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t r = 0; r < R; ++r) dx.data[static_cast<size_t>(r * C + c)] += dy[c * R + r];
  });
}

Var permute_elements(Var x, IndexVec src_of_dst, std::vector<int64_t> out_shape) {
  const Tensor& xv = x.val();
  check(Tensor::numel_of(out_shape) == static_cast<int64_t>(src_of_dst->size()),
        "permute_elements: size");
  Tensor out(std::move(out_shape));
  const int64_t M = out.numel();
  for (int64_t i = 0; i < M; ++i) {
    const int64_t s = (*src_of_dst)[static_cast<size_t>(i)];
    out.data[static_cast<size_t>(i)] = s >= 0 ? xv[s] : 0.0;
  }
  const int px = x.id;
  return make_op(*x.g, std::move(out), {px}, [px, src_of_dst, M](Graph& g, int self) {
    const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
    Tensor& dx = g.grad_of(px);
    for (int64_t i = 0; i < M; ++i) {
      const int64_t s = (*src_of_dst)[static_cast<size_t>(i)];
      if (s >= 0) dx.data[static_cast<size_t>(s)] += dy[i];
    }
  });
}

// ---------------------------------------------------------------------------------------------

namespace {

// out[co,...] += sum_ci W(co,ci,dz,dy,dx) * in[ci, shifted] over the valid overlap.
void conv3x3_accum(double* out, const double* in, const double* w, int64_t Cin, int64_t Cout,
                   int64_t D, int64_t H, int64_t Wd) {
  const int64_t plane = H * Wd, vol = D * plane;
  for (int64_t co = 0; co < Cout; ++co) {
    for (int64_t ci = 0; ci < Cin; ++ci) {
      const double* wk = w + (co * Cin + ci) * 27;
      const double* src = in + ci * vol;
      double* dst = out + co * vol;
      for (int64_t dz = -1; dz <= 1; ++dz)
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const double wv = wk[(dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)];
            if (wv == 0.0) continue;
            const int64_t z0 = std::max<int64_t>(0, -dz), z1 = std::min(D, D - dz);
            const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(H, H - dy);
            const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(Wd, Wd - dx);
            for (int64_t z = z0; z < z1; ++z)
              for (int64_t y = y0; y < y1; ++y) {
                double* drow = dst + z * plane + y * Wd;
                const double* srow = src + (z + dz) * plane + (y + dy) * Wd + dx;
                for (int64_t xx = x0; xx < x1; ++xx) drow[xx] += wv * srow[xx];
              }
          }
    }
  }
}

// dW(co,ci,k) += sum over valid voxels of dOut[co,v] * in[ci, v+offset]
void conv3x3_wgrad(double* dw, const double* dout, const double* in, int64_t Cin, int64_t Cout,
                   int64_t D, int64_t H, int64_t Wd) {
  const int64_t plane = H * Wd, vol = D * plane;
  for (int64_t co = 0; co < Cout; ++co) {
    for (int64_t ci = 0; ci < Cin; ++ci) {
      double* wk = dw + (co * Cin + ci) * 27;
      const double* src = in + ci * vol;
      const double* dst = dout + co * vol;
      for (int64_t dz = -1; dz <= 1; ++dz)
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const int64_t z0 = std::max<int64_t>(0, -dz), z1 = std::min(D, D - dz);
            const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(H, H - dy);
            const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(Wd, Wd - dx);
            double acc = 0.0;
            for (int64_t z = z0; z < z1; ++z)
              for (int64_t y = y0; y < y1; ++y) {
                const double* drow = dst + z * plane + y * Wd;
                const double* srow = src + (z + dz) * plane + (y + dy) * Wd + dx;
                for (int64_t xx = x0; xx < x1; ++xx) acc += drow[xx] * srow[xx];
              }
            wk[(dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)] += acc;
          }
    }
  }
}

}  // namespace

Var conv3x3(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t D, int64_t H, int64_t Wd) {
  const Tensor& xv = x.val();
  check(xv.numel() == Cin * D * H * Wd, "conv3x3: input size");
  check(W.val().numel() == Cout * Cin * 27, "conv3x3: weight size");
  check(b.val().numel() == Cout, "conv3x3: bias size");
  const int64_t vol = D * H * Wd;
  Tensor out({Cout, D, H, Wd});
  for (int64_t co = 0; co < Cout; ++co) {
    const double bv = b.val()[co];
    double* dst = out.data.data() + co * vol;
    for (int64_t i = 0; i < vol; ++i) dst[i] = bv;
  }
  conv3x3_accum(out.data.data(), xv.data.data(), W.val().data.data(), Cin, Cout, D, H, Wd);
  const int px = x.id, pw = W.id, pb = b.id;
  return make_op(*x.g, std::move(out), {px, pw, pb},
                 [px, pw, pb, Cin, Cout, D, H, Wd](Graph& g, int self) {
                   const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
                   const int64_t vol = D * H * Wd;
                   if (g.nodes[static_cast<size_t>(px)].requires_grad) {
                     // Correlation with the flipped kernel swaps (co,ci) roles and offsets.
                     const Tensor& wv = g.value_of(pw);
                     Tensor wflip({Cin, Cout, 3, 3, 3});
                     for (int64_t co = 0; co < Cout; ++co)
                       for (int64_t ci = 0; ci < Cin; ++ci)
                         for (int64_t t = 0; t < 27; ++t)
                           wflip.data[static_cast<size_t>((ci * Cout + co) * 27 + (26 - t))] =
                               wv[(co * Cin + ci) * 27 + t];
                     conv3x3_accum(g.grad_of(px).data.data(), dy.data.data(), wflip.data.data(),
                                   Cout, Cin, D, H, Wd);
                   }
                   if (g.nodes[static_cast<size_t>(pw)].requires_grad)
                     conv3x3_wgrad(g.grad_of(pw).data.data(), dy.data.data(),
                                   g.value_of(px).data.data(), Cin, Cout, D, H, Wd);
                   if (g.nodes[static_cast<size_t>(pb)].requires_grad) {
                     Tensor& db = g.grad_of(pb);
                     for (int64_t co = 0; co < Cout; ++co) {
                       const double* dyc = dy.data.data() + co * vol;
                       double acc = 0.0;
                       for (int64_t i = 0; i < vol; ++i) acc += dyc[i];
                       db.data[static_cast<size_t>(co)] += acc;
                     }
                   }
                 });
}

Var conv1x1(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t nvox) {
  check(x.val().numel() == Cin * nvox, "conv1x1: input size");
  check(W.val().numel() == Cout * Cin && b.val().numel() == Cout, "conv1x1: param size");
  Tensor out({Cout, nvox});
  for (int64_t co = 0; co < Cout; ++co) {
    const double bv = b.val()[co];
    double* dst = out.data.data() + co * nvox;
    for (int64_t i = 0; i < nvox; ++i) dst[i] = bv;
  }
  gemm_nn(out.data.data(), W.val().data.data(), x.val().data.data(), Cout, Cin, nvox);
  const int px = x.id, pw = W.id, pb = b.id;
  return make_op(*x.g, std::move(out), {px, pw, pb},
                 [px, pw, pb, Cin, Cout, nvox](Graph& g, int self) {
                   const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
                   if (g.nodes[static_cast<size_t>(px)].requires_grad)
                     gemm_tn(g.grad_of(px).data.data(), g.value_of(pw).data.data(), dy.data.data(),
                             Cout, Cin, nvox);
                   if (g.nodes[static_cast<size_t>(pw)].requires_grad)
                     gemm_nt(g.grad_of(pw).data.data(), dy.data.data(), g.value_of(px).data.data(),
                             Cout, nvox, Cin);
                   if (g.nodes[static_cast<size_t>(pb)].requires_grad) {
                     Tensor& db = g.grad_of(pb);
                     for (int64_t co = 0; co < Cout; ++co) {
                       const double* dyc = dy.data.data() + co * nvox;
                       double acc = 0.0;
                       for (int64_t i = 0; i < nvox; ++i) acc += dyc[i];
                       db.data[static_cast<size_t>(co)] += acc;
                     }
                   }
                 });
}

namespace {

// Shared implementation for stride-2 transpose convolutions. kernel=2 uses
// offset = k, kernel=3 uses offset = k-1 with clipping (output padding 1).
template <int KSZ>
void convT_forward(double* out, const double* in, const double* w, const double* bias, int64_t Cin,
                   int64_t Cout, int64_t D, int64_t H, int64_t Wd) {
  const int64_t Do = 2 * D, Ho = 2 * H, Wo = 2 * Wd;
  const int64_t ovol = Do * Ho * Wo, ivol = D * H * Wd;
  const int64_t off = (KSZ == 2) ? 0 : -1;
  for (int64_t co = 0; co < Cout; ++co) {
    double* dst = out + co * ovol;
    const double bv = bias ? bias[co] : 0.0;
    for (int64_t i = 0; i < ovol; ++i) dst[i] = bv;
  }
  for (int64_t ci = 0; ci < Cin; ++ci) {
    const double* src = in + ci * ivol;
    for (int64_t co = 0; co < Cout; ++co) {
      const double* wk = w + (ci * Cout + co) * KSZ * KSZ * KSZ;
      double* dst = out + co * ovol;
      for (int64_t kz = 0; kz < KSZ; ++kz)
        for (int64_t ky = 0; ky < KSZ; ++ky)
          for (int64_t kx = 0; kx < KSZ; ++kx) {
            const double wv = wk[(kz * KSZ + ky) * KSZ + kx];
            if (wv == 0.0) continue;
            for (int64_t z = 0; z < D; ++z) {
              const int64_t oz = 2 * z + kz + off;
              if (oz < 0 || oz >= Do) continue;
              for (int64_t y = 0; y < H; ++y) {
                const int64_t oy = 2 * y + ky + off;
                if (oy < 0 || oy >= Ho) continue;
                const double* srow = src + (z * H + y) * Wd;
                double* drow = dst + (oz * Ho + oy) * Wo;
                for (int64_t xx = 0; xx < Wd; ++xx) {
                  const int64_t ox = 2 * xx + kx + off;
                  if (ox < 0 || ox >= Wo) continue;
                  drow[ox] += wv * srow[xx];
                }
              }
            }
          }
    }
  }
}

template <int KSZ>
void convT_backward(Graph& g, int self, int px, int pw, int pb, int64_t Cin, int64_t Cout,
                    int64_t D, int64_t H, int64_t Wd) {
  const Tensor& dy = g.nodes[static_cast<size_t>(self)].grad;
  const int64_t Do = 2 * D, Ho = 2 * H, Wo = 2 * Wd;
  const int64_t ovol = Do * Ho * Wo, ivol = D * H * Wd;
  const int64_t off = (KSZ == 2) ? 0 : -1;
  const bool nx = g.nodes[static_cast<size_t>(px)].requires_grad;
  const bool nw = g.nodes[static_cast<size_t>(pw)].requires_grad;
  const bool nb = g.nodes[static_cast<size_t>(pb)].requires_grad;
  const Tensor& wv = g.value_of(pw);
  const Tensor& xv = g.value_of(px);
  Tensor* dx = nx ? &g.grad_of(px) : nullptr;
  Tensor* dw = nw ? &g.grad_of(pw) : nullptr;
  if (nx || nw) {
    for (int64_t ci = 0; ci < Cin; ++ci) {
      for (int64_t co = 0; co < Cout; ++co) {
        const double* wk = wv.data.data() + (ci * Cout + co) * KSZ * KSZ * KSZ;
        double* dwk = nw ? dw->data.data() + (ci * Cout + co) * KSZ * KSZ * KSZ : nullptr;
        const double* dyc = dy.data.data() + co * ovol;
        for (int64_t kz = 0; kz < KSZ; ++kz)
          for (int64_t ky = 0; ky < KSZ; ++ky)
            for (int64_t kx = 0; kx < KSZ; ++kx) {
              const double wvv = wk[(kz * KSZ + ky) * KSZ + kx];
              double wacc = 0.0;
              for (int64_t z = 0; z < D; ++z) {
                const int64_t oz = 2 * z + kz + off;
                if (oz < 0 || oz >= Do) continue;
                for (int64_t y = 0; y < H; ++y) {
                  const int64_t oy = 2 * y + ky + off;
                  if (oy < 0 || oy >= Ho) continue;
                  const double* dyrow = dyc + (oz * Ho + oy) * Wo;
                  const double* xrow = xv.data.data() + ci * ivol + (z * H + y) * Wd;
                  double* dxrow = nx ? dx->data.data() + ci * ivol + (z * H + y) * Wd : nullptr;
                  for (int64_t xx = 0; xx < Wd; ++xx) {
                    const int64_t ox = 2 * xx + kx + off;
                    if (ox < 0 || ox >= Wo) continue;
                    if (nx) dxrow[xx] += wvv * dyrow[ox];
                    if (nw) wacc += dyrow[ox] * xrow[xx];
                  }
                }
              }
              if (nw) dwk[(kz * KSZ + ky) * KSZ + kx] += wacc;
            }
      }
    }
  }
  if (nb) {
    Tensor& db = g.grad_of(pb);
    for (int64_t co = 0; co < Cout; ++co) {
      const double* dyc = dy.data.data() + co * ovol;
      double acc = 0.0;
      for (int64_t i = 0; i < ovol; ++i) acc += dyc[i];
      db.data[static_cast<size_t>(co)] += acc;
    }
  }
}

template <int KSZ>
Var convT_impl(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t D, int64_t H, int64_t Wd,
               const char* name) {
  check(x.val().numel() == Cin * D * H * Wd, name);
  check(W.val().numel() == Cin * Cout * KSZ * KSZ * KSZ, name);
  check(b.val().numel() == Cout, name);
  Tensor out({Cout, 2 * D, 2 * H, 2 * Wd});
  convT_forward<KSZ>(out.data.data(), x.val().data.data(), W.val().data.data(),
                     b.val().data.data(), Cin, Cout, D, H, Wd);
  const int px = x.id, pw = W.id, pb = b.id;
  return make_op(*x.g, std::move(out), {px, pw, pb},
                 [px, pw, pb, Cin, Cout, D, H, Wd](Graph& g, int self) {
                   convT_backward<KSZ>(g, self, px, pw, pb, Cin, Cout, D, H, Wd);
                 });
}

}  // namespace

Var conv_transpose2x(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t D, int64_t H,
                     int64_t Wd) {
  return convT_impl<2>(x, W, b, Cin, Cout, D, H, Wd, "conv_transpose2x: size");
}

Var conv_transpose3x(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t D, int64_t H,
                     int64_t Wd) {
  return convT_impl<3>(x, W, b, Cin, Cout, D, H, Wd, "conv_transpose3x: size");
}

// ---------------------------------------------------------------------------------------------

Var l1_masked_mean(Var pred, std::shared_ptr<const Tensor> target, ByteVec row_mask) {
  const Tensor& pv = pred.val();
  check(pv.numel() == target->numel(), "l1_masked_mean: target size");
  const int64_t N = static_cast<int64_t>(row_mask->size());
  check(pv.numel() % N == 0, "l1_masked_mean: row count");
  const int64_t C = pv.numel() / N;
  int64_t masked = 0;
  for (uint8_t m : *row_mask) masked += m ? 1 : 0;
  double loss = 0.0;
  if (masked > 0) {
    for (int64_t r = 0; r < N; ++r) {
      if (!(*row_mask)[static_cast<size_t>(r)]) continue;
      const double* pr = pv.data.data() + r * C;
      const double* tr = target->data.data() + r * C;
      for (int64_t c = 0; c < C; ++c) loss += std::abs(pr[c] - tr[c]);
    }
    loss /= static_cast<double>(masked * C);
  }
  const int pp = pred.id;
  return make_op(*pred.g, Tensor::scalar(loss), {pp},
                 [pp, target, row_mask, N, C, masked](Graph& g, int self) {
                   if (masked == 0) return;
                   const double dy = g.nodes[static_cast<size_t>(self)].grad.item();
                   const double scale = dy / static_cast<double>(masked * C);
                   const Tensor& pv = g.value_of(pp);
                   Tensor& dp = g.grad_of(pp);
                   for (int64_t r = 0; r < N; ++r) {
                     if (!(*row_mask)[static_cast<size_t>(r)]) continue;
                     const double* pr = pv.data.data() + r * C;
                     const double* tr = target->data.data() + r * C;
                     double* dr = dp.data.data() + r * C;
                     for (int64_t c = 0; c < C; ++c) {
                       const double d = pr[c] - tr[c];
                       dr[c] += d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
                     }
                   }
                 });
}

Var ce_vs_teacher(Var logits, std::shared_ptr<const Tensor> teacher_probs, double tau_s,
                  ByteVec row_mask) {
  const Tensor& lv = logits.val();
  check(lv.numel() == teacher_probs->numel(), "ce_vs_teacher: teacher size");
  const int64_t N = static_cast<int64_t>(row_mask->size());
  check(lv.numel() % N == 0, "ce_vs_teacher: row count");
  const int64_t K = lv.numel() / N;
  check(tau_s > 0.0, "ce_vs_teacher: tau_s must be positive");
  int64_t masked = 0;
  for (uint8_t m : *row_mask) masked += m ? 1 : 0;
  double loss = 0.0;
  if (masked > 0) {
    for (int64_t r = 0; r < N; ++r) {
      if (!(*row_mask)[static_cast<size_t>(r)]) continue;
      const double* lr = lv.data.data() + r * K;
      const double* tr = teacher_probs->data.data() + r * K;
      double mx = -1e300;
      for (int64_t k = 0; k < K; ++k) mx = std::max(mx, lr[k] / tau_s);
      double z = 0.0;
      for (int64_t k = 0; k < K; ++k) z += std::exp(lr[k] / tau_s - mx);
      const double logz = std::log(z);
      for (int64_t k = 0; k < K; ++k) loss -= tr[k] * (lr[k] / tau_s - mx - logz);
    }
    loss /= static_cast<double>(masked);
  }
  const int pl = logits.id;
  return make_op(*logits.g, Tensor::scalar(loss), {pl},
                 [pl, teacher_probs, row_mask, tau_s, N, K, masked](Graph& g, int self) {
                   if (masked == 0) return;
                   const double dy = g.nodes[static_cast<size_t>(self)].grad.item();
                   const double sc = dy / (static_cast<double>(masked) * tau_s);
                   const Tensor& lv = g.value_of(pl);
                   Tensor& dl = g.grad_of(pl);
                   for (int64_t r = 0; r < N; ++r) {
                     if (!(*row_mask)[static_cast<size_t>(r)]) continue;
                     const double* lr = lv.data.data() + r * K;
                     const double* tr = teacher_probs->data.data() + r * K;
                     double* dr = dl.data.data() + r * K;
                     double mx = -1e300;
                     for (int64_t k = 0; k < K; ++k) mx = std::max(mx, lr[k] / tau_s);
                     double z = 0.0;
                     for (int64_t k = 0; k < K; ++k) z += std::exp(lr[k] / tau_s - mx);
                     for (int64_t k = 0; k < K; ++k) {
                       const double s = std::exp(lr[k] / tau_s - mx) / z;
                       dr[k] += sc * (s - tr[k]);
                     }
                   }
                 });
}

Var dice_ce_loss(Var logits, std::shared_ptr<const std::vector<uint16_t>> labels, int64_t C,
                 int64_t V, double w_dice, double w_ce) {
  const Tensor& lv = logits.val();
  check(lv.numel() == C * V, "dice_ce_loss: logits size");
  check(static_cast<int64_t>(labels->size()) == V, "dice_ce_loss: labels size");
  constexpr double eps = 1e-6;
  // Softmax over classes per voxel (class stride = V).
  auto probs = std::make_shared<Tensor>(std::vector<int64_t>{C, V});
  double ce = 0.0;
  for (int64_t v = 0; v < V; ++v) {
    double mx = -1e300;
    for (int64_t c = 0; c < C; ++c) mx = std::max(mx, lv[c * V + v]);
    double z = 0.0;
    for (int64_t c = 0; c < C; ++c) z += std::exp(lv[c * V + v] - mx);
    const double logz = std::log(z);
    for (int64_t c = 0; c < C; ++c)
      probs->data[static_cast<size_t>(c * V + v)] = std::exp(lv[c * V + v] - mx - logz);
    const int64_t gv = (*labels)[static_cast<size_t>(v)];
    ce -= lv[gv * V + v] - mx - logz;
  }
  ce /= static_cast<double>(V);
  std::vector<double> num(static_cast<size_t>(C)), den(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) {
    double psum = 0.0, isect = 0.0, gsum = 0.0;
    const double* pc = probs->data.data() + c * V;
    for (int64_t v = 0; v < V; ++v) {
      psum += pc[v];
      if ((*labels)[static_cast<size_t>(v)] == c) {
        gsum += 1.0;
        isect += pc[v];
      }
    }
    num[static_cast<size_t>(c)] = 2.0 * isect + eps;
    den[static_cast<size_t>(c)] = psum + gsum + eps;
  }
  double dice = 0.0;
  for (int64_t c = 0; c < C; ++c) dice += num[static_cast<size_t>(c)] / den[static_cast<size_t>(c)];
  dice /= static_cast<double>(C);
  const double loss = w_dice * (1.0 - dice) + w_ce * ce;
  const int pl = logits.id;
  auto num_keep = std::make_shared<std::vector<double>>(std::move(num));
  auto den_keep = std::make_shared<std::vector<double>>(std::move(den));
  return make_op(
      *logits.g, Tensor::scalar(loss), {pl},
      [pl, labels, probs, num_keep, den_keep, C, V, w_dice, w_ce](Graph& g, int self) {
        const double dy = g.nodes[static_cast<size_t>(self)].grad.item();
        Tensor& dl = g.grad_of(pl);
        const double invV = 1.0 / static_cast<double>(V);
        const double invC = 1.0 / static_cast<double>(C);
        // dLdice/dP[c,v] = -(1/C) * (2*G[c,v]*den_c - num_c) / den_c^2
        for (int64_t v = 0; v < V; ++v) {
          const int64_t gv = (*labels)[static_cast<size_t>(v)];
          double dot = 0.0;  // sum_c dP[c,v] * P[c,v], for the softmax chain
          for (int64_t c = 0; c < C; ++c) {
            const double dc = (*den_keep)[static_cast<size_t>(c)];
            const double gcv = (c == gv) ? 1.0 : 0.0;
            const double dP = -invC * (2.0 * gcv * dc - (*num_keep)[static_cast<size_t>(c)]) / (dc * dc);
            dot += dP * probs->data[static_cast<size_t>(c * V + v)];
          }
          for (int64_t c = 0; c < C; ++c) {
            const double p = probs->data[static_cast<size_t>(c * V + v)];
            const double dc = (*den_keep)[static_cast<size_t>(c)];
            const double gcv = (c == gv) ? 1.0 : 0.0;
            const double dP = -invC * (2.0 * gcv * dc - (*num_keep)[static_cast<size_t>(c)]) / (dc * dc);
            const double d_dice = p * (dP - dot);
            const double d_ce = (p - gcv) * invV;
            dl.data[static_cast<size_t>(c * V + v)] += dy * (w_dice * d_dice + w_ce * d_ce);
          }
        }
      });
}

Var dot_with(Var x, std::shared_ptr<const Tensor> w) {
  const Tensor& xv = x.val();
  check(xv.numel() == w->numel(), "dot_with: size mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < xv.numel(); ++i) acc += xv[i] * (*w)[i];
  const int px = x.id;
  return make_op(*x.g, Tensor::scalar(acc), {px}, [px, w](Graph& g, int self) {
    const double dy = g.nodes[static_cast<size_t>(self)].grad.item();
    Tensor& dx = g.grad_of(px);
    for (int64_t i = 0; i < dx.numel(); ++i) dx.data[static_cast<size_t>(i)] += dy * (*w)[i];
  });
}

Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
  check(!terms.empty(), "weighted_sum: empty");
  Graph& g = *terms[0].second.g;
  double acc = 0.0;
  std::vector<int> parents;
  for (const auto& [w, v] : terms) {
    check(v.val().numel() == 1, "weighted_sum: scalar terms only");
    acc += w * v.val().item();
    parents.push_back(v.id);
  }
  std::vector<std::pair<double, int>> wp;
  for (const auto& [w, v] : terms) wp.emplace_back(w, v.id);
  return make_op(g, Tensor::scalar(acc), parents, [wp](Graph& g2, int self) {
    const double dy = g2.nodes[static_cast<size_t>(self)].grad.item();
    for (const auto& [w, id] : wp) {
      if (!g2.nodes[static_cast<size_t>(id)].requires_grad) continue;
      g2.grad_of(id).data[0] += w * dy;
    }
  });
}

}  // namespace smit
