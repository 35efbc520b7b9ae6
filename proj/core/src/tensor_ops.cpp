#include <algorithm>
#include <cmath>
#include <cstring>

#include "lg/tensor.hpp"

namespace lg {

namespace {

// Broadcast relation for elementwise ops: shapes equal, or one operand's
// shape is a prefix of the other's and repeats over the trailing axes.
struct BcastPlan {
  bool a_small = false;  // a broadcasts over b's trailing axes
  bool b_small = false;
  int64_t rep = 1;       // trailing element count the small operand repeats over
};

bool is_prefix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  for (size_t i = 0; i < small.size(); ++i) {
    if (small[i] != big[i]) return false;
  }
  return true;
}

BcastPlan broadcast_plan(const char* op, const Tensor& a, const Tensor& b) {
  BcastPlan plan;
  if (a.shape() == b.shape()) return plan;
  if (is_prefix(a.shape(), b.shape())) {
    plan.a_small = true;
    plan.rep = b.size() / a.size();
    return plan;
  }
  if (is_prefix(b.shape(), a.shape())) {
    plan.b_small = true;
    plan.rep = a.size() / b.size();
    return plan;
  }
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " are not broadcast-compatible");
}

void require_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank-" + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

template <typename Fwd, typename Bwd>
Tensor unary_op(Graph& g, const char* name, const Tensor& x, Fwd fwd, Bwd dydx) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = fwd(v);
  Tensor y = g.emit(name, x.shape(), std::move(out), {x},
                    [x, dydx](const Tensor& out_t) mutable {
                      if (!x.needs_grad()) return;
                      auto go = out_t.grad();
                      auto yv = out_t.data();
                      auto xv = x.data();
                      auto& gx = x.grad_ref();
                      for (size_t i = 0; i < gx.size(); ++i) gx[i] += dydx(xv[i], yv[i]) * go[i];
                    });
  return y;
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  BcastPlan plan = broadcast_plan("add", a, b);
  const Shape& out_shape = plan.a_small ? b.shape() : a.shape();
  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  auto av = a.data();
  auto bv = b.data();
  const int64_t rep = plan.rep;
  if (plan.a_small) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i / rep] + bv[i];
  } else if (plan.b_small) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i / rep];
  } else {
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  }
  return g.emit("add", out_shape, std::move(out), {a, b},
                [a, b, plan](const Tensor& out_t) mutable {
                  auto go = out_t.grad();
                  const int64_t rep = plan.rep;
                  if (a.needs_grad()) {
                    auto& ga = a.grad_ref();
                    if (plan.a_small) {
                      for (size_t i = 0; i < go.size(); ++i) ga[i / rep] += go[i];
                    } else {
                      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                    }
                  }
                  if (b.needs_grad()) {
                    auto& gb = b.grad_ref();
                    if (plan.b_small) {
                      for (size_t i = 0; i < go.size(); ++i) gb[i / rep] += go[i];
                    } else {
                      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
                    }
                  }
                });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) { return add(g, a, neg(g, b)); }

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  BcastPlan plan = broadcast_plan("elementwise_product", a, b);
  const Shape& out_shape = plan.a_small ? b.shape() : a.shape();
  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  auto av = a.data();
  auto bv = b.data();
  const int64_t rep = plan.rep;
  if (plan.a_small) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i / rep] * bv[i];
  } else if (plan.b_small) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i / rep];
  } else {
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  }
  return g.emit("elementwise_product", out_shape, std::move(out), {a, b},
                [a, b, plan](const Tensor& out_t) mutable {
                  auto go = out_t.grad();
                  auto av = a.data();
                  auto bv = b.data();
                  const int64_t rep = plan.rep;
                  if (a.needs_grad()) {
                    auto& ga = a.grad_ref();
                    if (plan.a_small) {
                      for (size_t i = 0; i < go.size(); ++i) ga[i / rep] += bv[i] * go[i];
                    } else if (plan.b_small) {
                      for (size_t i = 0; i < go.size(); ++i) ga[i] += bv[i / rep] * go[i];
                    } else {
                      for (size_t i = 0; i < go.size(); ++i) ga[i] += bv[i] * go[i];
                    }
                  }
                  if (b.needs_grad()) {
                    auto& gb = b.grad_ref();
                    if (plan.b_small) {
                      for (size_t i = 0; i < go.size(); ++i) gb[i / rep] += av[i] * go[i];
                    } else if (plan.a_small) {
                      for (size_t i = 0; i < go.size(); ++i) gb[i] += av[i / rep] * go[i];
                    } else {
                      for (size_t i = 0; i < go.size(); ++i) gb[i] += av[i] * go[i];
                    }
                  }
                });
}

Tensor scale(Graph& g, const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return g.emit("scale", a.shape(), std::move(out), {a}, [a, s](const Tensor& out_t) mutable {
    if (!a.needs_grad()) return;
    auto go = out_t.grad();
    auto& ga = a.grad_ref();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += s * go[i];
  });
}

Tensor neg(Graph& g, const Tensor& a) { return scale(g, a, -1.0); }

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aik = ap[i * k + p];
      const double* brow = bp + static_cast<size_t>(p) * n;
      double* orow = out.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return g.emit("matmul", {m, n}, std::move(out), {a, b},
                [a, b, m, k, n](const Tensor& out_t) mutable {
                  auto go = out_t.grad();
                  if (a.needs_grad()) {
                    auto& ga = a.grad_ref();
                    const double* bp = b.data().data();
                    for (int i = 0; i < m; ++i) {
                      const double* grow = go.data() + static_cast<size_t>(i) * n;
                      for (int p = 0; p < k; ++p) {
                        const double* brow = bp + static_cast<size_t>(p) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[static_cast<size_t>(i) * k + p] += acc;
                      }
                    }
                  }
                  if (b.needs_grad()) {
                    auto& gb = b.grad_ref();
                    const double* ap = a.data().data();
                    for (int i = 0; i < m; ++i) {
                      for (int p = 0; p < k; ++p) {
                        const double aip = ap[static_cast<size_t>(i) * k + p];
                        const double* grow = go.data() + static_cast<size_t>(i) * n;
                        double* gbrow = gb.data() + static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                      }
                    }
                  }
                });
}

Tensor transpose(Graph& g, const Tensor& x) {
  require_rank("transpose", x, 2);
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  auto xv = x.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = xv[static_cast<size_t>(i) * n + j];
  return g.emit("transpose", {n, m}, std::move(out), {x},
                [x, m, n](const Tensor& out_t) mutable {
                  if (!x.needs_grad()) return;
                  auto go = out_t.grad();
                  auto& gx = x.grad_ref();
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                      gx[static_cast<size_t>(i) * n + j] += go[static_cast<size_t>(j) * m + i];
                });
}

Tensor vecmat(Graph& g, const Tensor& v, const Tensor& w) {
  require_rank("vecmat", v, 1);
  require_rank("vecmat", w, 2);
  const int k = v.dim(0), k2 = w.dim(0), n = w.dim(1);
  if (k != k2) {
    throw DimensionError("vecmat: inner dimensions disagree, " + shape_str(v.shape()) + " x " +
                         shape_str(w.shape()));
  }
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  auto vv = v.data();
  auto wv = w.data();
  for (int i = 0; i < k; ++i) {
    const double vi = vv[i];
    for (int j = 0; j < n; ++j) out[j] += vi * wv[static_cast<size_t>(i) * n + j];
  }
  return g.emit("vecmat", {n}, std::move(out), {v, w}, [v, w, k, n](const Tensor& out_t) mutable {
    auto go = out_t.grad();
    if (v.needs_grad()) {
      auto& gv = v.grad_ref();
      auto wv = w.data();
      for (int i = 0; i < k; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += wv[static_cast<size_t>(i) * n + j] * go[j];
        gv[i] += acc;
      }
    }
    if (w.needs_grad()) {
      auto& gw = w.grad_ref();
      auto vv = v.data();
      for (int i = 0; i < k; ++i) {
        const double vi = vv[i];
        for (int j = 0; j < n; ++j) gw[static_cast<size_t>(i) * n + j] += vi * go[j];
      }
    }
  });
}

Tensor bias_add(Graph& g, const Tensor& x, const Tensor& b) {
  require_rank("bias_add", b, 1);
  const int d = b.dim(0);
  if (x.dim(x.rank() - 1) != d) {
    throw DimensionError("bias_add: last axis of " + shape_str(x.shape()) +
                         " does not match bias " + shape_str(b.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
  return g.emit("bias_add", x.shape(), std::move(out), {x, b},
                [x, b, d](const Tensor& out_t) mutable {
                  auto go = out_t.grad();
                  if (x.needs_grad()) {
                    auto& gx = x.grad_ref();
                    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                  }
                  if (b.needs_grad()) {
                    auto& gb = b.grad_ref();
                    for (size_t i = 0; i < go.size(); ++i) gb[i % d] += go[i];
                  }
                });
}

Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = x.rank() == 1 ? vecmat(g, x, w) : matmul(g, x, w);
  if (!b.defined()) return y;
  if (y.rank() == 1) return add(g, y, b);
  return bias_add(g, y, b);
}

Tensor relu(Graph& g, const Tensor& x) {
  return unary_op(
      g, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Graph& g, const Tensor& x) {
  return unary_op(
      g, "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double yv) { return yv * (1.0 - yv); });
}

Tensor tanh(Graph& g, const Tensor& x) {
  return unary_op(
      g, "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double yv) { return 1.0 - yv * yv; });
}

Tensor log(Graph& g, const Tensor& x) {
  return unary_op(
      g, "log", x, [](double v) { return std::log(v); },
      [](double xv, double) { return 1.0 / xv; });
}

Tensor abs(Graph& g, const Tensor& x) {
  return unary_op(
      g, "abs", x, [](double v) { return std::fabs(v); },
      [](double xv, double) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
}

Tensor softmax(Graph& g, const Tensor& x) {
  const int d = x.dim(x.rank() - 1);
  const int64_t rows = x.size() / d;
  std::vector<double> out(static_cast<size_t>(x.size()));
  auto xv = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double* po = out.data() + r * d;
    double m = in[0];
    for (int j = 1; j < d; ++j) m = std::max(m, in[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      po[j] = std::exp(in[j] - m);
      z += po[j];
    }
    for (int j = 0; j < d; ++j) po[j] /= z;
  }
  return g.emit("softmax", x.shape(), std::move(out), {x},
                [x, d, rows](const Tensor& out_t) mutable {
                  if (!x.needs_grad()) return;
                  auto go = out_t.grad();
                  auto p = out_t.data();
                  auto& gx = x.grad_ref();
                  for (int64_t r = 0; r < rows; ++r) {
                    const double* pr = p.data() + r * d;
                    const double* gr = go.data() + r * d;
                    double dot = 0.0;
                    for (int j = 0; j < d; ++j) dot += pr[j] * gr[j];
                    double* gxr = gx.data() + r * d;
                    for (int j = 0; j < d; ++j) gxr[j] += pr[j] * (gr[j] - dot);
                  }
                });
}

Tensor masked_softmax(Graph& g, const Tensor& logits, const std::vector<uint8_t>& mask) {
  require_rank("masked_softmax", logits, 1);
  const size_t n = static_cast<size_t>(logits.size());
  if (mask.size() != n) {
    throw DimensionError("masked_softmax: mask size " + std::to_string(mask.size()) +
                         " does not match logits " + shape_str(logits.shape()));
  }
  auto hv = logits.data();
  double m = 0.0;
  bool any = false;
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    m = any ? std::max(m, hv[i]) : hv[i];
    any = true;
  }
  if (!any) throw DataError("masked_softmax: mask has no active cells");
  std::vector<double> out(n, 0.0);
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    out[i] = std::exp(hv[i] - m);
    z += out[i];
  }
  for (size_t i = 0; i < n; ++i) out[i] /= z;
  return g.emit("masked_softmax", logits.shape(), std::move(out), {logits},
                [logits](const Tensor& out_t) mutable {
                  if (!logits.needs_grad()) return;
                  auto go = out_t.grad();
                  auto p = out_t.data();
                  auto& gx = logits.grad_ref();
                  double dot = 0.0;
                  for (size_t i = 0; i < p.size(); ++i) dot += p[i] * go[i];
                  for (size_t i = 0; i < p.size(); ++i) gx[i] += p[i] * (go[i] - dot);
                });
}

namespace {

// Shared layer-norm kernel: `rows` groups of `d` values, where group r,
// component j sits at flat index r*row_stride + j*comp_stride.
struct NormLayout {
  int64_t rows;
  int d;
  int64_t row_stride;
  int64_t comp_stride;
};

Tensor layer_norm_impl(Graph& g, const char* name, const Tensor& x, const Tensor& gain,
                       const Tensor& bias, double eps, NormLayout lay) {
  if (gain.size() != lay.d || bias.size() != lay.d) {
    throw DimensionError(std::string(name) + ": gain/bias must have " + std::to_string(lay.d) +
                         " entries, got " + shape_str(gain.shape()) + " and " +
                         shape_str(bias.shape()));
  }
  const size_t n = static_cast<size_t>(x.size());
  std::vector<double> out(n);
  auto xhat = std::make_shared<std::vector<double>>(n);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(lay.rows));
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  for (int64_t r = 0; r < lay.rows; ++r) {
    const int64_t base = r * lay.row_stride;
    double mu = 0.0;
    for (int j = 0; j < lay.d; ++j) mu += xv[base + j * lay.comp_stride];
    mu /= lay.d;
    double var = 0.0;
    for (int j = 0; j < lay.d; ++j) {
      const double c = xv[base + j * lay.comp_stride] - mu;
      var += c * c;
    }
    var /= lay.d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    for (int j = 0; j < lay.d; ++j) {
      const int64_t idx = base + j * lay.comp_stride;
      const double xh = (xv[idx] - mu) * is;
      (*xhat)[static_cast<size_t>(idx)] = xh;
      out[static_cast<size_t>(idx)] = xh * gv[j] + bv[j];
    }
  }
  return g.emit(name, x.shape(), std::move(out), {x, gain, bias},
                [x, gain, bias, lay, xhat, inv_std](const Tensor& out_t) mutable {
                  auto go = out_t.grad();
                  auto gv = gain.data();
                  const bool need_x = x.needs_grad();
                  const bool need_g = gain.needs_grad();
                  const bool need_b = bias.needs_grad();
                  std::vector<double>* gx = need_x ? &x.grad_ref() : nullptr;
                  std::vector<double>* gg = need_g ? &gain.grad_ref() : nullptr;
                  std::vector<double>* gb = need_b ? &bias.grad_ref() : nullptr;
                  for (int64_t r = 0; r < lay.rows; ++r) {
                    const int64_t base = r * lay.row_stride;
                    const double is = (*inv_std)[static_cast<size_t>(r)];
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int j = 0; j < lay.d; ++j) {
                      const int64_t idx = base + j * lay.comp_stride;
                      const double dxh = go[static_cast<size_t>(idx)] * gv[j];
                      const double xh = (*xhat)[static_cast<size_t>(idx)];
                      mean_dxh += dxh;
                      mean_dxh_xh += dxh * xh;
                      if (need_g) (*gg)[j] += go[static_cast<size_t>(idx)] * xh;
                      if (need_b) (*gb)[j] += go[static_cast<size_t>(idx)];
                    }
                    mean_dxh /= lay.d;
                    mean_dxh_xh /= lay.d;
                    if (need_x) {
                      for (int j = 0; j < lay.d; ++j) {
                        const int64_t idx = base + j * lay.comp_stride;
                        const double dxh = go[static_cast<size_t>(idx)] * gv[j];
                        const double xh = (*xhat)[static_cast<size_t>(idx)];
                        (*gx)[static_cast<size_t>(idx)] += is * (dxh - mean_dxh - xh * mean_dxh_xh);
                      }
                    }
                  }
                });
}

}  // namespace

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int d = x.dim(x.rank() - 1);
  NormLayout lay{x.size() / d, d, d, 1};
  return layer_norm_impl(g, "layer_norm", x, gain, bias, eps, lay);
}

Tensor layer_norm_cells(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias,
                        double eps) {
  require_rank("layer_norm_cells", x, 3);
  const int c = x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  // Group r = spatial cell, component j = channel; channel stride is H*W.
  NormLayout lay{hw, c, 1, hw};
  return layer_norm_impl(g, "layer_norm_cells", x, gain, bias, eps, lay);
}

Tensor l2_normalize(Graph& g, const Tensor& v, double eps) {
  double sq = 0.0;
  for (double x : v.data()) sq += x * x;
  const double norm = std::sqrt(sq + eps);
  std::vector<double> out(v.data().begin(), v.data().end());
  for (double& x : out) x /= norm;
  return g.emit("l2_normalize", v.shape(), std::move(out), {v},
                [v, norm](const Tensor& out_t) mutable {
                  if (!v.needs_grad()) return;
                  auto go = out_t.grad();
                  auto y = out_t.data();
                  auto& gv = v.grad_ref();
                  double dot = 0.0;
                  for (size_t i = 0; i < y.size(); ++i) dot += go[i] * y[i];
                  for (size_t i = 0; i < y.size(); ++i) gv[i] += (go[i] - y[i] * dot) / norm;
                });
}

Tensor concat(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  int dim0 = 0;
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank()) {
      throw DimensionError("concat: rank mismatch between " + shape_str(first) + " and " +
                           shape_str(p.shape()));
    }
    for (int i = 1; i < p.rank(); ++i) {
      if (p.dim(i) != parts[0].dim(i)) {
        throw DimensionError("concat: trailing dims disagree, " + shape_str(first) + " vs " +
                             shape_str(p.shape()));
      }
    }
    dim0 += p.dim(0);
    total += p.size();
  }
  Shape out_shape = first;
  out_shape[0] = dim0;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total));
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return g.emit("concat", std::move(out_shape), std::move(out), parts,
                [parts](const Tensor& out_t) mutable {
                  auto go = out_t.grad();
                  size_t off = 0;
                  for (Tensor& p : const_cast<std::vector<Tensor>&>(parts)) {
                    const size_t n = static_cast<size_t>(p.size());
                    if (p.needs_grad()) {
                      auto& gp = p.grad_ref();
                      for (size_t i = 0; i < n; ++i) gp[i] += go[off + i];
                    }
                    off += n;
                  }
                });
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.size()) +
                         " elements, target " + shape_str(shape) + " wants " +
                         std::to_string(numel(shape)));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return g.emit("reshape", std::move(shape), std::move(out), {x},
                [x](const Tensor& out_t) mutable {
                  if (!x.needs_grad()) return;
                  auto go = out_t.grad();
                  auto& gx = x.grad_ref();
                  for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
                });
}

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& kernel, int stride, int padding) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", kernel, 4);
  const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int co = kernel.dim(0), kci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kci != ci) {
    throw DimensionError("conv2d: kernel input channels " + shape_str(kernel.shape()) +
                         " do not match input " + shape_str(x.shape()));
  }
  if (kh != kw || (kh != 1 && kh != 3)) {
    throw ConfigError("conv2d: kernel size must be 1x1 or 3x3, got " + shape_str(kernel.shape()));
  }
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  const int hn = h + 2 * padding - kh;
  const int wn = w + 2 * padding - kw;
  if (hn < 0 || wn < 0 || hn % stride != 0 || wn % stride != 0) {
    throw ConfigError("conv2d: output size is not integral for input " + shape_str(x.shape()) +
                      ", kernel " + std::to_string(kh) + ", stride " + std::to_string(stride) +
                      ", padding " + std::to_string(padding));
  }
  const int ho = hn / stride + 1;
  const int wo = wn / stride + 1;
  std::vector<double> out(static_cast<size_t>(co) * ho * wo, 0.0);
  const double* xp = x.data().data();
  const double* kp = kernel.data().data();
  for (int oc = 0; oc < co; ++oc) {
    for (int ic = 0; ic < ci; ++ic) {
      const double* xc = xp + static_cast<size_t>(ic) * h * w;
      const double* kc = kp + (static_cast<size_t>(oc) * ci + ic) * kh * kw;
      double* oc_out = out.data() + static_cast<size_t>(oc) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          const int iy0 = oy * stride - padding;
          const int ix0 = ox * stride - padding;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= w) continue;
              acc += xc[static_cast<size_t>(iy) * w + ix] * kc[ky * kw + kx];
            }
          }
          oc_out[static_cast<size_t>(oy) * wo + ox] += acc;
        }
      }
    }
  }
  return g.emit(
      "conv2d", {co, ho, wo}, std::move(out), {x, kernel},
      [x, kernel, stride, padding, ci, h, w, co, kh, kw, ho, wo](const Tensor& out_t) mutable {
        auto go = out_t.grad();
        const bool need_x = x.needs_grad();
        const bool need_k = kernel.needs_grad();
        std::vector<double>* gx = need_x ? &x.grad_ref() : nullptr;
        std::vector<double>* gk = need_k ? &kernel.grad_ref() : nullptr;
        const double* xp = x.data().data();
        const double* kp = kernel.data().data();
        for (int oc = 0; oc < co; ++oc) {
          const double* grow = go.data() + static_cast<size_t>(oc) * ho * wo;
          for (int ic = 0; ic < ci; ++ic) {
            const double* xc = xp + static_cast<size_t>(ic) * h * w;
            const double* kc = kp + (static_cast<size_t>(oc) * ci + ic) * kh * kw;
            double* gxc = need_x ? gx->data() + static_cast<size_t>(ic) * h * w : nullptr;
            double* gkc = need_k ? gk->data() + (static_cast<size_t>(oc) * ci + ic) * kh * kw : nullptr;
            for (int oy = 0; oy < ho; ++oy) {
              for (int ox = 0; ox < wo; ++ox) {
                const double gv = grow[static_cast<size_t>(oy) * wo + ox];
                if (gv == 0.0) continue;
                const int iy0 = oy * stride - padding;
                const int ix0 = ox * stride - padding;
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= w) continue;
                    if (need_x) gxc[static_cast<size_t>(iy) * w + ix] += kc[ky * kw + kx] * gv;
                    if (need_k) gkc[ky * kw + kx] += xc[static_cast<size_t>(iy) * w + ix] * gv;
                  }
                }
              }
            }
          }
        }
      });
}

Tensor scaled_dot_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v) {
  require_rank("scaled_dot_attention", q, 2);
  require_rank("scaled_dot_attention", k, 2);
  require_rank("scaled_dot_attention", v, 2);
  if (q.shape() != k.shape() || q.dim(0) != v.dim(0)) {
    throw DimensionError("scaled_dot_attention: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()) + " disagree");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor scores = scale(g, matmul(g, q, transpose(g, k)), inv_sqrt_d);
  Tensor weights = softmax(g, scores);
  return matmul(g, weights, v);
}

Tensor sum(Graph& g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return g.emit("sum", {1}, {acc}, {x}, [x](const Tensor& out_t) mutable {
    if (!x.needs_grad()) return;
    const double go = out_t.grad()[0];
    auto& gx = x.grad_ref();
    for (double& v : gx) v += go;
  });
}

Tensor mean(Graph& g, const Tensor& x) { return scale(g, sum(g, x), 1.0 / x.size()); }

Tensor pick(Graph& g, const Tensor& x, int64_t flat_index) {
  return pick_many(g, x, {flat_index});
}

Tensor pick_many(Graph& g, const Tensor& x, const std::vector<int64_t>& flat_indices) {
  std::vector<double> out(flat_indices.size());
  auto xv = x.data();
  for (size_t i = 0; i < flat_indices.size(); ++i) {
    const int64_t idx = flat_indices[i];
    if (idx < 0 || idx >= x.size()) {
      throw DimensionError("pick: flat index " + std::to_string(idx) + " out of range for " +
                           shape_str(x.shape()));
    }
    out[i] = xv[static_cast<size_t>(idx)];
  }
  auto idxs = std::make_shared<std::vector<int64_t>>(flat_indices);
  return g.emit("pick", {static_cast<int>(flat_indices.size())}, std::move(out), {x},
                [x, idxs](const Tensor& out_t) mutable {
                  if (!x.needs_grad()) return;
                  auto go = out_t.grad();
                  auto& gx = x.grad_ref();
                  for (size_t i = 0; i < idxs->size(); ++i) {
                    gx[static_cast<size_t>((*idxs)[i])] += go[i];
                  }
                });
}

Tensor row(Graph& g, const Tensor& table, int r) {
  require_rank("row", table, 2);
  const int d = table.dim(1);
  if (r < 0 || r >= table.dim(0)) {
    throw DimensionError("row: index " + std::to_string(r) + " out of range for " +
                         shape_str(table.shape()));
  }
  std::vector<double> out(table.data().begin() + static_cast<size_t>(r) * d,
                          table.data().begin() + static_cast<size_t>(r + 1) * d);
  return g.emit("row", {d}, std::move(out), {table}, [table, r, d](const Tensor& out_t) mutable {
    if (!table.needs_grad()) return;
    auto go = out_t.grad();
    auto& gt = table.grad_ref();
    for (int j = 0; j < d; ++j) gt[static_cast<size_t>(r) * d + j] += go[j];
  });
}

Tensor gather_window(Graph& g, const Tensor& x, int row0, int col0, int win) {
  require_rank("gather_window", x, 3);
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> out(static_cast<size_t>(win) * win * c, 0.0);
  auto xv = x.data();
  for (int wr = 0; wr < win; ++wr) {
    const int iy = row0 + wr;
    if (iy < 0 || iy >= h) continue;
    for (int wc = 0; wc < win; ++wc) {
      const int ix = col0 + wc;
      if (ix < 0 || ix >= w) continue;
      const int t = wr * win + wc;
      for (int ch = 0; ch < c; ++ch) {
        out[static_cast<size_t>(t) * c + ch] = xv[(static_cast<size_t>(ch) * h + iy) * w + ix];
      }
    }
  }
  return g.emit("gather_window", {win * win, c}, std::move(out), {x},
                [x, row0, col0, win, c, h, w](const Tensor& out_t) mutable {
                  if (!x.needs_grad()) return;
                  auto go = out_t.grad();
                  auto& gx = x.grad_ref();
                  for (int wr = 0; wr < win; ++wr) {
                    const int iy = row0 + wr;
                    if (iy < 0 || iy >= h) continue;
                    for (int wc = 0; wc < win; ++wc) {
                      const int ix = col0 + wc;
                      if (ix < 0 || ix >= w) continue;
                      const int t = wr * win + wc;
                      for (int ch = 0; ch < c; ++ch) {
                        gx[(static_cast<size_t>(ch) * h + iy) * w + ix] +=
                            go[static_cast<size_t>(t) * c + ch];
                      }
                    }
                  }
                });
}

Tensor assemble_windows(Graph& g, const std::vector<Tensor>& windows, int channels, int height,
                        int width, int win) {
  const int tiles_r = (height + win - 1) / win;
  const int tiles_c = (width + win - 1) / win;
  if (static_cast<int>(windows.size()) != tiles_r * tiles_c) {
    throw DimensionError("assemble_windows: expected " + std::to_string(tiles_r * tiles_c) +
                         " windows, got " + std::to_string(windows.size()));
  }
  std::vector<double> out(static_cast<size_t>(channels) * height * width, 0.0);
  for (int tr = 0; tr < tiles_r; ++tr) {
    for (int tc = 0; tc < tiles_c; ++tc) {
      const Tensor& wt = windows[static_cast<size_t>(tr) * tiles_c + tc];
      if (wt.dim(0) != win * win || wt.dim(1) != channels) {
        throw DimensionError("assemble_windows: window " + shape_str(wt.shape()) +
                             " does not match win=" + std::to_string(win) +
                             ", channels=" + std::to_string(channels));
      }
      auto wv = wt.data();
      for (int wr = 0; wr < win; ++wr) {
        const int iy = tr * win + wr;
        if (iy >= height) continue;
        for (int wc = 0; wc < win; ++wc) {
          const int ix = tc * win + wc;
          if (ix >= width) continue;
          const int t = wr * win + wc;
          for (int ch = 0; ch < channels; ++ch) {
            out[(static_cast<size_t>(ch) * height + iy) * width + ix] =
                wv[static_cast<size_t>(t) * channels + ch];
          }
        }
      }
    }
  }
  return g.emit("assemble_windows", {channels, height, width}, std::move(out), windows,
                [windows, channels, height, width, win, tiles_r, tiles_c](
                    const Tensor& out_t) mutable {
                  auto go = out_t.grad();
                  for (int tr = 0; tr < tiles_r; ++tr) {
                    for (int tc = 0; tc < tiles_c; ++tc) {
                      Tensor wt = windows[static_cast<size_t>(tr) * tiles_c + tc];
                      if (!wt.needs_grad()) continue;
                      auto& gw = wt.grad_ref();
                      for (int wr = 0; wr < win; ++wr) {
                        const int iy = tr * win + wr;
                        if (iy >= height) continue;
                        for (int wc = 0; wc < win; ++wc) {
                          const int ix = tc * win + wc;
                          if (ix >= width) continue;
                          const int t = wr * win + wc;
                          for (int ch = 0; ch < channels; ++ch) {
                            gw[static_cast<size_t>(t) * channels + ch] +=
                                go[(static_cast<size_t>(ch) * height + iy) * width + ix];
                          }
                        }
                      }
                    }
                  }
                });
}

Tensor mlp_forward(Graph& g, const Tensor& x, const std::vector<LinearLayer>& layers) {
  if (layers.empty()) throw ConfigError("mlp_forward: no layers");
  Tensor h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = linear(g, h, layers[i].w, layers[i].b);
    if (i + 1 < layers.size()) h = relu(g, h);
  }
  return h;
}

}  // namespace lg
