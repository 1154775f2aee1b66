// SPDX-License-Identifier: Apache-2.0
#include "cme/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cme/errors.hpp"
#include "cme/kernels.hpp"

namespace cme {

const Tensor2D& Var::value() const {
  if (!valid()) throw ContractError("Var::value on an unbound handle");
  return tape_->value(id_);
}

Var GradTape::constant(Tensor2D value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var GradTape::variable(Tensor2D value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var GradTape::parameter(const Tensor2D& value) {
  Node n;
  n.external = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor2D& GradTape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external != nullptr ? *n.external : n.value;
}

Var GradTape::record(Tensor2D value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ContractError("op mixes nodes from different tapes");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor2D& GradTape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Tensor2D& v = value(id);
    if (n.grad.same_shape(v)) {
      n.grad.fill(0.0);
    } else {
      n.grad = Tensor2D(v.rows(), v.cols());
    }
    n.has_grad = true;
  }
  return n.grad;
}

void GradTape::backward(Var root, bool retain) {
  if (root.tape() != this) throw ContractError("backward: root belongs to another tape");
  if (consumed_) {
    throw ContractError("backward: tape already consumed; pass retain=true to replay");
  }
  const Tensor2D& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + rv.shape_str());
  }
  for (Node& n : nodes_) n.has_grad = false;
  visit_order_.clear();
  grad_slot(root.id())(0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    visit_order_.push_back(i);
    n.backward(*this, i);
  }
  if (!retain) consumed_ = true;
}

Tensor2D GradTape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.has_grad) return n.grad;
  const Tensor2D& val = value(v.id());
  return Tensor2D(val.rows(), val.cols());
}

// ---- ops -------------------------------------------------------------------

namespace {

GradTape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("op on an unbound Var");
  return *a.tape();
}

void require_same_shape(const char* op, const Tensor2D& a, const Tensor2D& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

void axpy(Tensor2D& dst, const Tensor2D& src, double s = 1.0) {
  auto d = dst.data();
  auto x = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * x[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  GradTape& t = tape_of(a);
  Tensor2D c;
  kernels::gemm(false, false, a.value(), b.value(), c, false);
  const Var in[] = {a, b};
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(c), in, [ia, ib](GradTape& tp, std::size_t self) {
    const Tensor2D& dc = tp.out_grad(self);
    if (tp.requires_grad(ia)) kernels::gemm(false, true, dc, tp.value(ib), tp.grad_slot(ia), true);
    if (tp.requires_grad(ib)) kernels::gemm(true, false, tp.value(ia), dc, tp.grad_slot(ib), true);
  });
}

Var transpose(Var a) {
  GradTape& t = tape_of(a);
  const Tensor2D& x = a.value();
  Tensor2D y(x.cols(), x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y(c, r) = x(r, c);
  const Var in[] = {a};
  const std::size_t ia = a.id();
  return t.record(std::move(y), in, [ia](GradTape& tp, std::size_t self) {
    const Tensor2D& g = tp.out_grad(self);
    Tensor2D& ga = tp.grad_slot(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(c, r);
  });
}

Var add(Var a, Var b) {
  GradTape& t = tape_of(a);
  require_same_shape("add", a.value(), b.value());
  Tensor2D y = a.value();
  axpy(y, b.value());
  const Var in[] = {a, b};
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(y), in, [ia, ib](GradTape& tp, std::size_t self) {
    const Tensor2D& g = tp.out_grad(self);
    if (tp.requires_grad(ia)) axpy(tp.grad_slot(ia), g);
    if (tp.requires_grad(ib)) axpy(tp.grad_slot(ib), g);
  });
}

Var sub(Var a, Var b) {
  GradTape& t = tape_of(a);
  require_same_shape("sub", a.value(), b.value());
  Tensor2D y = a.value();
  axpy(y, b.value(), -1.0);
  const Var in[] = {a, b};
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(y), in, [ia, ib](GradTape& tp, std::size_t self) {
    const Tensor2D& g = tp.out_grad(self);
    if (tp.requires_grad(ia)) axpy(tp.grad_slot(ia), g);
    if (tp.requires_grad(ib)) axpy(tp.grad_slot(ib), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  GradTape& t = tape_of(a);
  require_same_shape("mul", a.value(), b.value());
  Tensor2D y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] *= bv[i];
  const Var in[] = {a, b};
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(y), in, [ia, ib](GradTape& tp, std::size_t self) {
    const auto g = tp.out_grad(self).data();
    if (tp.requires_grad(ia)) {
      auto ga = tp.grad_slot(ia).data();
      const auto bv = tp.value(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.grad_slot(ib).data();
      const auto av = tp.value(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var mul_const(Var a, const Tensor2D& c) {
  GradTape& t = tape_of(a);
  require_same_shape("mul_const", a.value(), c);
  Tensor2D y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] *= c.data()[i];
  const Var in[] = {a};
  const std::size_t ia = a.id();
  return t.record(std::move(y), in, [ia, c](GradTape& tp, std::size_t self) {
    const auto g = tp.out_grad(self).data();
    auto ga = tp.grad_slot(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c.data()[i];
  });
}

Var add_row_bias(Var x, Var bias) {
  GradTape& t = tape_of(x);
  const Tensor2D& xv = x.value();
  const Tensor2D& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row_bias: bias " + bv.shape_str() + " does not broadcast over " +
                     xv.shape_str());
  }
  Tensor2D y = xv;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bv(0, c);
  const Var in[] = {x, bias};
  const std::size_t ix = x.id(), ib = bias.id();
  return t.record(std::move(y), in, [ix, ib](GradTape& tp, std::size_t self) {
    const Tensor2D& g = tp.out_grad(self);
    if (tp.requires_grad(ix)) axpy(tp.grad_slot(ix), g);
    if (tp.requires_grad(ib)) {
      Tensor2D& gb = tp.grad_slot(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
    }
  });
}

Var scale(Var a, double s) {
  GradTape& t = tape_of(a);
  Tensor2D y = a.value();
  for (double& v : y.data()) v *= s;
  const Var in[] = {a};
  const std::size_t ia = a.id();
  return t.record(std::move(y), in, [ia, s](GradTape& tp, std::size_t self) {
    axpy(tp.grad_slot(ia), tp.out_grad(self), s);
  });
}

Var add_scalar(Var a, double s) {
  GradTape& t = tape_of(a);
  Tensor2D y = a.value();
  for (double& v : y.data()) v += s;
  const Var in[] = {a};
  const std::size_t ia = a.id();
  return t.record(std::move(y), in, [ia](GradTape& tp, std::size_t self) {
    axpy(tp.grad_slot(ia), tp.out_grad(self));
  });
}

namespace {

// Elementwise op whose derivative is expressed through (input, output).
template <class Fwd, class Deriv>
Var pointwise(Var a, Fwd fwd, Deriv deriv) {
  GradTape& t = tape_of(a);
  Tensor2D y = a.value();
  for (double& v : y.data()) v = fwd(v);
  const Var in[] = {a};
  const std::size_t ia = a.id();
  return t.record(std::move(y), in, [ia, deriv](GradTape& tp, std::size_t self) {
    const auto g = tp.out_grad(self).data();
    const auto x = tp.value(ia).data();
    const auto y = tp.value(self).data();
    auto ga = tp.grad_slot(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var tanh(Var a) {
  return pointwise(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return pointwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return pointwise(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return pointwise(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var softmax_rows(Var x, std::vector<unsigned char> col_mask) {
  GradTape& t = tape_of(x);
  Tensor2D y;
  kernels::softmax_rows_serial(x.value(), col_mask, y);
  const Var in[] = {x};
  const std::size_t ix = x.id();
  return t.record(std::move(y), in, [ix](GradTape& tp, std::size_t self) {
    // dx_j = y_j (g_j - sum_k g_k y_k); masked columns have y_j = 0.
    const Tensor2D& g = tp.out_grad(self);
    const Tensor2D& y = tp.value(self);
    Tensor2D& gx = tp.grad_slot(ix);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var gather_rows(Var table, std::vector<std::size_t> indices) {
  GradTape& t = tape_of(table);
  const Tensor2D& tv = table.value();
  Tensor2D y(indices.size(), tv.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                       tv.shape_str());
    }
    std::copy_n(tv.row(indices[r]).begin(), tv.cols(), y.row(r).begin());
  }
  const Var in[] = {table};
  const std::size_t it = table.id();
  return t.record(std::move(y), in,
                  [it, idx = std::move(indices)](GradTape& tp, std::size_t self) {
                    const Tensor2D& g = tp.out_grad(self);
                    Tensor2D& gt = tp.grad_slot(it);
                    for (std::size_t r = 0; r < idx.size(); ++r) {
                      auto dst = gt.row(idx[r]);
                      auto src = g.row(r);
                      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                    }
                  });
}

Var gather_cols(Var x, std::vector<std::size_t> indices) {
  GradTape& t = tape_of(x);
  const Tensor2D& xv = x.value();
  Tensor2D y(xv.rows(), indices.size());
  for (std::size_t c = 0; c < indices.size(); ++c) {
    if (indices[c] >= xv.cols()) {
      throw ShapeError("gather_cols: index " + std::to_string(indices[c]) + " out of range for " +
                       xv.shape_str());
    }
    for (std::size_t r = 0; r < xv.rows(); ++r) y(r, c) = xv(r, indices[c]);
  }
  const Var in[] = {x};
  const std::size_t ix = x.id();
  return t.record(std::move(y), in, [ix, idx = std::move(indices)](GradTape& tp, std::size_t self) {
    const Tensor2D& g = tp.out_grad(self);
    Tensor2D& gx = tp.grad_slot(ix);
    for (std::size_t c = 0; c < idx.size(); ++c)
      for (std::size_t r = 0; r < g.rows(); ++r) gx(r, idx[c]) += g(r, c);
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  GradTape& t = tape_of(x);
  const Tensor2D& xv = x.value();
  if (begin + count > xv.rows()) throw ShapeError("slice_rows: range exceeds " + xv.shape_str());
  Tensor2D y(count, xv.cols());
  std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * xv.cols()), count * xv.cols(),
              y.data().begin());
  const Var in[] = {x};
  const std::size_t ix = x.id();
  return t.record(std::move(y), in, [ix, begin](GradTape& tp, std::size_t self) {
    const Tensor2D& g = tp.out_grad(self);
    Tensor2D& gx = tp.grad_slot(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(begin + r, c) += g(r, c);
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  GradTape& t = tape_of(x);
  const Tensor2D& xv = x.value();
  if (begin + count > xv.cols()) throw ShapeError("slice_cols: range exceeds " + xv.shape_str());
  Tensor2D y(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) y(r, c) = xv(r, begin + c);
  const Var in[] = {x};
  const std::size_t ix = x.id();
  return t.record(std::move(y), in, [ix, begin](GradTape& tp, std::size_t self) {
    const Tensor2D& g = tp.out_grad(self);
    Tensor2D& gx = tp.grad_slot(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, begin + c) += g(r, c);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  GradTape& t = tape_of(parts.front());
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor2D y(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2D& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) y(r, off + c) = pv(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += pv.cols();
  }
  return t.record(std::move(y), parts, [ids, offsets](GradTape& tp, std::size_t self) {
    const Tensor2D& g = tp.out_grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor2D& gp = tp.grad_slot(ids[k]);
      for (std::size_t r = 0; r < gp.rows(); ++r)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, offsets[k] + c);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  GradTape& t = tape_of(x);
  const Tensor2D& xv = x.value();
  const std::size_t n = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw ShapeError("layer_norm: scale/offset must be 1x" + std::to_string(n));
  }
  Tensor2D xhat(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  Tensor2D y(xv.rows(), n);
  const Tensor2D& gv = gamma.value();
  const Tensor2D& bv = beta.value();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xv(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
      y(r, c) = xhat(r, c) * gv(0, c) + bv(0, c);
    }
  }
  const Var in[] = {x, gamma, beta};
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record(std::move(y), in,
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      GradTape& tp, std::size_t self) {
                    const Tensor2D& g = tp.out_grad(self);
                    const Tensor2D& gv = tp.value(ig);
                    const std::size_t n = g.cols();
                    const double dn = static_cast<double>(n);
                    if (tp.requires_grad(ig) || tp.requires_grad(ib)) {
                      Tensor2D& gg = tp.grad_slot(ig);
                      Tensor2D& gb = tp.grad_slot(ib);
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < n; ++c) {
                          gg(0, c) += g(r, c) * xhat(r, c);
                          gb(0, c) += g(r, c);
                        }
                    }
                    if (!tp.requires_grad(ix)) return;
                    Tensor2D& gx = tp.grad_slot(ix);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double sum_d = 0.0, sum_dx = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        const double d = g(r, c) * gv(0, c);
                        sum_d += d;
                        sum_dx += d * xhat(r, c);
                      }
                      for (std::size_t c = 0; c < n; ++c) {
                        const double d = g(r, c) * gv(0, c);
                        gx(r, c) += inv_std[r] / dn * (dn * d - sum_d - xhat(r, c) * sum_dx);
                      }
                    }
                  });
}

Var l2_norm(Var x) {
  GradTape& t = tape_of(x);
  double ss = 0.0;
  for (double v : x.value().data()) ss += v * v;
  const double norm = std::sqrt(ss);
  const Var in[] = {x};
  const std::size_t ix = x.id();
  return t.record(Tensor2D::scalar(norm), in, [ix, norm](GradTape& tp, std::size_t self) {
    if (norm == 0.0) return;  // subgradient 0 at the origin
    const double g = tp.out_grad(self)(0, 0) / norm;
    axpy(tp.grad_slot(ix), tp.value(ix), g);
  });
}

Var sum(Var x) {
  GradTape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const Var in[] = {x};
  const std::size_t ix = x.id();
  return t.record(Tensor2D::scalar(s), in, [ix](GradTape& tp, std::size_t self) {
    const double g = tp.out_grad(self)(0, 0);
    for (double& v : tp.grad_slot(ix).data()) v += g;
  });
}

Var element(Var x, std::size_t r, std::size_t c) {
  GradTape& t = tape_of(x);
  const Tensor2D& xv = x.value();
  if (r >= xv.rows() || c >= xv.cols()) throw ShapeError("element: index outside " + xv.shape_str());
  const Var in[] = {x};
  const std::size_t ix = x.id();
  return t.record(Tensor2D::scalar(xv(r, c)), in, [ix, r, c](GradTape& tp, std::size_t self) {
    tp.grad_slot(ix)(r, c) += tp.out_grad(self)(0, 0);
  });
}

Var softmax_cross_entropy(Var logits, const Tensor2D& target) {
  GradTape& t = tape_of(logits);
  const Tensor2D& z = logits.value();
  if (z.rows() != 1) throw ShapeError("softmax_cross_entropy: logits must be one row");
  require_same_shape("softmax_cross_entropy", z, target);
  double mx = z(0, 0);
  for (double v : z.data()) mx = std::max(mx, v);
  double se = 0.0;
  for (double v : z.data()) se += std::exp(v - mx);
  const double lse = mx + std::log(se);
  double loss = 0.0;
  Tensor2D probs(1, z.cols());
  for (std::size_t c = 0; c < z.cols(); ++c) {
    loss -= target(0, c) * (z(0, c) - lse);
    probs(0, c) = std::exp(z(0, c) - lse);
  }
  const Var in[] = {logits};
  const std::size_t iz = logits.id();
  return t.record(Tensor2D::scalar(loss), in,
                  [iz, target, probs = std::move(probs)](GradTape& tp, std::size_t self) {
                    // d/dz = (sum target) * p - target
                    const double g = tp.out_grad(self)(0, 0);
                    double mass = 0.0;
                    for (double v : target.data()) mass += v;
                    Tensor2D& gz = tp.grad_slot(iz);
                    for (std::size_t c = 0; c < gz.cols(); ++c)
                      gz(0, c) += g * (mass * probs(0, c) - target(0, c));
                  });
}

}  // namespace cme
