#include "ftlab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "ftlab/error.hpp"

namespace ftlab::ops {
namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Builds a result node. The gradient rule is attached only when some
// parent participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(rule);
  }
  return Tensor(std::move(node));
}

bool is_scalar(const Tensor& t) { return t.numel() == 1 && t.rank() == 0; }

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

enum class Broadcast { Equal, ScalarLeft, ScalarRight };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  check_defined(a, op);
  check_defined(b, op);
  if (a.shape() == b.shape()) return Broadcast::Equal;
  if (is_scalar(a)) return Broadcast::ScalarLeft;
  if (is_scalar(b)) return Broadcast::ScalarRight;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

// Accumulates `g` (sized like the broadcast output) into parent p, reducing
// to a scalar when p was broadcast.
void accumulate_broadcast(Node& p, std::span<const double> g) {
  if (!p.requires_grad) return;
  auto& pg = p.ensure_grad();
  if (pg.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
  } else {
    double s = 0.0;
    for (double v : g) s += v;
    pg[0] += s;
  }
}

template <class F>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f) {
  auto kind = broadcast_kind(a, b, name);
  const auto& out_shape = kind == Broadcast::ScalarLeft ? b.shape() : a.shape();
  std::size_t n = shape_numel(out_shape);
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = kind == Broadcast::ScalarLeft ? da[0] : da[i];
    double y = kind == Broadcast::ScalarRight ? db[0] : db[i];
    out[i] = f(x, y);
  }
  return make_result(out_shape, std::move(out), {a.node(), b.node()}, nullptr);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto r = binary(a, b, "add", [](double x, double y) { return x + y; });
  if (r.requires_grad()) {
    r.node()->backward = [](Node& self) {
      accumulate_broadcast(*self.parents[0], self.grad);
      accumulate_broadcast(*self.parents[1], self.grad);
    };
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto r = binary(a, b, "sub", [](double x, double y) { return x - y; });
  if (r.requires_grad()) {
    r.node()->backward = [](Node& self) {
      accumulate_broadcast(*self.parents[0], self.grad);
      std::vector<double> neg(self.grad.size());
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
      accumulate_broadcast(*self.parents[1], neg);
    };
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto r = binary(a, b, "mul", [](double x, double y) { return x * y; });
  if (r.requires_grad()) {
    r.node()->backward = [](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const std::size_t n = self.grad.size();
      auto value = [n](const Node& p, std::size_t i) { return p.data.size() == n ? p.data[i] : p.data[0]; };
      std::vector<double> g(n);
      if (pa.requires_grad) {
        for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * value(pb, i);
        accumulate_broadcast(pa, g);
      }
      if (pb.requires_grad) {
        for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * value(pa, i);
        accumulate_broadcast(pb, g);
      }
    };
  }
  return r;
}

Tensor scale(const Tensor& x, double factor) {
  check_defined(x, "scale");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x.node()}, [factor](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  check_defined(x, "add_scalar");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  return make_result(x.shape(), std::move(out), {x.node()}, [](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

Tensor gelu(const Tensor& x) {
  check_defined(x, "gelu");
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = gelu_value(in[i]);
  return make_result(x.shape(), std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& pg = p.ensure_grad();
    for (std::size_t i = 0; i < pg.size(); ++i) {
      double v = p.data[i];
      double u = kGeluC * (v + kGeluA * v * v * v);
      double t = std::tanh(u);
      double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      pg[i] += self.grad[i] * d;
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool batched = sa.size() == 3 && sb.size() == 3;
  if (!batched && !(sa.size() == 2 && sb.size() == 2))
    throw DimensionError("matmul: expected rank-2 or rank-3 operands, got " + shape_str(sa) + " and " +
                         shape_str(sb));
  const std::size_t g = batched ? sa[0] : 1;
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t k2 = sb[sb.size() - 2], n = sb.back();
  if (k != k2 || (batched && sb[0] != g))
    throw DimensionError("matmul: shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
  std::vector<double> out(g * m * n);
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < g; ++i) {
    Map(out.data() + i * m * n, m, n).noalias() =
        MapC(da.data() + i * m * k, m, k) * MapC(db.data() + i * k * n, k, n);
  }
  Shape shape = batched ? Shape{g, m, n} : Shape{m, n};
  return make_result(std::move(shape), std::move(out), {a.node(), b.node()}, [g, m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < g; ++i) {
      MapC dout(self.grad.data() + i * m * n, m, n);
      if (pa.requires_grad) {
        Map(pa.ensure_grad().data() + i * m * k, m, k).noalias() +=
            dout * MapC(pb.data.data() + i * k * n, k, n).transpose();
      }
      if (pb.requires_grad) {
        Map(pb.ensure_grad().data() + i * k * n, k, n).noalias() +=
            MapC(pa.data.data() + i * m * k, m, k).transpose() * dout;
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  check_defined(x, "transpose");
  const auto& s = x.shape();
  if (s.size() != 2 && s.size() != 3) throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(s));
  const std::size_t g = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s.back();
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < g; ++i)
    Map(out.data() + i * r * c, c, r) = MapC(in.data() + i * r * c, r, c).transpose();
  Shape shape = s.size() == 3 ? Shape{g, c, r} : Shape{c, r};
  return make_result(std::move(shape), std::move(out), {x.node()}, [g, r, c](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g; ++i)
      Map(pg.data() + i * r * c, r, c) += MapC(self.grad.data() + i * r * c, c, r).transpose();
  });
}

namespace {

std::size_t rowwise_rows(const Tensor& x, const Tensor& v, const char* op) {
  check_defined(x, op);
  check_defined(v, op);
  const std::size_t width = v.numel();
  if (x.numel() % width != 0)
    throw DimensionError(std::string(op) + ": cannot tile " + shape_str(v.shape()) + " over " +
                         shape_str(x.shape()));
  // The tiled operand must share x's last dimension.
  if (v.rank() == 0 || x.rank() == 0 || v.shape().back() != x.shape().back())
    throw DimensionError(std::string(op) + ": last dimension of " + shape_str(x.shape()) + " does not match " +
                         shape_str(v.shape()));
  return x.numel() / width;
}

}  // namespace

Tensor add_rowwise(const Tensor& x, const Tensor& v) {
  const std::size_t rows = rowwise_rows(x, v, "add_rowwise");
  const std::size_t w = v.numel();
  auto dx = x.data();
  auto dv = v.data();
  std::vector<double> out(dx.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = dx[r * w + j] + dv[j];
  return make_result(x.shape(), std::move(out), {x.node(), v.node()}, [rows, w](Node& self) {
    Node& px = *self.parents[0];
    Node& pv = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pv.requires_grad) {
      auto& g = pv.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) g[j] += self.grad[r * w + j];
    }
  });
}

Tensor mul_rowwise(const Tensor& x, const Tensor& v) {
  const std::size_t rows = rowwise_rows(x, v, "mul_rowwise");
  const std::size_t w = v.numel();
  auto dx = x.data();
  auto dv = v.data();
  std::vector<double> out(dx.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = dx[r * w + j] * dv[j];
  return make_result(x.shape(), std::move(out), {x.node(), v.node()}, [rows, w](Node& self) {
    Node& px = *self.parents[0];
    Node& pv = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * w + j] * pv.data[j];
    }
    if (pv.requires_grad) {
      auto& g = pv.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) g[j] += self.grad[r * w + j] * px.data[r * w + j];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_rowwise(matmul(x, w), b); }

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_defined(x, "softmax");
  const auto& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * len * inner + q;
      double mx = in[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) z += (out[base + j * inner] = std::exp(in[base + j * inner] - mx));
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  return make_result(s, std::move(out), {x.node()}, [outer, inner, len](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t base = o * len * inner + q;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          pg[i] += y[i] * (self.grad[i] - dot);
        }
      }
  });
}

Tensor softmax(const Tensor& x) {
  check_defined(x, "softmax");
  if (x.rank() == 0) throw DimensionError("softmax of a scalar");
  return softmax(x, x.rank() - 1);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  check_defined(x, "layer_norm");
  if (x.rank() == 0) throw DimensionError("layer_norm of a scalar");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  const std::size_t rows = x.numel() / d;
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<double> out(in.size());
  // Per-row normalized values and inverse std, kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
                     [rows, d, xhat, inv_std](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const auto& g = self.grad;
                       if (pg.requires_grad) {
                         auto& gg = pg.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                       }
                       if (px.requires_grad) {
                         auto& gx = px.ensure_grad();
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             double dh = g[r * d + j] * pg.data[j];
                             s1 += dh;
                             s2 += dh * (*xhat)[r * d + j];
                           }
                           for (std::size_t j = 0; j < d; ++j) {
                             double dh = g[r * d + j] * pg.data[j];
                             gx[r * d + j] += (*inv_std)[r] * (dh - inv_d * s1 - (*xhat)[r * d + j] * inv_d * s2);
                           }
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_defined(logits, "cross_entropy");
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B x C], got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  auto in = logits.data();
  auto probs = std::make_shared<std::vector<double>>(in.size());
  std::vector<int> ys(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = in.data() + b * classes;
    double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += ((*probs)[b * classes + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] /= z;
    loss += -(row[ys[b]] - mx - std::log(z));
  }
  loss /= static_cast<double>(batch);
  return make_result({}, {loss}, {logits.node()}, [batch, classes, probs, ys](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    const double s = self.grad[0] / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < classes; ++c) {
        double t = static_cast<int>(c) == ys[b] ? 1.0 : 0.0;
        pg[b * classes + c] += s * ((*probs)[b * classes + c] - t);
      }
  });
}

Tensor kron(const Tensor& a, const Tensor& b) {
  check_defined(a, "kron");
  check_defined(b, "kron");
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("kron: expected matrices, got ranks " + std::to_string(a.rank()) + " and " +
                         std::to_string(b.rank()));
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(0), s = b.dim(1);
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(p * r * q * s);
  const std::size_t cols = q * s;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j)
      for (std::size_t u = 0; u < r; ++u)
        for (std::size_t v = 0; v < s; ++v) out[(i * r + u) * cols + j * s + v] = da[i * q + j] * db[u * s + v];
  return make_result({p * r, cols}, std::move(out), {a.node(), b.node()}, [p, q, r, s, cols](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
          double acc = 0.0;
          for (std::size_t u = 0; u < r; ++u)
            for (std::size_t v = 0; v < s; ++v) acc += g[(i * r + u) * cols + j * s + v] * pb.data[u * s + v];
          ga[i * q + j] += acc;
        }
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
          const double aij = pa.data[i * q + j];
          for (std::size_t u = 0; u < r; ++u)
            for (std::size_t v = 0; v < s; ++v) gb[u * s + v] += g[(i * r + u) * cols + j * s + v] * aij;
        }
    }
  });
}

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x.node()}, [](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (auto& g : pg) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  check_defined(x, "reshape");
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x.node()}, [](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i];
  });
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape) {
  check_defined(x, "gather");
  if (shape_numel(out_shape) != index.size())
    throw DimensionError("gather: " + std::to_string(index.size()) + " indices for shape " + shape_str(out_shape));
  auto in = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= in.size()) throw DimensionError("gather: index out of range for " + shape_str(x.shape()));
    out[i] = in[index[i]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return make_result(std::move(out_shape), std::move(out), {x.node()}, [idx](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i) pg[(*idx)[i]] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  for (const auto& p : parts) check_defined(p, "concat");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat of scalars");
  Shape out_shape = first;
  out_shape[0] = 0;
  std::vector<NodePtr> nodes;
  std::vector<double> out;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1))
      throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[0] += s[0];
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  return make_result(std::move(out_shape), std::move(out), std::move(nodes), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) {
        auto& pg = p->ensure_grad();
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[offset + i];
      }
      offset += p->data.size();
    }
  });
}

}  // namespace ftlab::ops
