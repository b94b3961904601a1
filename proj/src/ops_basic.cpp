#include "expnet/ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace expnet {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

template <typename Scalar>
void require_rank(const Tensor<Scalar>& x, Index rank, const char* op) {
  require(x.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                shape_string(x.shape()));
}

template <typename Scalar>
using MapR = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using CMapR = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
CMapR<Scalar> as_matrix(const Array<Scalar>& a, Index rows, Index cols) {
  return CMapR<Scalar>(a.data(), rows, cols);
}

template <typename Scalar>
MapR<Scalar> as_matrix(Array<Scalar>& a, Index rows, Index cols) {
  return MapR<Scalar>(a.data(), rows, cols);
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape(), a.values() + b.values());
  record_op("add", out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node()](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    if (an->requires_grad) t.grad(an) += go;
    if (bn->requires_grad) t.grad(bn) += go;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape(), a.values() - b.values());
  record_op("sub", out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node()](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    if (an->requires_grad) t.grad(an) += go;
    if (bn->requires_grad) t.grad(bn) -= go;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape(), a.values() * b.values());
  record_op("mul", out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node()](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    if (an->requires_grad) t.grad(an) += go * bn->value;
    if (bn->requires_grad) t.grad(bn) += go * an->value;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, Scalar alpha, Scalar beta) {
  Tensor<Scalar> out(x.shape(), alpha * x.values() + beta);
  record_op("affine", out, {&x}, [xn = x.node(), on = out.node(), alpha](Tape<Scalar>& t) {
    t.grad(xn) += alpha * t.grad(on);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.values().sum());
  record_op("sum", out, {&x}, [xn = x.node(), on = out.node()](Tape<Scalar>& t) {
    t.grad(xn) += t.grad(on)[0];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.size());
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.values().sum() * inv);
  record_op("mean", out, {&x}, [xn = x.node(), on = out.node(), inv](Tape<Scalar>& t) {
    t.grad(xn) += t.grad(on)[0] * inv;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> add_n(const std::vector<Tensor<Scalar>>& xs) {
  require(!xs.empty(), "add_n: no inputs");
  Array<Scalar> acc = xs.front().values();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    require_same_shape(xs.front(), xs[i], "add_n");
    acc += xs[i].values();
  }
  Tensor<Scalar> out(xs.front().shape(), std::move(acc));
  bool any = false;
  std::vector<typename Tensor<Scalar>::NodePtr> nodes;
  for (const auto& x : xs) {
    any = any || x.requires_grad();
    nodes.push_back(x.node());
  }
  if (any && Tape<Scalar>::active()) {
    Tape<Scalar>::active()->record("add_n", out, [nodes, on = out.node()](Tape<Scalar>& t) {
      const auto& go = t.grad(on);
      for (const auto& n : nodes)
        if (n->requires_grad) t.grad(n) += go;
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  require(shape_size(shape) == x.size(),
          "reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  Tensor<Scalar> out(std::move(shape), x.values());
  record_op("reshape", out, {&x}, [xn = x.node(), on = out.node()](Tape<Scalar>& t) {
    t.grad(xn) += t.grad(on);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.values().max(Scalar(0)));
  record_op("relu", out, {&x}, [xn = x.node(), on = out.node()](Tape<Scalar>& t) {
    t.grad(xn) += (xn->value > Scalar(0)).select(t.grad(on), Scalar(0));
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  // Evaluated through exp(-|x|) so neither tail overflows.
  Array<Scalar> e = (-x.values().abs()).exp();
  Array<Scalar> y = (x.values() >= Scalar(0)).select(Scalar(1) / (Scalar(1) + e), e / (Scalar(1) + e));
  Tensor<Scalar> out(x.shape(), std::move(y));
  record_op("sigmoid", out, {&x}, [xn = x.node(), on = out.node()](Tape<Scalar>& t) {
    const auto& y = on->value;
    t.grad(xn) += t.grad(on) * y * (Scalar(1) - y);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sine(const Tensor<Scalar>& x, const Tensor<Scalar>& amplitude, const Tensor<Scalar>& frequency) {
  require(amplitude.size() == 1 && frequency.size() == 1, "sine: amplitude and frequency must be single values");
  const Scalar a = amplitude[0];
  const Scalar w = frequency[0];
  Tensor<Scalar> out(x.shape(), a * (w * x.values()).sin());
  record_op("sine", out, {&x, &amplitude, &frequency},
            [xn = x.node(), an = amplitude.node(), wn = frequency.node(), on = out.node()](Tape<Scalar>& t) {
              const Scalar a = an->value[0];
              const Scalar w = wn->value[0];
              const auto& go = t.grad(on);
              const Array<Scalar> wx = w * xn->value;
              const Array<Scalar> c = wx.cos();
              if (xn->requires_grad) t.grad(xn) += go * a * w * c;
              if (an->requires_grad) t.grad(an)[0] += (go * wx.sin()).sum();
              if (wn->requires_grad) t.grad(wn)[0] += (go * a * xn->value * c).sum();
            });
  return out;
}

// ---- matrices ---------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner extents differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<Scalar> out({m, n});
  as_matrix(out.mutable_values(), m, n).noalias() = as_matrix(a.values(), m, k) * as_matrix(b.values(), k, n);
  record_op("matmul", out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), m, k, n](Tape<Scalar>& t) {
    const auto go = as_matrix<Scalar>(t.grad(on), m, n);
    if (an->requires_grad) as_matrix(t.grad(an), m, k).noalias() += go * as_matrix(bn->value, k, n).transpose();
    if (bn->requires_grad) as_matrix(t.grad(bn), k, n).noalias() += as_matrix(an->value, m, k).transpose() * go;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const Index n = x.dim(0), in = x.dim(1), o = weight.dim(1);
  require(weight.dim(0) == in, "linear: input width " + std::to_string(in) + " does not match weight " +
                                   shape_string(weight.shape()));
  require(bias.size() == o, "linear: bias length does not match output width");
  Tensor<Scalar> out({n, o});
  auto y = as_matrix(out.mutable_values(), n, o);
  y.noalias() = as_matrix(x.values(), n, in) * as_matrix(weight.values(), in, o);
  y.rowwise() += bias.values().matrix().transpose();
  record_op("linear", out, {&x, &weight, &bias},
            [xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node(), n, in, o](Tape<Scalar>& t) {
              const auto go = as_matrix<Scalar>(t.grad(on), n, o);
              if (xn->requires_grad)
                as_matrix(t.grad(xn), n, in).noalias() += go * as_matrix(wn->value, in, o).transpose();
              if (wn->requires_grad)
                as_matrix(t.grad(wn), in, o).noalias() += as_matrix(xn->value, n, in).transpose() * go;
              if (bn->requires_grad) t.grad(bn).matrix().transpose() += go.colwise().sum();
            });
  return out;
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  require_rank(x, 2, "transpose");
  const Index m = x.dim(0), n = x.dim(1);
  Tensor<Scalar> out({n, m});
  as_matrix(out.mutable_values(), n, m) = as_matrix(x.values(), m, n).transpose();
  record_op("transpose", out, {&x}, [xn = x.node(), on = out.node(), m, n](Tape<Scalar>& t) {
    as_matrix(t.grad(xn), m, n) += as_matrix<Scalar>(t.grad(on), n, m).transpose();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  if (axis < 0) axis += x.rank();
  require(axis >= 0 && axis < x.rank(), "softmax: axis out of range for shape " + shape_string(x.shape()));
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= x.dim(i);
  for (Index i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const Index len = x.dim(axis);
  const Array<Scalar>& v = x.values();
  Array<Scalar> y(v.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < len; ++j) mx = std::max(mx, v[base + j * inner]);
      Scalar z = 0;
      for (Index j = 0; j < len; ++j) {
        const Scalar e = std::exp(v[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (Index j = 0; j < len; ++j) y[base + j * inner] /= z;
    }
  }
  Tensor<Scalar> out(x.shape(), std::move(y));
  record_op("softmax", out, {&x}, [xn = x.node(), on = out.node(), outer, inner, len](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    const auto& y = on->value;
    auto& gx = t.grad(xn);
    for (Index o = 0; o < outer; ++o) {
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * len * inner + in;
        Scalar dot = 0;
        for (Index j = 0; j < len; ++j) dot += go[base + j * inner] * y[base + j * inner];
        for (Index j = 0; j < len; ++j) gx[base + j * inner] += y[base + j * inner] * (go[base + j * inner] - dot);
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps) {
  require_rank(x, 2, "layer_norm");
  const Index n = x.dim(0), d = x.dim(1);
  require(gamma.size() == d && beta.size() == d, "layer_norm: scale/shift length must equal row width");
  RowMatrix<Scalar> xhat(n, d);
  Array<Scalar> inv_std(n);
  const auto xm = as_matrix(x.values(), n, d);
  for (Index i = 0; i < n; ++i) {
    const Scalar mu = xm.row(i).mean();
    const Scalar var = (xm.row(i).array() - mu).square().mean();
    inv_std[i] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i).array() = (xm.row(i).array() - mu) * inv_std[i];
  }
  Tensor<Scalar> out({n, d});
  auto y = as_matrix(out.mutable_values(), n, d);
  for (Index i = 0; i < n; ++i)
    y.row(i).array() = xhat.row(i).array() * gamma.values().transpose() + beta.values().transpose();
  record_op("layer_norm", out, {&x, &gamma, &beta},
            [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(), xhat = std::move(xhat),
             inv_std = std::move(inv_std), n, d](Tape<Scalar>& t) {
              const auto go = as_matrix<Scalar>(t.grad(on), n, d);
              if (gn->requires_grad)
                t.grad(gn).transpose() += (go.array() * xhat.array()).colwise().sum();
              if (bn->requires_grad) t.grad(bn).matrix().transpose() += go.colwise().sum();
              if (xn->requires_grad) {
                auto gx = as_matrix(t.grad(xn), n, d);
                for (Index i = 0; i < n; ++i) {
                  const Eigen::Array<Scalar, 1, Eigen::Dynamic> gh = go.row(i).array() * gn->value.transpose();
                  const Scalar m1 = gh.mean();
                  const Scalar m2 = (gh * xhat.row(i).array()).mean();
                  gx.row(i).array() += inv_std[i] * (gh - m1 - xhat.row(i).array() * m2);
                }
              }
            });
  return out;
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, Index label) {
  const Index k = logits.size();
  if (label < 0 || label >= k) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) +
                            ")");
  }
  const Array<Scalar>& z = logits.values();
  const Scalar mx = z.maxCoeff();
  const Scalar lse = mx + std::log((z - mx).exp().sum());
  Tensor<Scalar> out = Tensor<Scalar>::scalar(lse - z[label]);
  record_op("cross_entropy", out, {&logits}, [zn = logits.node(), on = out.node(), label, lse](Tape<Scalar>& t) {
    const Scalar g = t.grad(on)[0];
    Array<Scalar> p = (zn->value - lse).exp();
    p[label] -= Scalar(1);
    t.grad(zn) += g * p;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count) {
  require_rank(x, 2, "slice_cols");
  const Index m = x.dim(0), n = x.dim(1);
  require(start >= 0 && count > 0 && start + count <= n, "slice_cols: column range out of bounds");
  Tensor<Scalar> out({m, count});
  as_matrix(out.mutable_values(), m, count) = as_matrix(x.values(), m, n).middleCols(start, count);
  record_op("slice_cols", out, {&x}, [xn = x.node(), on = out.node(), m, n, start, count](Tape<Scalar>& t) {
    as_matrix(t.grad(xn), m, n).middleCols(start, count) += as_matrix<Scalar>(t.grad(on), m, count);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& xs) {
  require(!xs.empty(), "concat_cols: no inputs");
  const Index m = xs.front().dim(0);
  Index n = 0;
  for (const auto& x : xs) {
    require_rank(x, 2, "concat_cols");
    require(x.dim(0) == m, "concat_cols: row counts differ");
    n += x.dim(1);
  }
  Tensor<Scalar> out({m, n});
  auto y = as_matrix(out.mutable_values(), m, n);
  std::vector<typename Tensor<Scalar>::NodePtr> nodes;
  std::vector<Index> starts;
  bool any = false;
  Index c = 0;
  for (const auto& x : xs) {
    y.middleCols(c, x.dim(1)) = as_matrix(x.values(), m, x.dim(1));
    nodes.push_back(x.node());
    starts.push_back(c);
    any = any || x.requires_grad();
    c += x.dim(1);
  }
  if (any && Tape<Scalar>::active()) {
    Tape<Scalar>::active()->record("concat_cols", out, [nodes, starts, on = out.node(), m, n](Tape<Scalar>& t) {
      const auto go = as_matrix<Scalar>(t.grad(on), m, n);
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]->requires_grad) continue;
        const Index w = nodes[i]->shape[1];
        as_matrix(t.grad(nodes[i]), m, w) += go.middleCols(starts[i], w);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, const std::vector<Index>& rows) {
  require_rank(x, 2, "gather_rows");
  const Index m = x.dim(0), d = x.dim(1);
  const Index r = static_cast<Index>(rows.size());
  require(r > 0, "gather_rows: empty row set");
  Tensor<Scalar> out({r, d});
  auto y = as_matrix(out.mutable_values(), r, d);
  const auto xm = as_matrix(x.values(), m, d);
  for (Index i = 0; i < r; ++i) {
    require(rows[i] >= 0 && rows[i] < m, "gather_rows: row index out of range");
    y.row(i) = xm.row(rows[i]);
  }
  record_op("gather_rows", out, {&x}, [xn = x.node(), on = out.node(), rows, m, d, r](Tape<Scalar>& t) {
    auto gx = as_matrix(t.grad(xn), m, d);
    const auto go = as_matrix<Scalar>(t.grad(on), r, d);
    for (Index i = 0; i < r; ++i) gx.row(rows[i]) += go.row(i);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> scatter_rows(const Tensor<Scalar>& x, const std::vector<Index>& rows, Index n_rows) {
  require_rank(x, 2, "scatter_rows");
  const Index r = x.dim(0), d = x.dim(1);
  require(static_cast<Index>(rows.size()) == r, "scatter_rows: index count does not match row count");
  Tensor<Scalar> out({n_rows, d});
  auto y = as_matrix(out.mutable_values(), n_rows, d);
  const auto xm = as_matrix(x.values(), r, d);
  for (Index i = 0; i < r; ++i) {
    require(rows[i] >= 0 && rows[i] < n_rows, "scatter_rows: row index out of range");
    y.row(rows[i]) += xm.row(i);
  }
  record_op("scatter_rows", out, {&x}, [xn = x.node(), on = out.node(), rows, n_rows, d, r](Tape<Scalar>& t) {
    auto gx = as_matrix(t.grad(xn), r, d);
    const auto go = as_matrix<Scalar>(t.grad(on), n_rows, d);
    for (Index i = 0; i < r; ++i) gx.row(i) += go.row(rows[i]);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale_rows(const Tensor<Scalar>& x, const Tensor<Scalar>& s) {
  require_rank(x, 2, "scale_rows");
  const Index n = x.dim(0), d = x.dim(1);
  require(s.size() == n, "scale_rows: need one scale per row");
  Tensor<Scalar> out({n, d});
  as_matrix(out.mutable_values(), n, d).array() = as_matrix(x.values(), n, d).array().colwise() * s.values();
  record_op("scale_rows", out, {&x, &s}, [xn = x.node(), sn = s.node(), on = out.node(), n, d](Tape<Scalar>& t) {
    const auto go = as_matrix<Scalar>(t.grad(on), n, d);
    if (xn->requires_grad) as_matrix(t.grad(xn), n, d).array() += go.array().colwise() * sn->value;
    if (sn->requires_grad)
      t.grad(sn) += (go.array() * as_matrix(xn->value, n, d).array()).rowwise().sum();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean_rows(const Tensor<Scalar>& x) {
  require_rank(x, 2, "mean_rows");
  const Index n = x.dim(0), d = x.dim(1);
  Tensor<Scalar> out({d});
  out.mutable_values().matrix().transpose() = as_matrix(x.values(), n, d).colwise().mean();
  record_op("mean_rows", out, {&x}, [xn = x.node(), on = out.node(), n, d](Tape<Scalar>& t) {
    as_matrix(t.grad(xn), n, d).rowwise() += t.grad(on).matrix().transpose() / static_cast<Scalar>(n);
  });
  return out;
}

#define EXPNET_INSTANTIATE(S)                                                                       \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> affine(const Tensor<S>&, S, S);                                               \
  template Tensor<S> sum(const Tensor<S>&);                                                        \
  template Tensor<S> mean(const Tensor<S>&);                                                       \
  template Tensor<S> add_n(const std::vector<Tensor<S>>&);                                         \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                             \
  template Tensor<S> relu(const Tensor<S>&);                                                       \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                    \
  template Tensor<S> sine(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                   \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                 \
  template Tensor<S> transpose(const Tensor<S>&);                                                  \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                             \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);          \
  template Tensor<S> cross_entropy(const Tensor<S>&, Index);                                       \
  template Tensor<S> slice_cols(const Tensor<S>&, Index, Index);                                   \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);                                   \
  template Tensor<S> gather_rows(const Tensor<S>&, const std::vector<Index>&);                     \
  template Tensor<S> scatter_rows(const Tensor<S>&, const std::vector<Index>&, Index);             \
  template Tensor<S> scale_rows(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> mean_rows(const Tensor<S>&);

EXPNET_INSTANTIATE(float)
EXPNET_INSTANTIATE(double)

#undef EXPNET_INSTANTIATE

}  // namespace expnet
