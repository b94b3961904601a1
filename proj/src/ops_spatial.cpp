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
using MapR = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using CMapR = Eigen::Map<const RowMatrix<Scalar>>;

struct ConvGeometry {
  Index h, w, c;         // input
  Index kh, kw, c_out;   // kernel
  Index stride, pad;
  Index ho, wo;          // output

  Index taps() const { return kh * kw; }
  Index patch_len() const { return kh * kw * c; }
  Index positions() const { return ho * wo; }
};

template <typename Scalar>
ConvGeometry conv_geometry(const char* op, const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                           const Tensor<Scalar>& bias, Index stride, Index padding) {
  const std::string name(op);
  require(x.rank() == 3, name + ": input must be [H,W,C], got " + shape_string(x.shape()));
  require(weight.rank() == 4, name + ": weight must be [kh,kw,Cin,Cout], got " + shape_string(weight.shape()));
  require(stride >= 1, name + ": stride must be positive");
  require(padding >= 0, name + ": padding must be non-negative");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), weight.dim(0), weight.dim(1), weight.dim(3), stride, padding, 0, 0};
  require(weight.dim(2) == g.c, name + ": channel axis mismatch, input has " + std::to_string(g.c) +
                                    " channels but weight expects " + std::to_string(weight.dim(2)));
  require(bias.size() == g.c_out, name + ": bias length " + std::to_string(bias.size()) +
                                      " does not match output channel axis " + std::to_string(g.c_out));
  require(g.kh <= g.h + 2 * padding, name + ": kernel height exceeds padded input height");
  require(g.kw <= g.w + 2 * padding, name + ": kernel width exceeds padded input width");
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  return g;
}

template <typename Scalar>
RowMatrix<Scalar> im2col(const Scalar* x, const ConvGeometry& g) {
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(g.positions(), g.patch_len());
  for (Index oy = 0; oy < g.ho; ++oy) {
    for (Index ox = 0; ox < g.wo; ++ox) {
      Scalar* row = cols.data() + (oy * g.wo + ox) * g.patch_len();
      for (Index i = 0; i < g.kh; ++i) {
        const Index iy = oy * g.stride - g.pad + i;
        if (iy < 0 || iy >= g.h) continue;
        for (Index j = 0; j < g.kw; ++j) {
          const Index ix = ox * g.stride - g.pad + j;
          if (ix < 0 || ix >= g.w) continue;
          const Scalar* src = x + (iy * g.w + ix) * g.c;
          std::copy(src, src + g.c, row + (i * g.kw + j) * g.c);
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& dcols, const ConvGeometry& g, Scalar* dx) {
  for (Index oy = 0; oy < g.ho; ++oy) {
    for (Index ox = 0; ox < g.wo; ++ox) {
      const Scalar* row = dcols.data() + (oy * g.wo + ox) * g.patch_len();
      for (Index i = 0; i < g.kh; ++i) {
        const Index iy = oy * g.stride - g.pad + i;
        if (iy < 0 || iy >= g.h) continue;
        for (Index j = 0; j < g.kw; ++j) {
          const Index ix = ox * g.stride - g.pad + j;
          if (ix < 0 || ix >= g.w) continue;
          Scalar* dst = dx + (iy * g.w + ix) * g.c;
          const Scalar* src = row + (i * g.kw + j) * g.c;
          for (Index c = 0; c < g.c; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

// Bilinear corner weights and their derivatives for a fractional sample point.
template <typename Scalar>
struct Bilinear {
  Index y0, x0;
  Scalar ly, lx;
  Scalar weight(int corner) const {
    const Scalar wy = (corner & 2) ? ly : Scalar(1) - ly;
    const Scalar wx = (corner & 1) ? lx : Scalar(1) - lx;
    return wy * wx;
  }
  Scalar dweight_dy(int corner) const {
    const Scalar wx = (corner & 1) ? lx : Scalar(1) - lx;
    return (corner & 2) ? wx : -wx;
  }
  Scalar dweight_dx(int corner) const {
    const Scalar wy = (corner & 2) ? ly : Scalar(1) - ly;
    return (corner & 1) ? wy : -wy;
  }
  Index cy(int corner) const { return y0 + ((corner & 2) ? 1 : 0); }
  Index cx(int corner) const { return x0 + ((corner & 1) ? 1 : 0); }
};

template <typename Scalar>
Bilinear<Scalar> bilinear_at(Scalar py, Scalar px) {
  const Scalar fy = std::floor(py);
  const Scalar fx = std::floor(px);
  return {static_cast<Index>(fy), static_cast<Index>(fx), py - fy, px - fx};
}

}  // namespace

// ---- convolution ---------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias, Index stride,
                      Index padding) {
  const ConvGeometry g = conv_geometry("conv2d", x, weight, bias, stride, padding);
  const CMapR<Scalar> wmat(weight.data(), g.patch_len(), g.c_out);
  Tensor<Scalar> out({g.ho, g.wo, g.c_out});
  MapR<Scalar> y(out.mutable_values().data(), g.positions(), g.c_out);

  RowMatrix<Scalar> cols;
  if (is_pointwise(g)) {
    y.noalias() = CMapR<Scalar>(x.data(), g.positions(), g.c) * wmat;
  } else {
    cols = im2col(x.data(), g);
    y.noalias() = cols * wmat;
  }
  y.rowwise() += bias.values().matrix().transpose();

  record_op("conv2d", out, {&x, &weight, &bias},
            [xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node(), g,
             cols = std::move(cols)](Tape<Scalar>& t) {
              const MapR<Scalar> go(t.grad(on).data(), g.positions(), g.c_out);
              const CMapR<Scalar> wmat(wn->value.data(), g.patch_len(), g.c_out);
              const bool pointwise = is_pointwise(g);
              if (wn->requires_grad) {
                MapR<Scalar> gw(t.grad(wn).data(), g.patch_len(), g.c_out);
                if (pointwise)
                  gw.noalias() += CMapR<Scalar>(xn->value.data(), g.positions(), g.c).transpose() * go;
                else
                  gw.noalias() += cols.transpose() * go;
              }
              if (bn->requires_grad) t.grad(bn).matrix().transpose() += go.colwise().sum();
              if (xn->requires_grad) {
                if (pointwise) {
                  MapR<Scalar>(t.grad(xn).data(), g.positions(), g.c).noalias() += go * wmat.transpose();
                } else {
                  RowMatrix<Scalar> dcols = go * wmat.transpose();
                  col2im_add(dcols, g, t.grad(xn).data());
                }
              }
            });
  return out;
}

template <typename Scalar>
Tensor<Scalar> deformable_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& offsets,
                                 const Tensor<Scalar>& weight, const Tensor<Scalar>& bias, Index stride,
                                 Index padding) {
  const ConvGeometry g = conv_geometry("deformable_conv2d", x, weight, bias, stride, padding);
  require(offsets.rank() == 3 && offsets.dim(0) == g.ho && offsets.dim(1) == g.wo &&
              offsets.dim(2) == 2 * g.taps(),
          "deformable_conv2d: offsets must be [" + std::to_string(g.ho) + "," + std::to_string(g.wo) + "," +
              std::to_string(2 * g.taps()) + "], got " + shape_string(offsets.shape()));

  const Scalar* xv = x.data();
  const Scalar* ov = offsets.data();
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(g.positions(), g.patch_len());
  for (Index oy = 0; oy < g.ho; ++oy) {
    for (Index ox = 0; ox < g.wo; ++ox) {
      const Index r = oy * g.wo + ox;
      for (Index i = 0; i < g.kh; ++i) {
        for (Index j = 0; j < g.kw; ++j) {
          const Index tap = i * g.kw + j;
          const Scalar py = static_cast<Scalar>(oy * g.stride - g.pad + i) + ov[r * 2 * g.taps() + 2 * tap];
          const Scalar px = static_cast<Scalar>(ox * g.stride - g.pad + j) + ov[r * 2 * g.taps() + 2 * tap + 1];
          const Bilinear<Scalar> b = bilinear_at(py, px);
          Scalar* dst = cols.data() + r * g.patch_len() + tap * g.c;
          for (int corner = 0; corner < 4; ++corner) {
            const Index cy = b.cy(corner), cx = b.cx(corner);
            if (cy < 0 || cy >= g.h || cx < 0 || cx >= g.w) continue;
            const Scalar wgt = b.weight(corner);
            const Scalar* src = xv + (cy * g.w + cx) * g.c;
            for (Index c = 0; c < g.c; ++c) dst[c] += wgt * src[c];
          }
        }
      }
    }
  }

  const CMapR<Scalar> wmat(weight.data(), g.patch_len(), g.c_out);
  Tensor<Scalar> out({g.ho, g.wo, g.c_out});
  MapR<Scalar> y(out.mutable_values().data(), g.positions(), g.c_out);
  y.noalias() = cols * wmat;
  y.rowwise() += bias.values().matrix().transpose();

  record_op("deformable_conv2d", out, {&x, &offsets, &weight, &bias},
            [xn = x.node(), offn = offsets.node(), wn = weight.node(), bn = bias.node(), on = out.node(), g,
             cols = std::move(cols)](Tape<Scalar>& t) {
              const MapR<Scalar> go(t.grad(on).data(), g.positions(), g.c_out);
              const CMapR<Scalar> wmat(wn->value.data(), g.patch_len(), g.c_out);
              if (wn->requires_grad)
                MapR<Scalar>(t.grad(wn).data(), g.patch_len(), g.c_out).noalias() += cols.transpose() * go;
              if (bn->requires_grad) t.grad(bn).matrix().transpose() += go.colwise().sum();
              if (!xn->requires_grad && !offn->requires_grad) return;

              const RowMatrix<Scalar> dcols = go * wmat.transpose();
              const Scalar* xv = xn->value.data();
              const Scalar* ov = offn->value.data();
              Scalar* gx = xn->requires_grad ? t.grad(xn).data() : nullptr;
              Scalar* goff = offn->requires_grad ? t.grad(offn).data() : nullptr;
              for (Index oy = 0; oy < g.ho; ++oy) {
                for (Index ox = 0; ox < g.wo; ++ox) {
                  const Index r = oy * g.wo + ox;
                  for (Index i = 0; i < g.kh; ++i) {
                    for (Index j = 0; j < g.kw; ++j) {
                      const Index tap = i * g.kw + j;
                      const Index oidx = r * 2 * g.taps() + 2 * tap;
                      const Scalar py = static_cast<Scalar>(oy * g.stride - g.pad + i) + ov[oidx];
                      const Scalar px = static_cast<Scalar>(ox * g.stride - g.pad + j) + ov[oidx + 1];
                      const Bilinear<Scalar> b = bilinear_at(py, px);
                      const Scalar* gcol = dcols.data() + r * g.patch_len() + tap * g.c;
                      Scalar dy = 0, dx = 0;
                      for (int corner = 0; corner < 4; ++corner) {
                        const Index cy = b.cy(corner), cx = b.cx(corner);
                        if (cy < 0 || cy >= g.h || cx < 0 || cx >= g.w) continue;
                        const Index base = (cy * g.w + cx) * g.c;
                        if (gx) {
                          const Scalar wgt = b.weight(corner);
                          for (Index c = 0; c < g.c; ++c) gx[base + c] += wgt * gcol[c];
                        }
                        if (goff) {
                          Scalar dot = 0;
                          for (Index c = 0; c < g.c; ++c) dot += gcol[c] * xv[base + c];
                          dy += b.dweight_dy(corner) * dot;
                          dx += b.dweight_dx(corner) * dot;
                        }
                      }
                      if (goff) {
                        goff[oidx] += dy;
                        goff[oidx + 1] += dx;
                      }
                    }
                  }
                }
              }
            });
  return out;
}

// ---- pooling ----------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& x, Index kernel, Index stride) {
  require(x.rank() == 3, "max_pool2d: input must be [H,W,C], got " + shape_string(x.shape()));
  require(kernel >= 1 && stride >= 1, "max_pool2d: kernel and stride must be positive");
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(kernel <= h && kernel <= w, "max_pool2d: kernel larger than input " + shape_string(x.shape()));
  const Index ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  Tensor<Scalar> out({ho, wo, c});
  std::vector<Index> argmax(static_cast<std::size_t>(ho * wo * c));
  const Scalar* xv = x.data();
  Scalar* yv = out.mutable_values().data();
  for (Index oy = 0; oy < ho; ++oy) {
    for (Index ox = 0; ox < wo; ++ox) {
      for (Index ch = 0; ch < c; ++ch) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index best_idx = -1;
        for (Index i = 0; i < kernel; ++i) {
          for (Index j = 0; j < kernel; ++j) {
            const Index idx = ((oy * stride + i) * w + (ox * stride + j)) * c + ch;
            if (xv[idx] > best || best_idx < 0) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        const Index o = (oy * wo + ox) * c + ch;
        yv[o] = best;
        argmax[static_cast<std::size_t>(o)] = best_idx;
      }
    }
  }
  record_op("max_pool2d", out, {&x}, [xn = x.node(), on = out.node(), argmax = std::move(argmax)](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    auto& gx = t.grad(xn);
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += go[static_cast<Index>(o)];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> patch_average_pool(const Tensor<Scalar>& x, Index k) {
  require(x.rank() == 3, "patch_average_pool: input must be [H,W,C], got " + shape_string(x.shape()));
  require(k >= 1, "patch_average_pool: patch size must be positive");
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(h % k == 0 && w % k == 0, "patch_average_pool: extents " + shape_string(x.shape()) +
                                        " not divisible by patch size " + std::to_string(k));
  const Index ph = h / k, pw = w / k;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(k * k);
  Tensor<Scalar> out({ph, pw, c});
  const Scalar* xv = x.data();
  Scalar* yv = out.mutable_values().data();
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx)
      for (Index ch = 0; ch < c; ++ch) yv[((y / k) * pw + xx / k) * c + ch] += xv[(y * w + xx) * c + ch];
  out.mutable_values() *= inv;
  record_op("patch_average_pool", out, {&x}, [xn = x.node(), on = out.node(), h, w, c, k, pw, inv](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    auto& gx = t.grad(xn);
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx)
        for (Index ch = 0; ch < c; ++ch) gx[(y * w + xx) * c + ch] += inv * go[((y / k) * pw + xx / k) * c + ch];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_average_pool(const Tensor<Scalar>& x) {
  require(x.rank() >= 1, "global_average_pool: empty shape");
  const Index c = x.dim(-1);
  const Index n = x.size() / c;
  Tensor<Scalar> out({c});
  out.mutable_values().matrix().transpose() = CMapR<Scalar>(x.data(), n, c).colwise().mean();
  record_op("global_average_pool", out, {&x}, [xn = x.node(), on = out.node(), n, c](Tape<Scalar>& t) {
    MapR<Scalar>(t.grad(xn).data(), n, c).rowwise() += t.grad(on).matrix().transpose() / static_cast<Scalar>(n);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                             Scalar eps) {
  require(x.rank() == 3, "instance_norm: input must be [H,W,C], got " + shape_string(x.shape()));
  const Index c = x.dim(2);
  const Index n = x.dim(0) * x.dim(1);
  require(gamma.size() == c && beta.size() == c, "instance_norm: scale/shift length must equal channel count");
  const CMapR<Scalar> xm(x.data(), n, c);
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mu = xm.colwise().mean();
  RowMatrix<Scalar> xhat = xm.rowwise() - mu;
  Eigen::Array<Scalar, 1, Eigen::Dynamic> inv_std =
      ((xhat.array().square().colwise().sum() / static_cast<Scalar>(n)) + eps).rsqrt();
  xhat.array().rowwise() *= inv_std;
  Tensor<Scalar> out(x.shape());
  MapR<Scalar> y(out.mutable_values().data(), n, c);
  y.array() = (xhat.array().rowwise() * gamma.values().transpose()).rowwise() + beta.values().transpose();
  record_op("instance_norm", out, {&x, &gamma, &beta},
            [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(), xhat = std::move(xhat),
             inv_std = std::move(inv_std), n, c](Tape<Scalar>& t) {
              const MapR<Scalar> go(t.grad(on).data(), n, c);
              if (gn->requires_grad) t.grad(gn).transpose() += (go.array() * xhat.array()).colwise().sum();
              if (bn->requires_grad) t.grad(bn).transpose() += go.array().colwise().sum();
              if (xn->requires_grad) {
                const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gh =
                    go.array().rowwise() * gn->value.transpose();
                const Eigen::Array<Scalar, 1, Eigen::Dynamic> m1 = gh.colwise().mean();
                const Eigen::Array<Scalar, 1, Eigen::Dynamic> m2 = (gh * xhat.array()).colwise().mean();
                MapR<Scalar> gx(t.grad(xn).data(), n, c);
                gx.array() += ((gh.rowwise() - m1) - xhat.array().rowwise() * m2).rowwise() * inv_std;
              }
            });
  return out;
}

template <typename Scalar>
Tensor<Scalar> channel_stats(const Tensor<Scalar>& x) {
  require(x.rank() == 3, "channel_stats: input must be [H,W,C], got " + shape_string(x.shape()));
  const Index n = x.dim(0) * x.dim(1), c = x.dim(2);
  const CMapR<Scalar> xm(x.data(), n, c);
  Tensor<Scalar> out({x.dim(0), x.dim(1), 2});
  std::vector<Index> argmax(static_cast<std::size_t>(n));
  Scalar* yv = out.mutable_values().data();
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index ch = 1; ch < c; ++ch)
      if (xm(i, ch) > xm(i, best)) best = ch;
    argmax[static_cast<std::size_t>(i)] = best;
    yv[2 * i] = xm.row(i).mean();
    yv[2 * i + 1] = xm(i, best);
  }
  record_op("channel_stats", out, {&x}, [xn = x.node(), on = out.node(), n, c, argmax = std::move(argmax)](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    auto& gx = t.grad(xn);
    for (Index i = 0; i < n; ++i) {
      gx.segment(i * c, c) += go[2 * i] / static_cast<Scalar>(c);
      gx[i * c + argmax[static_cast<std::size_t>(i)]] += go[2 * i + 1];
    }
  });
  return out;
}

// ---- patch tokens ---------------------------------------------------------------

namespace {

// Calls fn(image_offset, token_offset, run_length) for every contiguous run
// shared between an [H,W,C] image and its [p*p, k*k*C] token matrix.
template <typename Fn>
void for_each_patch_run(Index p, Index k, Index c, Fn&& fn) {
  const Index w = p * k;
  const Index token_len = k * k * c;
  for (Index gy = 0; gy < p; ++gy)
    for (Index gx = 0; gx < p; ++gx)
      for (Index dy = 0; dy < k; ++dy)
        fn(((gy * k + dy) * w + gx * k) * c, (gy * p + gx) * token_len + dy * k * c, k * c);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> patch_tokens(const Tensor<Scalar>& x, Index k) {
  require(x.rank() == 3, "patch_tokens: input must be [H,W,C], got " + shape_string(x.shape()));
  require(x.dim(0) == x.dim(1), "patch_tokens: feature map must be square, got " + shape_string(x.shape()));
  require(k >= 1 && x.dim(0) % k == 0, "patch_tokens: extent " + std::to_string(x.dim(0)) +
                                           " not divisible by patch size " + std::to_string(k));
  const Index p = x.dim(0) / k, c = x.dim(2);
  Tensor<Scalar> out({p * p, k * k * c});
  const Scalar* xv = x.data();
  Scalar* yv = out.mutable_values().data();
  for_each_patch_run(p, k, c, [&](Index io, Index to, Index len) { std::copy(xv + io, xv + io + len, yv + to); });
  record_op("patch_tokens", out, {&x}, [xn = x.node(), on = out.node(), p, k, c](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    auto& gx = t.grad(xn);
    for_each_patch_run(p, k, c, [&](Index io, Index to, Index len) { gx.segment(io, len) += go.segment(to, len); });
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> tokens_to_image(const Tensor<Scalar>& tokens, Index p, Index k, Index channels) {
  require(tokens.rank() == 2 && tokens.dim(0) == p * p && tokens.dim(1) == k * k * channels,
          "tokens_to_image: expected [" + std::to_string(p * p) + "," + std::to_string(k * k * channels) +
              "] tokens, got " + shape_string(tokens.shape()));
  Tensor<Scalar> out({p * k, p * k, channels});
  const Scalar* tv = tokens.data();
  Scalar* yv = out.mutable_values().data();
  for_each_patch_run(p, k, channels,
                     [&](Index io, Index to, Index len) { std::copy(tv + to, tv + to + len, yv + io); });
  record_op("tokens_to_image", out, {&tokens}, [tn = tokens.node(), on = out.node(), p, k, channels](Tape<Scalar>& t) {
    const auto& go = t.grad(on);
    auto& gt = t.grad(tn);
    for_each_patch_run(p, k, channels,
                       [&](Index io, Index to, Index len) { gt.segment(to, len) += go.segment(io, len); });
  });
  return out;
}

#define EXPNET_INSTANTIATE(S)                                                                            \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index);        \
  template Tensor<S> deformable_conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,            \
                                       const Tensor<S>&, Index, Index);                                 \
  template Tensor<S> max_pool2d(const Tensor<S>&, Index, Index);                                        \
  template Tensor<S> patch_average_pool(const Tensor<S>&, Index);                                       \
  template Tensor<S> global_average_pool(const Tensor<S>&);                                             \
  template Tensor<S> instance_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);            \
  template Tensor<S> channel_stats(const Tensor<S>&);                                                   \
  template Tensor<S> patch_tokens(const Tensor<S>&, Index);                                             \
  template Tensor<S> tokens_to_image(const Tensor<S>&, Index, Index, Index);

EXPNET_INSTANTIATE(float)
EXPNET_INSTANTIATE(double)

#undef EXPNET_INSTANTIATE

}  // namespace expnet
