#include "darkforge/nn_blocks.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "darkforge/errors.hpp"

namespace darkforge::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Dims4 {
  std::size_t n, c, h, w;
};

Dims4 dims4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw DimensionError(std::string(op) + ": expected NCHW tensor, got " + shape_str(x.shape()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

struct ConvGeometry {
  std::size_t c_in, k, stride, pad, h, w, ho, wo;
  std::size_t rows() const { return c_in * k * k; }
  std::size_t cols() const { return ho * wo; }
  bool trivial() const { return k == 1 && stride == 1 && pad == 0; }
};

// Column buffers cover bands of output rows so their size stays bounded.
constexpr std::size_t kBandElems = std::size_t{1} << 22;

std::size_t band_rows(const ConvGeometry& g) {
  return std::clamp<std::size_t>(kBandElems / std::max<std::size_t>(1, g.rows() * g.wo), 1, g.ho);
}

// Unfolds output rows [oy0, oy1) into a rows() x ((oy1 - oy0) * wo) matrix.
void im2col(const double* x, const ConvGeometry& g, std::size_t oy0, std::size_t oy1, double* cols) {
  const std::size_t p = (oy1 - oy0) * g.wo;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    const double* plane = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((ci * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + (oy - oy0) * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, std::size_t oy0, std::size_t oy1, double* dx) {
  const std::size_t p = (oy1 - oy0) * g.wo;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    double* plane = dx + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((ci * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + (oy - oy0) * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class F, class D>
Tensor pointwise(const Tensor& x, F f, D dfdx) {
  Buffer out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, dfdx](detail::Node& o) {
    if (!x.requires_grad()) return;
    auto& g = x.node().ensure_grad();
    const auto& xv = x.node().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dfdx(xv[i], o.data[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  const auto [n, c_in, h, w] = dims4(x, "conv2d");
  if (p.weight.rank() != 4 || p.weight.dim(2) != p.weight.dim(3)) {
    throw DimensionError("conv2d: weight must be [C_out, C_in, k, k], got " + shape_str(p.weight.shape()));
  }
  const std::size_t c_out = p.weight.dim(0);
  const std::size_t k = p.weight.dim(2);
  if (p.weight.dim(1) != c_in) {
    throw DimensionError("conv2d: input has " + std::to_string(c_in) + " channels, weight expects " +
                         std::to_string(p.weight.dim(1)));
  }
  if (p.bias.numel() != c_out) throw DimensionError("conv2d: bias length mismatch");
  if (p.stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (h + 2 * p.padding < k || w + 2 * p.padding < k) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
  }
  const ConvGeometry g{c_in, k, p.stride, p.padding, h, w, (h + 2 * p.padding - k) / p.stride + 1,
                       (w + 2 * p.padding - k) / p.stride + 1};

  Buffer out(n * c_out * g.cols());
  const std::size_t band = band_rows(g);
  Buffer cols(g.trivial() ? 0 : g.rows() * band * g.wo);
  CMapR wmat(p.weight.data().data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(g.rows()));
  Eigen::Map<const Eigen::VectorXd> bias(p.bias.data().data(), static_cast<Eigen::Index>(c_out));
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = x.data().data() + s * c_in * h * w;
    MapR om(out.data() + s * c_out * g.cols(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(g.cols()));
    if (g.trivial()) {
      CMapR cm(xs, static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
      om.noalias() = wmat * cm;
    } else {
      for (std::size_t oy0 = 0; oy0 < g.ho; oy0 += band) {
        const std::size_t oy1 = std::min(g.ho, oy0 + band);
        const auto pc = static_cast<Eigen::Index>((oy1 - oy0) * g.wo);
        im2col(xs, g, oy0, oy1, cols.data());
        CMapR cm(cols.data(), static_cast<Eigen::Index>(g.rows()), pc);
        om.middleCols(static_cast<Eigen::Index>(oy0 * g.wo), pc).noalias() = wmat * cm;
      }
    }
    om.colwise() += bias;
  }

  Tensor weight = p.weight;
  Tensor bias_t = p.bias;
  return make_result({n, c_out, g.ho, g.wo}, std::move(out), {x, weight, bias_t},
                     [x, weight, bias_t, g, n, c_out](detail::Node& o) {
    const auto P = static_cast<Eigen::Index>(g.cols());
    const auto K = static_cast<Eigen::Index>(g.rows());
    const auto Co = static_cast<Eigen::Index>(c_out);
    const std::size_t band = band_rows(g);
    Buffer cols(g.trivial() ? 0 : g.rows() * band * g.wo);
    Buffer dcols(g.trivial() ? 0 : g.rows() * band * g.wo);
    CMapR wmat(weight.node().data.data(), Co, K);
    for (std::size_t s = 0; s < n; ++s) {
      CMapR dout(o.grad.data() + s * c_out * g.cols(), Co, P);
      const double* xs = x.node().data.data() + s * g.c_in * g.h * g.w;
      if (bias_t.requires_grad()) {
        Eigen::Map<Eigen::VectorXd> db(bias_t.node().ensure_grad().data(), Co);
        db += dout.rowwise().sum();
      }
      double* dxs = x.requires_grad() ? x.node().ensure_grad().data() + s * g.c_in * g.h * g.w : nullptr;
      if (g.trivial()) {
        if (weight.requires_grad()) {
          MapR dw(weight.node().ensure_grad().data(), Co, K);
          dw.noalias() += dout * CMapR(xs, K, P).transpose();
        }
        if (dxs) {
          MapR dx(dxs, K, P);
          dx.noalias() += wmat.transpose() * dout;
        }
        continue;
      }
      for (std::size_t oy0 = 0; oy0 < g.ho; oy0 += band) {
        const std::size_t oy1 = std::min(g.ho, oy0 + band);
        const auto pc = static_cast<Eigen::Index>((oy1 - oy0) * g.wo);
        const auto dband = dout.middleCols(static_cast<Eigen::Index>(oy0 * g.wo), pc);
        if (weight.requires_grad()) {
          im2col(xs, g, oy0, oy1, cols.data());
          MapR dw(weight.node().ensure_grad().data(), Co, K);
          dw.noalias() += dband * CMapR(cols.data(), K, pc).transpose();
        }
        if (dxs) {
          MapR dc(dcols.data(), K, pc);
          dc.noalias() = wmat.transpose() * dband;
          col2im_add(dcols.data(), g, oy0, oy1, dxs);
        }
      }
    }
  });
}

Tensor transposed_conv2(const Tensor& x, const Conv2dParams& p) {
  const auto [n, c_in, h, w] = dims4(x, "transposed_conv2");
  if (p.weight.rank() != 4 || p.weight.dim(2) != 2 || p.weight.dim(3) != 2) {
    throw DimensionError("transposed_conv2: weight must be [C_in, C_out, 2, 2], got " +
                         shape_str(p.weight.shape()));
  }
  if (p.weight.dim(0) != c_in) {
    throw DimensionError("transposed_conv2: input has " + std::to_string(c_in) +
                         " channels, weight expects " + std::to_string(p.weight.dim(0)));
  }
  const std::size_t c_out = p.weight.dim(1);
  if (p.bias.numel() != c_out) throw DimensionError("transposed_conv2: bias length mismatch");

  const std::size_t hw = h * w;
  const auto HW = static_cast<Eigen::Index>(hw);
  const auto Ci = static_cast<Eigen::Index>(c_in);
  const auto Co4 = static_cast<Eigen::Index>(c_out * 4);
  Buffer out(n * c_out * 4 * hw);
  MatR y(Co4, HW);
  CMapR wmat(p.weight.data().data(), Ci, Co4);
  const auto bias = p.bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    CMapR xm(x.data().data() + s * c_in * hw, Ci, HW);
    y.noalias() = wmat.transpose() * xm;
    double* os = out.data() + s * c_out * 4 * hw;
    for (std::size_t co = 0; co < c_out; ++co) {
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
          const double* src = y.data() + (co * 4 + a * 2 + b) * hw;
          for (std::size_t i = 0; i < h; ++i) {
            double* dst = os + co * 4 * hw + (2 * i + a) * (2 * w) + b;
            for (std::size_t j = 0; j < w; ++j) dst[2 * j] = src[i * w + j] + bias[co];
          }
        }
      }
    }
  }

  Tensor weight = p.weight;
  Tensor bias_t = p.bias;
  return make_result({n, c_out, 2 * h, 2 * w}, std::move(out), {x, weight, bias_t},
                     [x, weight, bias_t, n, c_in, c_out, h, w](detail::Node& o) {
    const std::size_t hw = h * w;
    const auto HW = static_cast<Eigen::Index>(hw);
    const auto Ci = static_cast<Eigen::Index>(c_in);
    const auto Co4 = static_cast<Eigen::Index>(c_out * 4);
    MatR dy(Co4, HW);
    CMapR wmat(weight.node().data.data(), Ci, Co4);
    for (std::size_t s = 0; s < n; ++s) {
      const double* gs = o.grad.data() + s * c_out * 4 * hw;
      for (std::size_t co = 0; co < c_out; ++co) {
        for (std::size_t a = 0; a < 2; ++a) {
          for (std::size_t b = 0; b < 2; ++b) {
            double* dst = dy.data() + (co * 4 + a * 2 + b) * hw;
            for (std::size_t i = 0; i < h; ++i) {
              const double* src = gs + co * 4 * hw + (2 * i + a) * (2 * w) + b;
              for (std::size_t j = 0; j < w; ++j) dst[i * w + j] = src[2 * j];
            }
          }
        }
      }
      if (x.requires_grad()) {
        MapR dx(x.node().ensure_grad().data() + s * c_in * hw, Ci, HW);
        dx.noalias() += wmat * dy;
      }
      if (weight.requires_grad()) {
        CMapR xm(x.node().data.data() + s * c_in * hw, Ci, HW);
        MapR dw(weight.node().ensure_grad().data(), Ci, Co4);
        dw.noalias() += xm * dy.transpose();
      }
      if (bias_t.requires_grad()) {
        auto& db = bias_t.node().ensure_grad();
        for (std::size_t co = 0; co < c_out; ++co) db[co] += dy.middleRows(static_cast<Eigen::Index>(co * 4), 4).sum();
      }
    }
  });
}

Tensor maxpool2(const Tensor& x) {
  const auto [n, c, h, w] = dims4(x, "maxpool2");
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2: spatial dims must be even, got " + shape_str(x.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2;
  Buffer out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const auto in = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const std::size_t cand[4] = {base + 2 * i * w + 2 * j, base + 2 * i * w + 2 * j + 1,
                                     base + (2 * i + 1) * w + 2 * j, base + (2 * i + 1) * w + 2 * j + 1};
        std::size_t best = cand[0];
        for (int t = 1; t < 4; ++t) {
          if (in[cand[t]] > in[best]) best = cand[t];
        }
        const std::size_t o = (plane * ho + i) * wo + j;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  return make_result({n, c, ho, wo}, std::move(out), {x}, [x, argmax = std::move(argmax)](detail::Node& o) {
    if (!x.requires_grad()) return;
    auto& g = x.node().ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return pointwise(x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
                   [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor relu(const Tensor& x) {
  return pointwise(x, [](double v) { return v > 0.0 ? v : 0.0; },
                   [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return pointwise(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor depth_to_space(const Tensor& x, std::size_t s) {
  const auto [n, cs, h, w] = dims4(x, "depth_to_space");
  if (s == 0 || cs % (s * s) != 0) {
    throw DimensionError("depth_to_space: channels " + std::to_string(cs) + " not divisible by " +
                         std::to_string(s * s));
  }
  const std::size_t c = cs / (s * s);
  const std::size_t oh = h * s, ow = w * s;
  // index map: out position -> in position
  std::vector<std::size_t> src(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const std::size_t in_c = ch * s * s + (y % s) * s + (xx % s);
          src[((b * c + ch) * oh + y) * ow + xx] = ((b * cs + in_c) * h + y / s) * w + xx / s;
        }
  Buffer out(src.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = in[src[i]];
  return make_result({n, c, oh, ow}, std::move(out), {x}, [x, src = std::move(src)](detail::Node& o) {
    if (!x.requires_grad()) return;
    auto& g = x.node().ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += o.grad[i];
  });
}

Tensor space_to_depth(const Tensor& x, std::size_t s) {
  const auto [n, c, h, w] = dims4(x, "space_to_depth");
  if (s == 0 || h % s != 0 || w % s != 0) {
    throw DimensionError("space_to_depth: spatial dims " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(s));
  }
  const std::size_t oh = h / s, ow = w / s, oc = c * s * s;
  std::vector<std::size_t> src(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < oc; ++ch) {
      const std::size_t in_c = ch / (s * s);
      const std::size_t dy = (ch % (s * s)) / s, dx = ch % s;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          src[((b * oc + ch) * oh + y) * ow + xx] = ((b * c + in_c) * h + y * s + dy) * w + xx * s + dx;
    }
  Buffer out(src.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = in[src[i]];
  return make_result({n, oc, oh, ow}, std::move(out), {x}, [x, src = std::move(src)](detail::Node& o) {
    if (!x.requires_grad()) return;
    auto& g = x.node().ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += o.grad[i];
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: nothing to concatenate");
  const auto d0 = dims4(parts[0], "concat_channels");
  std::size_t c_total = 0;
  for (const auto& t : parts) {
    const auto d = dims4(t, "concat_channels");
    if (d.n != d0.n || d.h != d0.h || d.w != d0.w) {
      throw DimensionError("concat_channels: " + shape_str(t.shape()) + " vs " + shape_str(parts[0].shape()));
    }
    c_total += d.c;
  }
  const std::size_t hw = d0.h * d0.w;
  Buffer out(d0.n * c_total * hw);
  for (std::size_t b = 0; b < d0.n; ++b) {
    double* dst = out.data() + b * c_total * hw;
    for (const auto& t : parts) {
      const std::size_t len = t.dim(1) * hw;
      const double* src = t.data().data() + b * len;
      dst = std::copy(src, src + len, dst);
    }
  }
  return make_result({d0.n, c_total, d0.h, d0.w}, std::move(out), parts,
                     [parts, c_total, hw, n = d0.n](detail::Node& o) {
    std::size_t offset = 0;
    for (const auto& t : parts) {
      const std::size_t len = t.dim(1) * hw;
      if (t.requires_grad()) {
        auto& g = t.node().ensure_grad();
        for (std::size_t b = 0; b < n; ++b) {
          const double* src = o.grad.data() + b * c_total * hw + offset;
          double* dst = g.data() + b * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
      offset += len;
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  const auto [n, c, h, w] = dims4(x, "global_avg_pool");
  const std::size_t hw = h * w;
  Buffer out(n * c);
  const auto in = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < hw; ++k) acc += in[i * hw + k];
    out[i] = acc / static_cast<double>(hw);
  }
  return make_result({n, c}, std::move(out), {x}, [x, hw](detail::Node& o) {
    if (!x.requires_grad()) return;
    auto& g = x.node().ensure_grad();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double share = o.grad[i] * inv;
      for (std::size_t k = 0; k < hw; ++k) g[i * hw + k] += share;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1) || bias.numel() != weight.dim(0)) {
    throw DimensionError("linear: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                         ", bias " + shape_str(bias.shape()));
  }
  const auto N = static_cast<Eigen::Index>(x.dim(0));
  const auto I = static_cast<Eigen::Index>(x.dim(1));
  const auto O = static_cast<Eigen::Index>(weight.dim(0));
  Buffer out(x.dim(0) * weight.dim(0));
  MapR om(out.data(), N, O);
  om.noalias() = CMapR(x.data().data(), N, I) * CMapR(weight.data().data(), O, I).transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), O);
  return make_result({x.dim(0), weight.dim(0)}, std::move(out), {x, weight, bias},
                     [x, weight, bias, N, I, O](detail::Node& o) {
    CMapR dout(o.grad.data(), N, O);
    if (x.requires_grad()) {
      MapR(x.node().ensure_grad().data(), N, I).noalias() += dout * CMapR(weight.node().data.data(), O, I);
    }
    if (weight.requires_grad()) {
      MapR(weight.node().ensure_grad().data(), O, I).noalias() +=
          dout.transpose() * CMapR(x.node().data.data(), N, I);
    }
    if (bias.requires_grad()) {
      Eigen::Map<Eigen::RowVectorXd>(bias.node().ensure_grad().data(), O) += dout.colwise().sum();
    }
  });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  const auto [n, c, h, w] = dims4(x, "scale_channels");
  if (s.rank() != 2 || s.dim(0) != n || s.dim(1) != c) {
    throw DimensionError("scale_channels: gates " + shape_str(s.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t hw = h * w;
  Buffer out(x.numel());
  const auto in = x.data();
  const auto gate = s.data();
  for (std::size_t i = 0; i < n * c; ++i)
    for (std::size_t k = 0; k < hw; ++k) out[i * hw + k] = gate[i] * in[i * hw + k];
  return make_result(x.shape(), std::move(out), {x, s}, [x, s, hw](detail::Node& o) {
    const auto& gate = s.node().data;
    const auto& in = x.node().data;
    if (x.requires_grad()) {
      auto& g = x.node().ensure_grad();
      for (std::size_t i = 0; i < gate.size(); ++i)
        for (std::size_t k = 0; k < hw; ++k) g[i * hw + k] += o.grad[i * hw + k] * gate[i];
    }
    if (s.requires_grad()) {
      auto& g = s.node().ensure_grad();
      for (std::size_t i = 0; i < gate.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < hw; ++k) acc += o.grad[i * hw + k] * in[i * hw + k];
        g[i] += acc;
      }
    }
  });
}

Tensor channel_attention(const Tensor& x, const CAParams& p) {
  const auto d = dims4(x, "channel_attention");
  if (p.w_reduce.rank() != 2 || p.w_reduce.dim(1) != d.c || p.w_expand.rank() != 2 ||
      p.w_expand.dim(0) != d.c || p.w_expand.dim(1) != p.w_reduce.dim(0)) {
    throw DimensionError("channel_attention: parameters do not match " + std::to_string(d.c) + " channels");
  }
  Tensor squeezed = global_avg_pool(x);
  Tensor hidden = relu(linear(squeezed, p.w_reduce, p.b_reduce));
  Tensor gates = sigmoid(linear(hidden, p.w_expand, p.b_expand));
  return scale_channels(x, gates);
}

Tensor upsample_bilinear2x(const Tensor& x) {
  const auto [n, c, h, w] = dims4(x, "upsample_bilinear2x");
  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t len) {
    std::vector<Tap> t(2 * len);
    for (std::size_t o = 0; o < 2 * len; ++o) {
      const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      const double fl = std::floor(src);
      const auto lo = static_cast<std::ptrdiff_t>(fl);
      const double frac = src - fl;
      const auto last = static_cast<std::ptrdiff_t>(len) - 1;
      t[o] = {static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(lo, 0, last)),
              static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(lo + 1, 0, last)), frac};
    }
    return t;
  };
  const auto ty = taps(h);
  const auto tx = taps(w);
  const std::size_t oh = 2 * h, ow = 2 * w;
  Buffer out(n * c * oh * ow);
  const auto in = x.data();
  for (std::size_t pl = 0; pl < n * c; ++pl) {
    const double* src = in.data() + pl * h * w;
    double* dst = out.data() + pl * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        const double top = (1 - b.w1) * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1];
        const double bot = (1 - b.w1) * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1];
        dst[y * ow + xx] = (1 - a.w1) * top + a.w1 * bot;
      }
  }
  return make_result({n, c, oh, ow}, std::move(out), {x}, [x, ty, tx, h, w, oh, ow](detail::Node& o) {
    if (!x.requires_grad()) return;
    auto& g = x.node().ensure_grad();
    const std::size_t planes = g.size() / (h * w);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      double* dst = g.data() + pl * h * w;
      const double* src = o.grad.data() + pl * oh * ow;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const auto& a = ty[y];
          const auto& b = tx[xx];
          const double v = src[y * ow + xx];
          dst[a.i0 * w + b.i0] += (1 - a.w1) * (1 - b.w1) * v;
          dst[a.i0 * w + b.i1] += (1 - a.w1) * b.w1 * v;
          dst[a.i1 * w + b.i0] += a.w1 * (1 - b.w1) * v;
          dst[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
        }
    }
  });
}

// ---------------------------------------------------------------------------

std::size_t ca_reduction(std::size_t channels) {
  for (std::size_t r = 16; r > 1; --r) {
    if (channels % r == 0 && channels / r >= 4) return r;
  }
  return 1;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

Conv2dParams make_conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                       std::size_t padding, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(c_in * k * k));
  return {uniform_tensor({c_out, c_in, k, k}, bound, rng), Tensor::zeros({c_out}, true), stride, padding};
}

Conv2dParams make_transposed_conv2(std::size_t c_in, std::size_t c_out, std::mt19937_64& rng) {
  // Each output pixel receives exactly c_in taps.
  const double bound = std::sqrt(6.0 / static_cast<double>(c_in));
  return {uniform_tensor({c_in, c_out, 2, 2}, bound, rng), Tensor::zeros({c_out}, true), 2, 0};
}

CAParams make_channel_attention(std::size_t channels, std::size_t reduction, std::mt19937_64& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw DimensionError("channel attention reduction " + std::to_string(reduction) + " does not divide " +
                         std::to_string(channels));
  }
  const std::size_t hidden = channels / reduction;
  CAParams p;
  p.w_reduce = uniform_tensor({hidden, channels}, std::sqrt(6.0 / static_cast<double>(channels)), rng);
  p.b_reduce = Tensor::zeros({hidden}, true);
  p.w_expand = uniform_tensor({channels, hidden}, std::sqrt(6.0 / static_cast<double>(hidden)), rng);
  p.b_expand = Tensor::zeros({channels}, true);
  return p;
}

std::size_t param_count(const Conv2dParams& p) { return p.weight.numel() + p.bias.numel(); }

std::size_t param_count(const CAParams& p) {
  return p.w_reduce.numel() + p.b_reduce.numel() + p.w_expand.numel() + p.b_expand.numel();
}

}  // namespace darkforge::nn
