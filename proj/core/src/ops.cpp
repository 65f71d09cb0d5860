#include "mstl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mstl/errors.hpp"

namespace mstl {

namespace {

struct ImageDims {
  std::size_t n, h, w, c;
  bool batched;
};

ImageDims image_dims(const Shape& s, const char* what) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw DimensionError(std::string(what) + ": expected H x W x C or N x H x W x C, got " +
                       to_string(s));
}

struct ConvGeometry {
  ImageDims in;
  std::size_t k, cout, stride, pad, oh, ow;
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                           std::size_t padding) {
  ImageDims d = image_dims(input, "conv2d");
  if (kernel.size() != 4 || kernel[0] != kernel[1]) {
    throw DimensionError("conv2d: kernel must be k x k x C_in x C_out, got " + to_string(kernel));
  }
  const std::size_t k = kernel[0];
  if (k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd");
  if (kernel[2] != d.c) {
    throw DimensionError("conv2d: input has " + std::to_string(d.c) + " channels, kernel expects " +
                         std::to_string(kernel[2]));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (d.h + 2 * padding < k || d.w + 2 * padding < k) {
    throw DimensionError("conv2d: input " + to_string(input) + " smaller than kernel");
  }
  const std::size_t oh = (d.h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (d.w + 2 * padding - k) / stride + 1;
  return {d, k, kernel[3], stride, padding, oh, ow};
}

Shape conv_out_shape(const ConvGeometry& g) {
  if (g.in.batched) return {g.in.n, g.oh, g.ow, g.cout};
  return {g.oh, g.ow, g.cout};
}

// Visits every (output pixel, kernel tap, input pixel) triple with in-range
// input coordinates.
template <typename Fn>
void for_each_conv_tap(const ConvGeometry& g, Fn&& fn) {
  const auto& d = g.in;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const std::size_t out_off = ((n * g.oh + oy) * g.ow + ox) * g.cout;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const std::size_t in_off =
                ((n * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)) * d.c;
            const std::size_t w_off = (ky * g.k + kx) * d.c * g.cout;
            fn(out_off, in_off, w_off);
          }
        }
      }
    }
  }
}

struct MatDims {
  std::size_t batch, rows, cols;
};

MatDims mat_dims(const Shape& s, const char* what) {
  if (s.size() == 2) return {1, s[0], s[1]};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw DimensionError(std::string(what) + ": expected a matrix or batch of matrices, got " +
                       to_string(s));
}

// C (m x n) += op(A) * op(B), where op transposes when the flag is set.
// A is stored m x k (or k x m when transposed), B is k x n (or n x k).
void gemm_acc(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
              const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      }
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void check_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor kernels
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  Tensor out(conv_out_shape(g), 0.0);
  const double* x = input.raw();
  const double* w = kernel.raw();
  double* y = out.raw();
  const std::size_t c_in = g.in.c, c_out = g.cout;
  for_each_conv_tap(g, [&](std::size_t oo, std::size_t io, std::size_t wo) {
    double* yr = y + oo;
    for (std::size_t c = 0; c < c_in; ++c) {
      const double a = x[io + c];
      const double* wr = w + wo + c * c_out;
      for (std::size_t co = 0; co < c_out; ++co) yr[co] += a * wr[co];
    }
  });
  return out;
}

Tensor softmax_columns(const Tensor& m) {
  const MatDims d = mat_dims(m.shape(), "softmax_columns");
  Tensor out(m.shape(), 0.0);
  const double* x = m.raw();
  double* y = out.raw();
  for (std::size_t b = 0; b < d.batch; ++b) {
    const std::size_t base = b * d.rows * d.cols;
    for (std::size_t j = 0; j < d.cols; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < d.rows; ++i) mx = std::max(mx, x[base + i * d.cols + j]);
      double total = 0.0;
      for (std::size_t i = 0; i < d.rows; ++i) {
        const double e = std::exp(x[base + i * d.cols + j] - mx);
        y[base + i * d.cols + j] = e;
        total += e;
      }
      for (std::size_t i = 0; i < d.rows; ++i) y[base + i * d.cols + j] /= total;
    }
  }
  return out;
}

double cross_entropy(const Tensor& logits, std::size_t true_class) {
  if (logits.rank() != 1) throw DimensionError("cross_entropy: logits must be a vector");
  if (true_class >= logits.size()) {
    throw IndexError("cross_entropy: class " + std::to_string(true_class) + " out of range for " +
                     std::to_string(logits.size()) + " logits");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits.data()) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : logits.data()) total += std::exp(v - mx);
  return std::max(0.0, mx + std::log(total) - logits[true_class]);
}

Tensor global_avg_pool(const Tensor& input) {
  const ImageDims d = image_dims(input.shape(), "global_avg_pool");
  Tensor out(d.batched ? Shape{d.n, d.c} : Shape{d.c}, 0.0);
  const std::size_t hw = d.h * d.w;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const double* px = input.raw() + (n * hw + p) * d.c;
      for (std::size_t c = 0; c < d.c; ++c) out[n * d.c + c] += px[c];
    }
  }
  for (double& v : out.data()) v /= static_cast<double>(hw);
  return out;
}

Tensor unfold_mode3(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("unfold_mode3: expected H x W x d, got " + to_string(x.shape()));
  const std::size_t hw = x.dim(0) * x.dim(1), d = x.dim(2);
  Tensor m({d, hw}, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < d; ++c) m[c * hw + p] = x[p * d + c];
  }
  return m;
}

Tensor fold_mode3(const Tensor& m, std::size_t height, std::size_t width) {
  if (m.rank() != 2 || m.dim(1) != height * width) {
    throw DimensionError("fold_mode3: matrix " + to_string(m.shape()) + " does not fold to " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t hw = height * width, d = m.dim(0);
  Tensor x({height, width, d}, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < d; ++c) x[p * d + c] = m[c * hw + p];
  }
  return x;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatDims da = mat_dims(a.shape(), "matmul");
  const MatDims db = mat_dims(b.shape(), "matmul");
  if (a.rank() != b.rank() || da.batch != db.batch || da.cols != db.rows) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  Shape s = a.rank() == 2 ? Shape{da.rows, db.cols} : Shape{da.batch, da.rows, db.cols};
  Tensor out(s, 0.0);
  for (std::size_t bi = 0; bi < da.batch; ++bi) {
    gemm_acc(false, false, da.rows, db.cols, da.cols, a.raw() + bi * da.rows * da.cols,
             b.raw() + bi * db.rows * db.cols, out.raw() + bi * da.rows * db.cols);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  check_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.tape().record(std::move(out), {a.id(), b.id()}, [](const GradContext& ctx) {
    accumulate(ctx.input_grads[0], ctx.out_grad);
    accumulate(ctx.input_grads[1], ctx.out_grad);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.tape().record(std::move(out), {a.id(), b.id()}, [](const GradContext& ctx) {
    accumulate(ctx.input_grads[0], ctx.out_grad);
    if (Tensor* gb = ctx.input_grads[1]) {
      auto g = ctx.out_grad.data();
      auto d = gb->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.tape().record(std::move(out), {a.id(), b.id()}, [](const GradContext& ctx) {
    auto g = ctx.out_grad.data();
    if (Tensor* ga = ctx.input_grads[0]) {
      auto bv = ctx.inputs[1]->data();
      auto d = ga->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (Tensor* gb = ctx.input_grads[1]) {
      auto av = ctx.inputs[0]->data();
      auto d = gb->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), {a.id()}, [factor](const GradContext& ctx) {
    auto g = ctx.out_grad.data();
    auto d = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
  });
}

Var mul_const(Var a, const Tensor& c) {
  require_same_shape(a.value(), c, "mul_const");
  Tensor out = a.value();
  auto o = out.data();
  auto cv = c.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= cv[i];
  return a.tape().record(std::move(out), {a.id()}, [c](const GradContext& ctx) {
    auto g = ctx.out_grad.data();
    auto cv = c.data();
    auto d = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * cv[i];
  });
}

Var add_bias(Var x, Var bias) {
  check_same_tape(x, bias);
  const std::size_t c = bias.value().size();
  if (bias.value().rank() != 1 || x.shape().back() != c) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                         to_string(x.shape()));
  }
  Tensor out = x.value();
  auto o = out.data();
  auto bv = bias.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i % c];
  return x.tape().record(std::move(out), {x.id(), bias.id()}, [c](const GradContext& ctx) {
    accumulate(ctx.input_grads[0], ctx.out_grad);
    if (Tensor* gb = ctx.input_grads[1]) {
      auto g = ctx.out_grad.data();
      auto d = gb->data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i];
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x.id()}, [](const GradContext& ctx) {
    auto g = ctx.out_grad.data();
    auto y = ctx.out_value.data();
    auto d = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (y[i] > 0.0) d[i] += g[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x.id()}, [](const GradContext& ctx) {
    accumulate(ctx.input_grads[0], ctx.out_grad);
  });
}

Var transpose(Var x) {
  const MatDims d = mat_dims(x.shape(), "transpose");
  Shape s = x.value().rank() == 2 ? Shape{d.cols, d.rows} : Shape{d.batch, d.cols, d.rows};
  Tensor out(s, 0.0);
  const double* src = x.value().raw();
  for (std::size_t b = 0; b < d.batch; ++b) {
    const std::size_t base = b * d.rows * d.cols;
    for (std::size_t i = 0; i < d.rows; ++i) {
      for (std::size_t j = 0; j < d.cols; ++j) out[base + j * d.rows + i] = src[base + i * d.cols + j];
    }
  }
  return x.tape().record(std::move(out), {x.id()}, [d](const GradContext& ctx) {
    const double* g = ctx.out_grad.raw();
    double* dst = ctx.input_grads[0]->raw();
    for (std::size_t b = 0; b < d.batch; ++b) {
      const std::size_t base = b * d.rows * d.cols;
      for (std::size_t i = 0; i < d.rows; ++i) {
        for (std::size_t j = 0; j < d.cols; ++j) dst[base + i * d.cols + j] += g[base + j * d.rows + i];
      }
    }
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tensor out = matmul(a.value(), b.value());
  const MatDims da = mat_dims(a.shape(), "matmul");
  const MatDims db = mat_dims(b.shape(), "matmul");
  return a.tape().record(std::move(out), {a.id(), b.id()}, [da, db](const GradContext& ctx) {
    const std::size_t m = da.rows, k = da.cols, n = db.cols;
    for (std::size_t bi = 0; bi < da.batch; ++bi) {
      const double* g = ctx.out_grad.raw() + bi * m * n;
      if (Tensor* ga = ctx.input_grads[0]) {
        // dA = G * B^T
        gemm_acc(false, true, m, k, n, g, ctx.inputs[1]->raw() + bi * k * n, ga->raw() + bi * m * k);
      }
      if (Tensor* gb = ctx.input_grads[1]) {
        // dB = A^T * G
        gemm_acc(true, false, k, n, m, ctx.inputs[0]->raw() + bi * m * k, g, gb->raw() + bi * k * n);
      }
    }
  });
}

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  check_same_tape(input, kernel);
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  Tensor out = conv2d(input.value(), kernel.value(), stride, padding);
  return input.tape().record(std::move(out), {input.id(), kernel.id()}, [g](const GradContext& ctx) {
    const double* x = ctx.inputs[0]->raw();
    const double* w = ctx.inputs[1]->raw();
    const double* gy = ctx.out_grad.raw();
    double* gx = ctx.input_grads[0] ? ctx.input_grads[0]->raw() : nullptr;
    double* gw = ctx.input_grads[1] ? ctx.input_grads[1]->raw() : nullptr;
    const std::size_t c_in = g.in.c, c_out = g.cout;
    for_each_conv_tap(g, [&](std::size_t oo, std::size_t io, std::size_t wo) {
      const double* gr = gy + oo;
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* wr = w + wo + c * c_out;
        if (gx) {
          double acc = 0.0;
          for (std::size_t co = 0; co < c_out; ++co) acc += gr[co] * wr[co];
          gx[io + c] += acc;
        }
        if (gw) {
          const double a = x[io + c];
          double* gwr = gw + wo + c * c_out;
          for (std::size_t co = 0; co < c_out; ++co) gwr[co] += a * gr[co];
        }
      }
    });
  });
}

Var global_avg_pool(Var input) {
  const ImageDims d = image_dims(input.shape(), "global_avg_pool");
  Tensor out = global_avg_pool(input.value());
  return input.tape().record(std::move(out), {input.id()}, [d](const GradContext& ctx) {
    const std::size_t hw = d.h * d.w;
    const double inv = 1.0 / static_cast<double>(hw);
    double* gx = ctx.input_grads[0]->raw();
    const double* g = ctx.out_grad.raw();
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t p = 0; p < hw; ++p) {
        double* px = gx + (n * hw + p) * d.c;
        for (std::size_t c = 0; c < d.c; ++c) px[c] += g[n * d.c + c] * inv;
      }
    }
  });
}

Var softmax_columns(Var m) {
  const MatDims d = mat_dims(m.shape(), "softmax_columns");
  Tensor out = softmax_columns(m.value());
  return m.tape().record(std::move(out), {m.id()}, [d](const GradContext& ctx) {
    const double* y = ctx.out_value.raw();
    const double* g = ctx.out_grad.raw();
    double* gx = ctx.input_grads[0]->raw();
    for (std::size_t b = 0; b < d.batch; ++b) {
      const std::size_t base = b * d.rows * d.cols;
      for (std::size_t j = 0; j < d.cols; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d.rows; ++i) dot += g[base + i * d.cols + j] * y[base + i * d.cols + j];
        for (std::size_t i = 0; i < d.rows; ++i) {
          const std::size_t idx = base + i * d.cols + j;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState state, bool training) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  const std::size_t c = x.shape().back();
  if (gamma.value().size() != c || beta.value().size() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw DimensionError("batch_norm: parameter extents do not match " + std::to_string(c) +
                         " channels");
  }
  const std::size_t m = x.value().size() / c;
  const double* xv = x.value().raw();
  Tensor mean(Shape{c}, 0.0), inv_std(Shape{c}, 0.0);
  if (training) {
    Tensor var(Shape{c}, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += xv[i * c + ch];
    }
    for (double& v : mean.data()) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double dlt = xv[i * c + ch] - mean[ch];
        var[ch] += dlt * dlt;
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double biased = var[ch] / static_cast<double>(m);
      inv_std[ch] = 1.0 / std::sqrt(biased + state.eps);
      const double unbiased = m > 1 ? var[ch] / static_cast<double>(m - 1) : biased;
      state.running_mean[ch] = state.momentum * state.running_mean[ch] + (1.0 - state.momentum) * mean[ch];
      state.running_var[ch] = state.momentum * state.running_var[ch] + (1.0 - state.momentum) * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  Tensor xhat(x.shape(), 0.0);
  Tensor out(x.shape(), 0.0);
  const double* gm = gamma.value().raw();
  const double* bt = beta.value().raw();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double h = (xv[i * c + ch] - mean[ch]) * inv_std[ch];
      xhat[i * c + ch] = h;
      out[i * c + ch] = gm[ch] * h + bt[ch];
    }
  }
  return x.tape().record(
      std::move(out), {x.id(), gamma.id(), beta.id()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), m, c, training](const GradContext& ctx) {
        const double* g = ctx.out_grad.raw();
        const double* gm = ctx.inputs[1]->raw();
        std::vector<double> sum_g(c, 0.0), sum_gh(c, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            sum_g[ch] += g[i * c + ch];
            sum_gh[ch] += g[i * c + ch] * xhat[i * c + ch];
          }
        }
        if (Tensor* gg = ctx.input_grads[1]) {
          for (std::size_t ch = 0; ch < c; ++ch) (*gg)[ch] += sum_gh[ch];
        }
        if (Tensor* gb = ctx.input_grads[2]) {
          for (std::size_t ch = 0; ch < c; ++ch) (*gb)[ch] += sum_g[ch];
        }
        if (Tensor* gx = ctx.input_grads[0]) {
          double* dx = gx->raw();
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t idx = i * c + ch;
              if (training) {
                dx[idx] += gm[ch] * inv_std[ch] *
                           (g[idx] - inv_m * sum_g[ch] - xhat[idx] * inv_m * sum_gh[ch]);
              } else {
                dx[idx] += gm[ch] * inv_std[ch] * g[idx];
              }
            }
          }
        }
      });
}

Var linear(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

Var cross_entropy_rows(Var logits, std::span<const std::size_t> labels) {
  if (logits.value().rank() != 2) {
    throw DimensionError("cross_entropy_rows: logits must be N x C, got " + to_string(logits.shape()));
  }
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n) throw DimensionError("cross_entropy_rows: label count mismatch");
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  Tensor probs(logits.shape(), 0.0);
  Tensor out(Shape{n}, 0.0);
  const double* x = logits.value().raw();
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[i] >= c) {
      throw IndexError("cross_entropy: class " + std::to_string(lab[i]) + " out of range for " +
                       std::to_string(c) + " logits");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[i * c + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(x[i * c + j] - mx);
      probs[i * c + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= total;
    out[i] = std::max(0.0, mx + std::log(total) - x[i * c + lab[i]]);
  }
  return logits.tape().record(
      std::move(out), {logits.id()},
      [probs = std::move(probs), lab = std::move(lab), n, c](const GradContext& ctx) {
        double* gx = ctx.input_grads[0]->raw();
        for (std::size_t i = 0; i < n; ++i) {
          const double g = ctx.out_grad[i];
          for (std::size_t j = 0; j < c; ++j) {
            gx[i * c + j] += g * (probs[i * c + j] - (j == lab[i] ? 1.0 : 0.0));
          }
        }
      });
}

Var cross_entropy(Var logits, std::size_t true_class) {
  if (logits.value().rank() != 1) throw DimensionError("cross_entropy: logits must be a vector");
  const std::size_t label[1] = {true_class};
  return cross_entropy_rows(reshape(logits, {1, logits.value().size()}), label);
}

Var l2_normalize_rows(Var x) {
  if (x.value().rank() != 2) throw DimensionError("l2_normalize_rows: expected N x d");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  Tensor out = x.value();
  Tensor norms(Shape{n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += out[i * d + j] * out[i * d + j];
    const double nv = std::sqrt(s);
    if (!(nv > 0.0)) throw DegenerateEmbeddingError("cannot normalize a zero embedding");
    norms[i] = nv;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= nv;
  }
  return x.tape().record(std::move(out), {x.id()}, [norms = std::move(norms), n, d](const GradContext& ctx) {
    const double* y = ctx.out_value.raw();
    const double* g = ctx.out_grad.raw();
    double* gx = ctx.input_grads[0]->raw();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += y[i * d + j] * g[i * d + j];
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (g[i * d + j] - y[i * d + j] * dot) / norms[i];
    }
  });
}

Var sum_rows(Var x) {
  if (x.value().rank() != 2) throw DimensionError("sum_rows: expected N x d");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  Tensor out(Shape{n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i] += x.value()[i * d + j];
  }
  return x.tape().record(std::move(out), {x.id()}, [n, d](const GradContext& ctx) {
    double* gx = ctx.input_grads[0]->raw();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += ctx.out_grad[i];
    }
  });
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[0] != b.shape()[0]) {
    throw DimensionError("concat_cols: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t n = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  Tensor out(Shape{n, p + q}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) out[i * (p + q) + j] = a.value()[i * p + j];
    for (std::size_t j = 0; j < q; ++j) out[i * (p + q) + p + j] = b.value()[i * q + j];
  }
  return a.tape().record(std::move(out), {a.id(), b.id()}, [n, p, q](const GradContext& ctx) {
    const double* g = ctx.out_grad.raw();
    if (Tensor* ga = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) (*ga)[i * p + j] += g[i * (p + q) + j];
    }
    if (Tensor* gb = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) (*gb)[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x.id()}, [](const GradContext& ctx) {
    const double g = ctx.out_grad[0];
    for (double& v : ctx.input_grads[0]->data()) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var weighted_sum(Var x, const Tensor& weights) {
  if (weights.size() != x.value().size()) throw DimensionError("weighted_sum: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.value()[i];
  return x.tape().record(Tensor::scalar(s), {x.id()}, [weights](const GradContext& ctx) {
    const double g = ctx.out_grad[0];
    auto d = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * weights[i];
  });
}

}  // namespace mstl
