#include "edge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "edge/error.hpp"

namespace edge {
namespace {

thread_local std::unordered_map<const TensorImpl*, int> g_weight_uses;

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current().recording()) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

double dot(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

void axpy(double alpha, const float* x, double* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvGeometry {
  int cin, h, w, cout, k, stride, pad, ho, wo;
};

// Pointwise convolution on contiguous planes: out[co] = sum_ci W[co,ci] x[ci].
void pointwise_forward(const ConvGeometry& g, const float* x, const float* weight, const float* bias,
                       float* out) {
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  std::vector<double> acc(plane * 4);
  int co = 0;
  for (; co + 4 <= g.cout; co += 4) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double* a0 = acc.data();
    double* a1 = a0 + plane;
    double* a2 = a1 + plane;
    double* a3 = a2 + plane;
    for (int ci = 0; ci < g.cin; ++ci) {
      const float* xr = x + ci * plane;
      const double w0 = weight[(co + 0) * g.cin + ci];
      const double w1 = weight[(co + 1) * g.cin + ci];
      const double w2 = weight[(co + 2) * g.cin + ci];
      const double w3 = weight[(co + 3) * g.cin + ci];
#pragma omp simd
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = xr[p];
        a0[p] += w0 * v;
        a1[p] += w1 * v;
        a2[p] += w2 * v;
        a3[p] += w3 * v;
      }
    }
    for (int r = 0; r < 4; ++r) {
      const double b = bias ? bias[co + r] : 0.0;
      float* o = out + (co + r) * plane;
      const double* a = acc.data() + r * plane;
      for (std::size_t p = 0; p < plane; ++p) o[p] = static_cast<float>(a[p] + b);
    }
  }
  for (; co < g.cout; ++co) {
    double* a = acc.data();
    std::fill(a, a + plane, 0.0);
    for (int ci = 0; ci < g.cin; ++ci) axpy(weight[co * g.cin + ci], x + ci * plane, a, plane);
    const double b = bias ? bias[co] : 0.0;
    float* o = out + co * plane;
    for (std::size_t p = 0; p < plane; ++p) o[p] = static_cast<float>(a[p] + b);
  }
}

// Valid output index range [lo, hi) along one axis for kernel tap t.
inline void tap_range(int t, int pad, int stride, int in_size, int out_size, int& lo, int& hi) {
  // Need 0 <= o*stride + t - pad < in_size.
  const int off = t - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const int last = in_size - 1 - off;
  hi = last < 0 ? 0 : std::min(out_size, last / stride + 1);
  if (hi < lo) hi = lo;
}

void direct_forward(const ConvGeometry& g, const float* x, const float* weight, const float* bias,
                    float* out) {
  const std::size_t oplane = static_cast<std::size_t>(g.ho) * g.wo;
  const std::size_t iplane = static_cast<std::size_t>(g.h) * g.w;
  std::vector<double> acc(oplane);
  for (int co = 0; co < g.cout; ++co) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int ci = 0; ci < g.cin; ++ci) {
      const float* xp = x + ci * iplane;
      for (int p = 0; p < g.k; ++p) {
        int ilo, ihi;
        tap_range(p, g.pad, g.stride, g.h, g.ho, ilo, ihi);
        for (int q = 0; q < g.k; ++q) {
          const double wv = weight[((co * g.cin + ci) * g.k + p) * g.k + q];
          int jlo, jhi;
          tap_range(q, g.pad, g.stride, g.w, g.wo, jlo, jhi);
          for (int i = ilo; i < ihi; ++i) {
            const float* xr = xp + static_cast<std::size_t>(i * g.stride + p - g.pad) * g.w;
            double* ar = acc.data() + static_cast<std::size_t>(i) * g.wo;
            if (g.stride == 1) {
              const float* xs = xr + (q - g.pad);
#pragma omp simd
              for (int j = jlo; j < jhi; ++j) ar[j] += wv * xs[j];
            } else {
              for (int j = jlo; j < jhi; ++j) ar[j] += wv * xr[j * g.stride + q - g.pad];
            }
          }
        }
      }
    }
    const double b = bias ? bias[co] : 0.0;
    float* o = out + co * oplane;
    for (std::size_t p = 0; p < oplane; ++p) o[p] = static_cast<float>(acc[p] + b);
  }
}

void conv_backward(const ConvGeometry& g, const Tensor& input, const Tensor& weight,
                   const Tensor& bias, const Tensor& out) {
  Tensor in = input;
  Tensor wt = weight;
  Tensor bs = bias;
  const float* gout = out.grad().data();
  const float* x = input.data().data();
  const float* w = weight.data().data();
  const std::size_t oplane = static_cast<std::size_t>(g.ho) * g.wo;
  const std::size_t iplane = static_cast<std::size_t>(g.h) * g.w;

  if (bs.defined() && bs.requires_grad()) {
    auto gb = bs.grad_buffer();
    for (int co = 0; co < g.cout; ++co) {
      double s = 0.0;
      const float* go = gout + co * oplane;
      for (std::size_t p = 0; p < oplane; ++p) s += go[p];
      gb[co] += static_cast<float>(s);
    }
  }

  const bool pointwise = g.k == 1 && g.pad == 0;
  // Gather strided input for the pointwise case so both gradients run on
  // contiguous planes.
  std::vector<float> gathered;
  const float* xc = x;
  if (pointwise && g.stride != 1) {
    gathered.resize(static_cast<std::size_t>(g.cin) * oplane);
    for (int ci = 0; ci < g.cin; ++ci)
      for (int i = 0; i < g.ho; ++i)
        for (int j = 0; j < g.wo; ++j)
          gathered[ci * oplane + i * g.wo + j] =
              x[ci * iplane + static_cast<std::size_t>(i * g.stride) * g.w + j * g.stride];
    xc = gathered.data();
  }

  if (wt.requires_grad()) {
    auto gw = wt.grad_buffer();
    if (pointwise) {
      for (int co = 0; co < g.cout; ++co)
        for (int ci = 0; ci < g.cin; ++ci)
          gw[co * g.cin + ci] += static_cast<float>(dot(gout + co * oplane, xc + ci * oplane, oplane));
    } else {
      for (int co = 0; co < g.cout; ++co) {
        const float* go = gout + co * oplane;
        for (int ci = 0; ci < g.cin; ++ci) {
          const float* xp = x + ci * iplane;
          for (int p = 0; p < g.k; ++p) {
            int ilo, ihi;
            tap_range(p, g.pad, g.stride, g.h, g.ho, ilo, ihi);
            for (int q = 0; q < g.k; ++q) {
              int jlo, jhi;
              tap_range(q, g.pad, g.stride, g.w, g.wo, jlo, jhi);
              double s = 0.0;
              for (int i = ilo; i < ihi; ++i) {
                const float* xr = xp + static_cast<std::size_t>(i * g.stride + p - g.pad) * g.w;
                const float* gr = go + static_cast<std::size_t>(i) * g.wo;
                if (g.stride == 1) {
                  const float* xs = xr + (q - g.pad);
#pragma omp simd reduction(+ : s)
                  for (int j = jlo; j < jhi; ++j) s += static_cast<double>(gr[j]) * xs[j];
                } else {
                  for (int j = jlo; j < jhi; ++j)
                    s += static_cast<double>(gr[j]) * xr[j * g.stride + q - g.pad];
                }
              }
              gw[((co * g.cin + ci) * g.k + p) * g.k + q] += static_cast<float>(s);
            }
          }
        }
      }
    }
  }

  if (in.requires_grad()) {
    auto gi = in.grad_buffer();
    if (pointwise) {
      std::vector<double> acc(oplane);
      for (int ci = 0; ci < g.cin; ++ci) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int co = 0; co < g.cout; ++co) axpy(w[co * g.cin + ci], gout + co * oplane, acc.data(), oplane);
        if (g.stride == 1) {
          float* gp = gi.data() + ci * iplane;
          for (std::size_t p = 0; p < oplane; ++p) gp[p] += static_cast<float>(acc[p]);
        } else {
          for (int i = 0; i < g.ho; ++i)
            for (int j = 0; j < g.wo; ++j)
              gi[ci * iplane + static_cast<std::size_t>(i * g.stride) * g.w + j * g.stride] +=
                  static_cast<float>(acc[i * g.wo + j]);
        }
      }
    } else {
      std::vector<double> acc(iplane);
      for (int ci = 0; ci < g.cin; ++ci) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int co = 0; co < g.cout; ++co) {
          const float* go = gout + co * oplane;
          for (int p = 0; p < g.k; ++p) {
            int ilo, ihi;
            tap_range(p, g.pad, g.stride, g.h, g.ho, ilo, ihi);
            for (int q = 0; q < g.k; ++q) {
              const double wv = w[((co * g.cin + ci) * g.k + p) * g.k + q];
              int jlo, jhi;
              tap_range(q, g.pad, g.stride, g.w, g.wo, jlo, jhi);
              for (int i = ilo; i < ihi; ++i) {
                double* ar = acc.data() + static_cast<std::size_t>(i * g.stride + p - g.pad) * g.w;
                const float* gr = go + static_cast<std::size_t>(i) * g.wo;
                if (g.stride == 1) {
                  double* as = ar + (q - g.pad);
#pragma omp simd
                  for (int j = jlo; j < jhi; ++j) as[j] += wv * gr[j];
                } else {
                  for (int j = jlo; j < jhi; ++j) ar[j * g.stride + q - g.pad] += wv * gr[j];
                }
              }
            }
          }
        }
        float* gp = gi.data() + ci * iplane;
        for (std::size_t p = 0; p < iplane; ++p) gp[p] += static_cast<float>(acc[p]);
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require_rank(input, 3, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  ConvGeometry g{};
  g.cin = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != g.k || g.k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(g.cout) + " output channels");
  }
  if (stride < 1 || padding < 0 || g.h < 1 || g.w < 1) {
    throw ShapeError("conv2d: invalid stride/padding/spatial size");
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d: kernel larger than padded input");

  ++g_weight_uses[weight.id()];

  Tensor out(Shape{g.cout, g.ho, g.wo});
  const float* b = bias.defined() ? bias.data().data() : nullptr;
  if (g.k == 1 && g.pad == 0 && g.stride == 1) {
    pointwise_forward(g, input.data().data(), weight.data().data(), b, out.data().data());
  } else {
    direct_forward(g, input.data().data(), weight.data().data(), b, out.data().data());
  }

  if (wants_grad({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    Tape::current().record("conv2d", {input, weight, bias}, out,
                           [g, input, weight, bias, out] { conv_backward(g, input, weight, bias, out); });
  }
  return out;
}

Tensor shift(const Tensor& input, int dx, int dy) {
  require_rank(input, 3, "shift");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (std::abs(dx) >= std::min(h, w) || std::abs(dy) >= std::min(h, w)) {
    throw ContractError("shift: |dx|,|dy| must be < min(H,W)");
  }
  Tensor out(Shape{c, h, w});
  const int ilo = std::max(0, -dx), ihi = std::min(h, h - dx);
  const int jlo = std::max(0, -dy), jhi = std::min(w, w - dy);
  auto src = input.data();
  auto dst = out.data();
  for (int ch = 0; ch < c; ++ch)
    for (int i = ilo; i < ihi; ++i)
      for (int j = jlo; j < jhi; ++j)
        dst[(static_cast<std::size_t>(ch) * h + i) * w + j] =
            src[(static_cast<std::size_t>(ch) * h + i + dx) * w + j + dy];

  if (wants_grad({&input})) {
    out.set_requires_grad(true);
    Tape::current().record("shift", {input}, out, [=]() mutable {
      auto gi = input.grad_buffer();
      auto go = out.grad();
      for (int ch = 0; ch < c; ++ch)
        for (int i = ilo; i < ihi; ++i)
          for (int j = jlo; j < jhi; ++j)
            gi[(static_cast<std::size_t>(ch) * h + i + dx) * w + j + dy] +=
                go[(static_cast<std::size_t>(ch) * h + i) * w + j];
    });
  }
  return out;
}

std::vector<float> shift_kernel(int dx, int dy) {
  if (std::abs(dx) > 1 || std::abs(dy) > 1) {
    throw UnsupportedOffsetError("shift_conv supports offsets in {-1,0,1}, got (" +
                                 std::to_string(dx) + "," + std::to_string(dy) + ")");
  }
  std::vector<float> k(9, 0.0f);
  k[static_cast<std::size_t>((1 + dx) * 3 + (1 + dy))] = 1.0f;
  return k;
}

Tensor shift_conv(const Tensor& input, int dx, int dy) {
  const std::vector<float> kernel = shift_kernel(dx, dy);
  require_rank(input, 3, "shift_conv");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out(Shape{c, h, w});
  auto src = input.data();
  auto dst = out.data();
  // Grouped convolution: every channel is its own group with the same kernel.
  for (int ch = 0; ch < c; ++ch) {
    const float* xp = src.data() + static_cast<std::size_t>(ch) * h * w;
    float* op = dst.data() + static_cast<std::size_t>(ch) * h * w;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int p = 0; p < 3; ++p) {
          const int r = i + p - 1;
          if (r < 0 || r >= h) continue;
          for (int q = 0; q < 3; ++q) {
            const int s = j + q - 1;
            if (s < 0 || s >= w) continue;
            acc += static_cast<double>(kernel[p * 3 + q]) * xp[r * w + s];
          }
        }
        op[i * w + j] = static_cast<float>(acc);
      }
    }
  }

  if (wants_grad({&input})) {
    out.set_requires_grad(true);
    Tape::current().record("shift_conv", {input}, out, [=]() mutable {
      // Transposed grouped convolution with the same fixed kernel.
      auto gi = input.grad_buffer();
      auto go = out.grad();
      for (int ch = 0; ch < c; ++ch) {
        const float* gp = go.data() + static_cast<std::size_t>(ch) * h * w;
        float* ip = gi.data() + static_cast<std::size_t>(ch) * h * w;
        for (int r = 0; r < h; ++r) {
          for (int s = 0; s < w; ++s) {
            double acc = 0.0;
            for (int p = 0; p < 3; ++p) {
              const int i = r - p + 1;
              if (i < 0 || i >= h) continue;
              for (int q = 0; q < 3; ++q) {
                const int j = s - q + 1;
                if (j < 0 || j >= w) continue;
                acc += static_cast<double>(kernel[p * 3 + q]) * gp[i * w + j];
              }
            }
            ip[r * w + s] += static_cast<float>(acc);
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax_axis(const Tensor& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= x.shape()[a];
  for (int a = axis + 1; a < x.rank(); ++a) inner *= x.shape()[a];
  const std::size_t n = x.shape()[axis];
  Tensor out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      float mx = xs[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xs[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) total += std::exp(static_cast<double>(xs[base + k * inner]) - mx);
      for (std::size_t k = 0; k < n; ++k)
        ys[base + k * inner] = static_cast<float>(std::exp(static_cast<double>(xs[base + k * inner]) - mx) / total);
    }
  }
  if (wants_grad({&x})) {
    out.set_requires_grad(true);
    Tape::current().record("softmax_axis", {x}, out, [=]() mutable {
      auto gx = x.grad_buffer();
      auto gy = out.grad();
      auto y = out.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double s = 0.0;
          for (std::size_t k = 0; k < n; ++k) s += static_cast<double>(gy[base + k * inner]) * y[base + k * inner];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = base + k * inner;
            gx[idx] += static_cast<float>(y[idx] * (gy[idx] - s));
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct Interp {
  int lo, hi;
  float w_hi;  // weight of `hi`; `lo` gets 1 - w_hi
};

std::vector<Interp> interp_table(int in_size, int scale) {
  std::vector<Interp> t(static_cast<std::size_t>(in_size) * scale);
  for (int o = 0; o < in_size * scale; ++o) {
    double src = (o + 0.5) / scale - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in_size - 1) lo = in_size - 1;
    const int hi = std::min(lo + 1, in_size - 1);
    t[o] = Interp{lo, hi, static_cast<float>(src - lo)};
  }
  return t;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int scale) {
  require_rank(x, 3, "bilinear_upsample");
  if (scale < 1) throw ContractError("bilinear_upsample: scale must be >= 1");
  if (scale == 1) return x;
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = h * scale, wo = w * scale;
  const auto rows = interp_table(h, scale);
  const auto cols = interp_table(w, scale);
  Tensor out(Shape{c, ho, wo});
  auto xs = x.data();
  auto ys = out.data();
  for (int ch = 0; ch < c; ++ch) {
    const float* xp = xs.data() + static_cast<std::size_t>(ch) * h * w;
    float* yp = ys.data() + static_cast<std::size_t>(ch) * ho * wo;
    for (int i = 0; i < ho; ++i) {
      const Interp& r = rows[i];
      for (int j = 0; j < wo; ++j) {
        const Interp& q = cols[j];
        const double top = (1.0 - q.w_hi) * xp[r.lo * w + q.lo] + static_cast<double>(q.w_hi) * xp[r.lo * w + q.hi];
        const double bot = (1.0 - q.w_hi) * xp[r.hi * w + q.lo] + static_cast<double>(q.w_hi) * xp[r.hi * w + q.hi];
        yp[i * wo + j] = static_cast<float>((1.0 - r.w_hi) * top + r.w_hi * bot);
      }
    }
  }
  if (wants_grad({&x})) {
    out.set_requires_grad(true);
    Tape::current().record("bilinear_upsample", {x}, out, [=]() mutable {
      auto gx = x.grad_buffer();
      auto gy = out.grad();
      std::vector<double> acc(static_cast<std::size_t>(h) * w);
      for (int ch = 0; ch < c; ++ch) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* gp = gy.data() + static_cast<std::size_t>(ch) * ho * wo;
        for (int i = 0; i < ho; ++i) {
          const Interp& r = rows[i];
          for (int j = 0; j < wo; ++j) {
            const Interp& q = cols[j];
            const double g = gp[i * wo + j];
            const double wr0 = 1.0 - r.w_hi, wc0 = 1.0 - q.w_hi;
            acc[r.lo * w + q.lo] += g * wr0 * wc0;
            acc[r.lo * w + q.hi] += g * wr0 * q.w_hi;
            acc[r.hi * w + q.lo] += g * r.w_hi * wc0;
            acc[r.hi * w + q.hi] += g * r.w_hi * q.w_hi;
          }
        }
        float* xp = gx.data() + static_cast<std::size_t>(ch) * h * w;
        for (std::size_t p = 0; p < acc.size(); ++p) xp[p] += static_cast<float>(acc[p]);
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > 0.0f ? xs[i] : 0.0f;
  if (wants_grad({&x})) {
    out.set_requires_grad(true);
    Tape::current().record("relu", {x}, out, [x, out]() mutable {
      auto gx = x.grad_buffer();
      auto gy = out.grad();
      auto xs = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xs[i] > 0.0f) gx[i] += gy[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i)
    ys[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(xs[i]))));
  if (wants_grad({&x})) {
    out.set_requires_grad(true);
    Tape::current().record("sigmoid", {x}, out, [x, out]() mutable {
      auto gx = x.grad_buffer();
      auto gy = out.grad();
      auto y = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += static_cast<float>(static_cast<double>(gy[i]) * y[i] * (1.0 - y[i]));
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto as = a.data();
  auto bs = b.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] + bs[i];
  if (wants_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current().record("add", {a, b}, out, [a, b, out]() mutable {
      auto gy = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto as = a.data();
  auto bs = b.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] * bs[i];
  if (wants_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current().record("mul", {a, b}, out, [a, b, out]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto g = a.grad_buffer();
        auto bs = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bs[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad_buffer();
        auto as = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * as[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  auto as = a.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] * s;
  if (wants_grad({&a})) {
    out.set_requires_grad(true);
    Tape::current().record("scale", {a}, out, [a, out, s]() mutable {
      auto g = a.grad_buffer();
      auto gy = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * s;
    });
  }
  return out;
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: factor must have exactly one element");
  const float f = s.data()[0];
  Tensor out(a.shape());
  auto as = a.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] * f;
  if (wants_grad({&a, &s})) {
    out.set_requires_grad(true);
    Tape::current().record("scale_by", {a, s}, out, [a, s, out, f]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto g = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * f;
      }
      if (s.requires_grad()) {
        s.grad_buffer()[0] += static_cast<float>(dot(gy.data(), a.data().data(), gy.size()));
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  Tensor out = Tensor::scalar(static_cast<float>(total));
  if (wants_grad({&x})) {
    out.set_requires_grad(true);
    Tape::current().record("sum", {x}, out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (float& v : x.grad_buffer()) v += g;
    });
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const int h = parts[0].dim(1), w = parts[0].dim(2);
  int c = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    require_rank(t, 3, "concat_channels");
    if (t.dim(1) != h || t.dim(2) != w) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_str(t.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    }
    c += t.dim(0);
    rg = rg || (t.requires_grad() && Tape::current().recording());
  }
  Tensor out(Shape{c, h, w});
  auto ys = out.data();
  std::size_t offset = 0;
  for (const Tensor& t : parts) {
    std::copy(t.data().begin(), t.data().end(), ys.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += t.numel();
  }
  if (rg) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    Tape::current().record("concat_channels", inputs, out, [inputs, out]() mutable {
      auto gy = out.grad();
      std::size_t off = 0;
      for (Tensor& t : inputs) {
        if (t.requires_grad()) {
          auto g = t.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[off + i];
        }
        off += t.numel();
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
  require_rank(x, 3, "slice_channels");
  if (begin < 0 || end > x.dim(0) || begin >= end) throw ShapeError("slice_channels: bad range");
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out(Shape{end - begin, x.dim(1), x.dim(2)});
  auto xs = x.data();
  std::copy(xs.begin() + static_cast<std::ptrdiff_t>(begin * plane),
            xs.begin() + static_cast<std::ptrdiff_t>(end * plane), out.data().begin());
  if (wants_grad({&x})) {
    out.set_requires_grad(true);
    Tape::current().record("slice_channels", {x}, out, [x, out, begin, plane]() mutable {
      auto g = x.grad_buffer();
      auto gy = out.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) g[begin * plane + i] += gy[i];
    });
  }
  return out;
}

namespace instrument {

void reset() { g_weight_uses.clear(); }

int weight_uses(const Tensor& weight) {
  auto it = g_weight_uses.find(weight.id());
  return it == g_weight_uses.end() ? 0 : it->second;
}

}  // namespace instrument

}  // namespace edge
