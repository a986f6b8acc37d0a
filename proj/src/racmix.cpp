#include "edge/racmix.hpp"

#include <algorithm>
#include <cmath>

#include "edge/error.hpp"
#include "edge/ops.hpp"

namespace edge {

void RacmixConfig::validate() const {
  if (channels < 1 || heads < 1) throw ConfigError("racmix: channels and heads must be positive");
  if (channels % heads != 0) {
    throw ConfigError("racmix: channels (" + std::to_string(channels) + ") not divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("racmix: kernel_size must be odd");
  if (window_radius < 1) throw ConfigError("racmix: window_radius must be >= 1");
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  t.set_requires_grad(true);
  return t;
}

Tensor identity_1x1(int c) {
  Tensor t(Shape{c, c, 1, 1});
  for (int i = 0; i < c; ++i) t.data()[static_cast<std::size_t>(i) * c + i] = 1.0f;
  t.set_requires_grad(true);
  return t;
}

}  // namespace

RacmixBlock RacmixBlock::create(const RacmixConfig& config, Rng& rng) {
  config.validate();
  const int c = config.channels;
  const int taps = config.kernel_size * config.kernel_size;
  RacmixBlock b;
  b.config = config;
  const double proj_bound = 1.0 / std::sqrt(static_cast<double>(c));
  b.w_q = uniform_tensor({c, c, 1, 1}, proj_bound, rng);
  b.w_k = uniform_tensor({c, c, 1, 1}, proj_bound, rng);
  b.w_v = uniform_tensor({c, c, 1, 1}, proj_bound, rng);
  // Fan-in of the equivalent k×k convolution over the 3C projected channels.
  b.conv_mix = uniform_tensor({taps * c, 3 * c, 1, 1}, 1.0 / std::sqrt(3.0 * c * taps), rng);
  b.mlp_weight = uniform_tensor({c, c, 1, 1}, proj_bound, rng);
  b.mlp_bias = Tensor(Shape{c}, 0.0f).set_requires_grad(true);
  b.alpha = Tensor::scalar(1.0f).set_requires_grad(true);
  b.beta = Tensor::scalar(1.0f).set_requires_grad(true);
  return b;
}

RacmixBlock RacmixBlock::from_dense_kernel(const Tensor& kernel, int heads, int window_radius) {
  if (kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1) || kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("from_dense_kernel: expected a square C×C×k×k kernel, got " + shape_str(kernel.shape()));
  }
  RacmixConfig cfg;
  cfg.channels = kernel.dim(0);
  cfg.heads = heads;
  cfg.kernel_size = kernel.dim(2);
  cfg.window_radius = window_radius;
  cfg.validate();
  const int c = cfg.channels;
  const int k = cfg.kernel_size;
  RacmixBlock b;
  b.config = cfg;
  b.w_q = identity_1x1(c);
  b.w_k = identity_1x1(c);
  b.w_v = identity_1x1(c);
  b.conv_mix = Tensor(Shape{k * k * c, 3 * c, 1, 1});
  auto mix = b.conv_mix.data();
  auto kw = kernel.data();
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q) {
      const int tap = p * k + q;
      for (int co = 0; co < c; ++co)
        for (int ci = 0; ci < c; ++ci)
          mix[static_cast<std::size_t>(tap * c + co) * 3 * c + ci] =
              kw[((static_cast<std::size_t>(co) * c + ci) * k + p) * k + q];
    }
  b.conv_mix.set_requires_grad(true);
  b.mlp_weight = identity_1x1(c);
  b.mlp_bias = Tensor(Shape{c}, 0.0f).set_requires_grad(true);
  b.alpha = Tensor::scalar(1.0f).set_requires_grad(true);
  b.beta = Tensor::scalar(1.0f).set_requires_grad(true);
  return b;
}

std::vector<NamedParam> RacmixBlock::parameters(const std::string& prefix) const {
  return {
      {prefix + "w_q", w_q},           {prefix + "w_k", w_k},
      {prefix + "w_v", w_v},           {prefix + "conv_mix", conv_mix},
      {prefix + "mlp_weight", mlp_weight}, {prefix + "mlp_bias", mlp_bias},
      {prefix + "alpha", alpha},       {prefix + "beta", beta},
  };
}

Projections project(const Tensor& x, const RacmixBlock& block) {
  if (x.rank() != 3 || x.dim(0) != block.config.channels) {
    throw ShapeError("racmix: input " + shape_str(x.shape()) + " does not have " +
                     std::to_string(block.config.channels) + " channels");
  }
  return Projections{conv2d(x, block.w_q), conv2d(x, block.w_k), conv2d(x, block.w_v)};
}

Tensor conv_path(const Projections& p, const RacmixBlock& block) {
  const int c = block.config.channels;
  const int k = block.config.kernel_size;
  const int half = k / 2;
  const Tensor parts[] = {p.q, p.k, p.v};
  const Tensor mixed = conv2d(concat_channels(parts), block.conv_mix);
  Tensor out;
  for (int pr = 0; pr < k; ++pr) {
    for (int pc = 0; pc < k; ++pc) {
      const int tap = pr * k + pc;
      const Tensor map = slice_channels(mixed, tap * c, (tap + 1) * c);
      const int dx = pr - half, dy = pc - half;
      Tensor moved;
      if (k <= 3) {
        moved = shift_conv(map, dx, dy);
      } else if (std::abs(dx) < std::min(map.dim(1), map.dim(2)) &&
                 std::abs(dy) < std::min(map.dim(1), map.dim(2))) {
        moved = shift(map, dx, dy);
      } else {
        continue;  // tap falls entirely outside the image
      }
      out = out.defined() ? add(out, moved) : moved;
    }
  }
  return out;
}

namespace {

// C×H×W → (H·W)×C.
std::vector<float> to_pixel_major(const Tensor& t) {
  const int c = t.dim(0);
  const std::size_t hw = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
  std::vector<float> out(hw * c);
  auto src = t.data();
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = src[ch * hw + p];
  return out;
}

struct AttentionGeometry {
  int c, h, w, heads, d, radius, side, slots;
  double scale;
};

}  // namespace

Tensor local_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, int radius,
                       AttentionWeights* probe) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("local_attention: q, k, v must share a C×H×W shape");
  }
  AttentionGeometry g{};
  g.c = q.dim(0);
  g.h = q.dim(1);
  g.w = q.dim(2);
  g.heads = heads;
  if (heads < 1 || g.c % heads != 0) throw ShapeError("local_attention: channels not divisible by heads");
  if (radius < 0) throw ContractError("local_attention: negative radius");
  g.d = g.c / heads;
  g.radius = radius;
  g.side = 2 * radius + 1;
  g.slots = g.side * g.side;
  g.scale = 1.0 / std::sqrt(static_cast<double>(g.d));
  const std::size_t hw = static_cast<std::size_t>(g.h) * g.w;

  std::vector<float> qt = to_pixel_major(q);
  std::vector<float> kt = to_pixel_major(k);
  std::vector<float> vt = to_pixel_major(v);
  std::vector<float> weights(static_cast<std::size_t>(heads) * hw * g.slots, 0.0f);
  std::vector<double> out_t(hw * g.c, 0.0);
  std::vector<double> logits(g.slots);

  for (int l = 0; l < heads; ++l) {
    const int c0 = l * g.d;
    for (int i = 0; i < g.h; ++i) {
      const int alo = std::max(0, i - radius), ahi = std::min(g.h - 1, i + radius);
      for (int j = 0; j < g.w; ++j) {
        const int blo = std::max(0, j - radius), bhi = std::min(g.w - 1, j + radius);
        const std::size_t pix = static_cast<std::size_t>(i) * g.w + j;
        const float* qp = qt.data() + pix * g.c + c0;
        double mx = -1e300;
        for (int a = alo; a <= ahi; ++a)
          for (int b = blo; b <= bhi; ++b) {
            const float* kp = kt.data() + (static_cast<std::size_t>(a) * g.w + b) * g.c + c0;
            double s = 0.0;
            for (int ch = 0; ch < g.d; ++ch) s += static_cast<double>(qp[ch]) * kp[ch];
            s *= g.scale;
            logits[(a - i + radius) * g.side + (b - j + radius)] = s;
            mx = std::max(mx, s);
          }
        double total = 0.0;
        for (int a = alo; a <= ahi; ++a)
          for (int b = blo; b <= bhi; ++b) {
            double& s = logits[(a - i + radius) * g.side + (b - j + radius)];
            s = std::exp(s - mx);
            total += s;
          }
        float* wp = weights.data() + (static_cast<std::size_t>(l) * hw + pix) * g.slots;
        double* op = out_t.data() + pix * g.c + c0;
        for (int a = alo; a <= ahi; ++a)
          for (int b = blo; b <= bhi; ++b) {
            const int slot = (a - i + radius) * g.side + (b - j + radius);
            const double aw = logits[slot] / total;
            wp[slot] = static_cast<float>(aw);
            const float* vp = vt.data() + (static_cast<std::size_t>(a) * g.w + b) * g.c + c0;
            for (int ch = 0; ch < g.d; ++ch) op[ch] += aw * vp[ch];
          }
      }
    }
  }

  Tensor out(q.shape());
  auto os = out.data();
  for (int ch = 0; ch < g.c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) os[ch * hw + p] = static_cast<float>(out_t[p * g.c + ch]);

  if (probe != nullptr) {
    probe->heads = heads;
    probe->height = g.h;
    probe->width = g.w;
    probe->radius = radius;
    probe->values = weights;
  }

  const bool rg = Tape::current().recording() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  if (rg) {
    out.set_requires_grad(true);
    Tape::current().record(
        "local_attention", {q, k, v}, out,
        [g, hw, q, k, v, out, qt = std::move(qt), kt = std::move(kt), vt = std::move(vt),
         weights = std::move(weights)]() mutable {
          // Upstream gradient in pixel-major layout.
          std::vector<float> go(hw * g.c);
          {
            auto src = out.grad();
            for (int ch = 0; ch < g.c; ++ch)
              for (std::size_t p = 0; p < hw; ++p) go[p * g.c + ch] = src[ch * hw + p];
          }
          std::vector<double> dq(hw * g.c, 0.0), dk(hw * g.c, 0.0), dv(hw * g.c, 0.0);
          std::vector<double> da(g.slots);
          for (int l = 0; l < g.heads; ++l) {
            const int c0 = l * g.d;
            for (int i = 0; i < g.h; ++i) {
              const int alo = std::max(0, i - g.radius), ahi = std::min(g.h - 1, i + g.radius);
              for (int j = 0; j < g.w; ++j) {
                const int blo = std::max(0, j - g.radius), bhi = std::min(g.w - 1, j + g.radius);
                const std::size_t pix = static_cast<std::size_t>(i) * g.w + j;
                const float* wp = weights.data() + (static_cast<std::size_t>(l) * hw + pix) * g.slots;
                const float* gp = go.data() + pix * g.c + c0;
                const float* qp = qt.data() + pix * g.c + c0;
                double weighted = 0.0;
                for (int a = alo; a <= ahi; ++a)
                  for (int b = blo; b <= bhi; ++b) {
                    const int slot = (a - i + g.radius) * g.side + (b - j + g.radius);
                    const std::size_t nb = (static_cast<std::size_t>(a) * g.w + b) * g.c + c0;
                    const float* vp = vt.data() + nb;
                    double s = 0.0;
                    for (int ch = 0; ch < g.d; ++ch) {
                      s += static_cast<double>(gp[ch]) * vp[ch];
                      dv[nb + ch] += static_cast<double>(wp[slot]) * gp[ch];
                    }
                    da[slot] = s;
                    weighted += wp[slot] * s;
                  }
                double* dqp = dq.data() + pix * g.c + c0;
                for (int a = alo; a <= ahi; ++a)
                  for (int b = blo; b <= bhi; ++b) {
                    const int slot = (a - i + g.radius) * g.side + (b - j + g.radius);
                    const double ds = wp[slot] * (da[slot] - weighted) * g.scale;
                    const std::size_t nb = (static_cast<std::size_t>(a) * g.w + b) * g.c + c0;
                    const float* kp = kt.data() + nb;
                    for (int ch = 0; ch < g.d; ++ch) {
                      dqp[ch] += ds * kp[ch];
                      dk[nb + ch] += ds * qp[ch];
                    }
                  }
              }
            }
          }
          const std::pair<const Tensor*, std::vector<double>*> targets[] = {{&q, &dq}, {&k, &dk}, {&v, &dv}};
          for (auto [t, acc] : targets) {
            if (!t->requires_grad()) continue;
            auto gbuf = t->grad_buffer();
            for (int ch = 0; ch < g.c; ++ch)
              for (std::size_t p = 0; p < hw; ++p) gbuf[ch * hw + p] += static_cast<float>((*acc)[p * g.c + ch]);
          }
        });
  }
  return out;
}

Tensor attention_path(const Projections& p, const RacmixBlock& block) {
  const Tensor mixed = local_attention(p.q, p.k, p.v, block.config.heads, block.config.window_radius);
  return conv2d(mixed, block.mlp_weight, block.mlp_bias);
}

Tensor racmix_forward(const Tensor& x, const RacmixBlock& block) {
  const Projections p = project(x, block);
  const Tensor att = attention_path(p, block);
  const Tensor conv = conv_path(p, block);
  return relu(add(add(scale_by(att, block.alpha), scale_by(conv, block.beta)), x));
}

}  // namespace edge
