#pragma once

#include <string>
#include <utility>
#include <vector>

#include "edge/rng.hpp"
#include "edge/tensor.hpp"

namespace edge {

using NamedParam = std::pair<std::string, Tensor>;

struct RacmixConfig {
  int channels = 16;
  int heads = 4;
  int kernel_size = 3;
  int window_radius = 3;  // half-width of the square attention neighborhood

  int head_dim() const { return channels / heads; }
  void validate() const;  // throws ConfigError
};

/// Learnable state of one convolution / self-attention mixing block.
///
/// The three projections are shared by both aggregation paths. `conv_mix`
/// maps the 3C projected channels (Q, K, V, each split into `heads` groups of
/// head_dim channels) to k² maps of C channels, one per kernel tap; tap
/// t = p·k + q lives in output channels [t·C, (t+1)·C).
struct RacmixBlock {
  RacmixConfig config;
  Tensor w_q, w_k, w_v;  // C×C×1×1, no bias
  Tensor conv_mix;       // (k²·C)×(3C)×1×1, no bias
  Tensor mlp_weight;     // C×C×1×1
  Tensor mlp_bias;       // C
  Tensor alpha, beta;    // fusion weights, one element each

  static RacmixBlock create(const RacmixConfig& config, Rng& rng);

  /// Block whose convolution path reproduces conv2d(x, kernel, padding=k/2)
  /// for a dense C×C×k×k kernel: identity projections and a conv_mix that
  /// routes the Q projection through kernel tap (p, q).
  static RacmixBlock from_dense_kernel(const Tensor& kernel, int heads, int window_radius);

  std::vector<NamedParam> parameters(const std::string& prefix) const;
};

struct Projections {
  Tensor q, k, v;
};

Projections project(const Tensor& x, const RacmixBlock& block);

Tensor conv_path(const Projections& p, const RacmixBlock& block);

Tensor attention_path(const Projections& p, const RacmixBlock& block);

/// ReLU(alpha·attention + beta·convolution + x), sharing one projection.
Tensor racmix_forward(const Tensor& x, const RacmixBlock& block);

/// Attention weights captured during a forward pass: for head l and pixel
/// (i, j) the window slot (a - i + r)·(2r + 1) + (b - j + r) holds the softmax
/// weight of neighbor (a, b); slots outside the image hold 0.
struct AttentionWeights {
  int heads = 0, height = 0, width = 0, radius = 0;
  std::vector<float> values;

  int window() const { return (2 * radius + 1) * (2 * radius + 1); }
  float at(int head, int i, int j, int slot) const {
    return values[((static_cast<std::size_t>(head) * height + i) * width + j) * window() + slot];
  }
};

/// Multi-head local self-attention over a (2r+1)² neighborhood clipped at the
/// image border; logits are scaled by 1/sqrt(head_dim) and the softmax
/// renormalizes over the valid pixels only.
Tensor local_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, int radius,
                       AttentionWeights* probe = nullptr);

}  // namespace edge
