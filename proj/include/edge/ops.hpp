#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "edge/tensor.hpp"

namespace edge {

/// 2-D cross-correlation of a C_in×H×W input with a C_out×C_in×k×k kernel.
/// Zero padding; optional bias of shape [C_out] (pass an undefined Tensor to
/// skip it). Reductions accumulate in double.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor(),
              int stride = 1, int padding = 0);

/// output[c,i,j] = input[c, i+dx, j+dy], zero outside the image.
Tensor shift(const Tensor& input, int dx, int dy);

/// The same shift realized as a per-channel 3×3 convolution with a fixed
/// one-hot kernel at (1+dx, 1+dy). Only |dx|,|dy| <= 1 is supported.
Tensor shift_conv(const Tensor& input, int dx, int dy);

/// The fixed 3×3 one-hot kernel used by shift_conv, row-major.
std::vector<float> shift_kernel(int dx, int dy);

Tensor softmax_axis(const Tensor& x, int axis);

/// Align-corners-false bilinear resize of a C×H×W tensor by an integer factor.
Tensor bilinear_upsample(const Tensor& x, int scale);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
/// a · s where s is a learnable one-element tensor.
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor sum(const Tensor& x);
Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& x, int begin, int end);

namespace instrument {

// Per-thread count of conv2d applications keyed by weight tensor. Used to
// verify that a weight is applied exactly once within a forward pass.
void reset();
int weight_uses(const Tensor& weight);

}  // namespace instrument

}  // namespace edge
