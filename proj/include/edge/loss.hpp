#pragma once

#include <span>

#include "edge/tensor.hpp"

namespace edge {

inline constexpr double kProbClamp = 1e-6;

/// Per-image class-balancing weights: alpha scales the edge (positive) term,
/// beta the background term. alpha + beta == 1.
struct BalanceWeights {
  double alpha = 0.5;
  double beta = 0.5;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  /// alpha = |Y-|/|Y|, beta = |Y+|/|Y|. When one class is absent its term
  /// vanishes anyway and the surviving term gets weight 1.
  static BalanceWeights from_gt(const Tensor& gt);
};

/// Throws DataError unless every gt value is within 1e-6 of 0 or 1.
void require_binary(const Tensor& gt);

/// -sum[alpha·G·log P + beta·(1-G)·log(1-P)] with P clamped to
/// [1e-6, 1 - 1e-6]. Differentiable w.r.t. pred; the clamp passes no gradient
/// outside its range.
Tensor balanced_bce(const Tensor& pred, const Tensor& gt);

/// Deep supervision: the six side terms plus the fused term.
Tensor total_loss(std::span<const Tensor> side_maps, const Tensor& fused, const Tensor& gt);

}  // namespace edge
