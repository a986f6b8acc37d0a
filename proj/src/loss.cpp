#include "edge/loss.hpp"

#include <algorithm>
#include <cmath>

#include "edge/error.hpp"
#include "edge/ops.hpp"

namespace edge {

void require_binary(const Tensor& gt) {
  for (float v : gt.data()) {
    if (std::abs(v) > 1e-6f && std::abs(v - 1.0f) > 1e-6f) {
      throw DataError("ground truth must be binary, found value " + std::to_string(v));
    }
  }
}

BalanceWeights BalanceWeights::from_gt(const Tensor& gt) {
  BalanceWeights w;
  for (float v : gt.data()) (v > 0.5f ? w.positives : w.negatives)++;
  const double total = static_cast<double>(w.positives + w.negatives);
  if (w.positives == 0) {
    w.alpha = 0.0;
    w.beta = 1.0;
  } else if (w.negatives == 0) {
    w.alpha = 1.0;
    w.beta = 0.0;
  } else {
    w.alpha = static_cast<double>(w.negatives) / total;
    w.beta = 1.0 - w.alpha;
  }
  return w;
}

Tensor balanced_bce(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("balanced_bce: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                     shape_str(gt.shape()));
  }
  require_binary(gt);
  const BalanceWeights bw = BalanceWeights::from_gt(gt);
  auto p = pred.data();
  auto g = gt.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(static_cast<double>(p[i]), kProbClamp, 1.0 - kProbClamp);
    total -= g[i] > 0.5f ? bw.alpha * std::log(pc) : bw.beta * std::log(1.0 - pc);
  }
  Tensor out = Tensor::scalar(static_cast<float>(total));
  if (Tape::current().recording() && pred.requires_grad()) {
    out.set_requires_grad(true);
    Tape::current().record("balanced_bce", {pred, gt}, out, [pred, gt, out, bw]() mutable {
      const double up = out.grad()[0];
      auto gp = pred.grad_buffer();
      auto p = pred.data();
      auto g = gt.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double pv = p[i];
        if (pv < kProbClamp || pv > 1.0 - kProbClamp) continue;
        const double d = g[i] > 0.5f ? -bw.alpha / pv : bw.beta / (1.0 - pv);
        gp[i] += static_cast<float>(up * d);
      }
    });
  }
  return out;
}

Tensor total_loss(std::span<const Tensor> side_maps, const Tensor& fused, const Tensor& gt) {
  if (side_maps.size() != 6) {
    throw ContractError("total_loss expects 6 side maps, got " + std::to_string(side_maps.size()));
  }
  Tensor total = balanced_bce(fused, gt);
  for (const Tensor& side : side_maps) total = add(total, balanced_bce(side, gt));
  return total;
}

}  // namespace edge
