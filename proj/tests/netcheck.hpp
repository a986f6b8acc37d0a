#pragma once

// Finite-difference check of sampled network parameters. A ReLU network is
// piecewise smooth; a central difference whose ±eps interval flips any ReLU
// measures a chord across a kink rather than the derivative, so such samples
// are redrawn and counted.

#include <algorithm>
#include <cmath>
#include <vector>

#include "edge/loss.hpp"
#include "edge/network.hpp"
#include "edge/rng.hpp"

namespace testutil {

// Balanced cross-entropy summed over all seven maps, accumulated in double so
// central differences are not limited by float rounding of the scalar loss.
inline double total_loss_double(const edge::NetworkOutput& o, const edge::Tensor& gt) {
  const edge::BalanceWeights bw = edge::BalanceWeights::from_gt(gt);
  double s = 0;
  auto term = [&](const edge::Tensor& p) {
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double v = std::clamp(static_cast<double>(p.data()[i]), edge::kProbClamp, 1 - edge::kProbClamp);
      s -= gt.data()[i] > 0.5f ? bw.alpha * std::log(v) : bw.beta * std::log(1 - v);
    }
  };
  for (const edge::Tensor& side : o.side) term(side);
  term(o.fused);
  return s;
}

struct NetCheck {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  int samples = 0;
  int redrawn = 0;  // draws discarded because a ReLU switched within ±eps
};

inline NetCheck network_gradcheck(const edge::EdgeNetwork& net, const edge::Tensor& x, const edge::Tensor& gt,
                                  edge::Rng& rng, int samples = 20, double eps = 1e-3, int max_draws = 2000) {
  auto params = net.parameters();
  for (auto& [n, t] : params) t.zero_grad();
  {
    const edge::NetworkOutput o = net.forward(x);
    edge::backward(edge::total_loss(o.side, o.fused, gt));
  }
  // Loss and ReLU sign pattern of one recorded forward pass.
  auto probe = [&](std::vector<bool>& pattern) {
    const edge::NetworkOutput o = net.forward(x);
    pattern.clear();
    for (const auto& e : edge::Tape::current().entries()) {
      if (e.op != "relu") continue;
      for (float v : e.output.data()) pattern.push_back(v > 0.0f);
    }
    edge::Tape::current().clear();
    return total_loss_double(o, gt);
  };
  NetCheck r;
  double diff = 0, na = 0, nn = 0;
  std::vector<bool> pat_up, pat_down;
  for (int draw = 0; draw < max_draws && r.samples < samples; ++draw) {
    auto& [name, t] = params[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(params.size()) - 1))];
    const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(t.numel()) - 1));
    const float saved = t.data()[i];
    const float hi = static_cast<float>(saved + eps), lo = static_cast<float>(saved - eps);
    t.data()[i] = hi;
    const double up = probe(pat_up);
    t.data()[i] = lo;
    const double down = probe(pat_down);
    t.data()[i] = saved;
    if (pat_up != pat_down) {
      ++r.redrawn;
      continue;
    }
    const double numeric = (up - down) / (static_cast<double>(hi) - lo);
    const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
    diff += (analytic - numeric) * (analytic - numeric);
    na += analytic * analytic;
    nn += numeric * numeric;
    ++r.samples;
  }
  r.rel_error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return r;
}

}  // namespace testutil
