#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "edge/error.hpp"
#include "edge/loss.hpp"
#include "edge/ops.hpp"
#include "gradcheck.hpp"

using namespace edge;
using testutil::random_tensor;

namespace {

Tensor random_gt(const Shape& shape, Rng& rng, double p = 0.3) {
  Tensor g(shape);
  for (float& v : g.data()) v = rng.uniform() < p ? 1.0f : 0.0f;
  return g;
}

Tensor complement(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out.data()[i] = 1.0f - t.data()[i];
  return out;
}

// Scalar reference written directly from the balanced cross-entropy formula.
double hand_bce(const Tensor& pred, const Tensor& gt) {
  double pos = 0, neg = 0;
  for (float g : gt.data()) (g > 0.5f ? pos : neg) += 1;
  const double a = pos == 0 ? 0.0 : (neg == 0 ? 1.0 : neg / (pos + neg));
  const double b = pos == 0 ? 1.0 : (neg == 0 ? 0.0 : pos / (pos + neg));
  double s = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double p = std::min(std::max(static_cast<double>(pred.data()[i]), 1e-6), 1 - 1e-6);
    s -= gt.data()[i] > 0.5f ? a * std::log(p) : b * std::log(1 - p);
  }
  return s;
}

}  // namespace

TEST_CASE("balance weights") {
  Rng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const BalanceWeights w = BalanceWeights::from_gt(random_gt({1, 5, 7}, rng, rng.uniform()));
    CHECK(w.alpha + w.beta == 1.0);
  }
  Tensor g(Shape{1, 2, 2}, std::vector<float>{1, 0, 0, 0});
  const BalanceWeights w = BalanceWeights::from_gt(g);
  CHECK(w.alpha == doctest::Approx(0.75));
  CHECK(w.beta == doctest::Approx(0.25));
  const BalanceWeights none = BalanceWeights::from_gt(Tensor(Shape{1, 2, 2}, 0.0f));
  CHECK(none.alpha == 0.0);
  CHECK(none.beta == 1.0);
  const BalanceWeights all = BalanceWeights::from_gt(Tensor(Shape{1, 2, 2}, 1.0f));
  CHECK(all.alpha == 1.0);
  CHECK(all.beta == 0.0);
}

TEST_CASE("balanced_bce values") {
  Rng rng(32);
  SUBCASE("perfect prediction is below the clamp residue") {
    const Tensor gt = random_gt({1, 8, 8}, rng);
    const double bound = 64 * -std::log(1 - 1e-6);
    CHECK(balanced_bce(gt, gt).item() <= bound * 1.01);
    CHECK(balanced_bce(gt, gt).item() >= 0.0f);
  }
  SUBCASE("uniform one half against the hand formula") {
    Tensor gt(Shape{1, 4, 4});
    for (int i = 0; i < 8; ++i) gt.data()[i] = 1.0f;
    const float loss = balanced_bce(Tensor(Shape{1, 4, 4}, 0.5f), gt).item();
    // alpha = beta = 1/2, every pixel contributes log 2 / 2.
    CHECK(loss == doctest::Approx(16 * 0.5 * std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("random maps against the hand formula") {
    for (int rep = 0; rep < 10; ++rep) {
      const Tensor pred = random_tensor({1, 6, 5}, rng, 0, 1);
      const Tensor gt = random_gt({1, 6, 5}, rng);
      CHECK(balanced_bce(pred, gt).item() == doctest::Approx(hand_bce(pred, gt)).epsilon(1e-5));
    }
  }
  SUBCASE("degenerate ground truth keeps a loss") {
    const Tensor pred = random_tensor({1, 4, 4}, rng, 0.2, 0.8);
    CHECK(balanced_bce(pred, Tensor(Shape{1, 4, 4}, 0.0f)).item() > 0.0f);
    CHECK(balanced_bce(pred, Tensor(Shape{1, 4, 4}, 1.0f)).item() > 0.0f);
  }
  SUBCASE("polarity swap") {
    for (int rep = 0; rep < 10; ++rep) {
      const Tensor pred = random_tensor({1, 5, 5}, rng, 0.01, 0.99);
      const Tensor gt = random_gt({1, 5, 5}, rng);
      CHECK(balanced_bce(complement(pred), complement(gt)).item() ==
            doctest::Approx(balanced_bce(pred, gt).item()).epsilon(1e-5));
    }
  }
  SUBCASE("nonnegative") {
    for (int rep = 0; rep < 10; ++rep) {
      CHECK(balanced_bce(random_tensor({1, 3, 3}, rng, 0, 1), random_gt({1, 3, 3}, rng)).item() >= 0.0f);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(balanced_bce(Tensor(Shape{1, 2, 2}, 0.5f), Tensor(Shape{1, 2, 3}, 0.0f)), ShapeError);
    CHECK_THROWS_AS(balanced_bce(Tensor(Shape{1, 2, 2}, 0.5f), Tensor(Shape{1, 2, 2}, 0.5f)), DataError);
  }
  SUBCASE("zero gradient outside the clamp") {
    Tensor pred(Shape{1, 1, 2}, std::vector<float>{0.0f, 1.0f});
    pred.set_requires_grad(true);
    backward(balanced_bce(pred, Tensor(Shape{1, 1, 2}, std::vector<float>{0.0f, 1.0f})));
    CHECK(pred.grad()[0] == 0.0f);
    CHECK(pred.grad()[1] == 0.0f);
  }
}

TEST_CASE("total_loss") {
  Rng rng(33);
  const Tensor gt = random_gt({1, 6, 6}, rng);
  SUBCASE("identical maps") {
    const Tensor p = random_tensor({1, 6, 6}, rng, 0.05, 0.95);
    const std::array<Tensor, 6> sides{p, p, p, p, p, p};
    CHECK(total_loss(sides, p, gt).item() == doctest::Approx(7 * balanced_bce(p, gt).item()).epsilon(1e-6));
  }
  SUBCASE("perfect fused, uniform sides") {
    const Tensor u(Shape{1, 6, 6}, 0.5f);
    const std::array<Tensor, 6> sides{u, u, u, u, u, u};
    const double want = 6 * balanced_bce(u, gt).item();
    CHECK(std::abs(total_loss(sides, gt, gt).item() - want) < 36 * 1e-5);
  }
  SUBCASE("equals the sum of the seven terms and is permutation invariant") {
    std::array<Tensor, 6> sides;
    double want = 0;
    for (auto& s : sides) {
      s = random_tensor({1, 6, 6}, rng, 0.05, 0.95);
      want += balanced_bce(s, gt).item();
    }
    const Tensor fused = random_tensor({1, 6, 6}, rng, 0.05, 0.95);
    want += balanced_bce(fused, gt).item();
    CHECK(total_loss(sides, fused, gt).item() == doctest::Approx(want).epsilon(1e-6));
    std::array<Tensor, 6> rev{sides[5], sides[4], sides[3], sides[2], sides[1], sides[0]};
    CHECK(total_loss(rev, fused, gt).item() == doctest::Approx(total_loss(sides, fused, gt).item()).epsilon(1e-6));
  }
  SUBCASE("gradient is the sum of per-term gradients") {
    std::array<Tensor, 6> sides;
    for (auto& s : sides) s = random_tensor({1, 6, 6}, rng, 0.05, 0.95);
    Tensor fused = random_tensor({1, 6, 6}, rng, 0.05, 0.95);
    for (auto& s : sides) s.set_requires_grad(true);
    fused.set_requires_grad(true);
    backward(total_loss(sides, fused, gt));
    std::vector<std::vector<float>> combined;
    for (auto& s : sides) combined.emplace_back(s.grad().begin(), s.grad().end());
    combined.emplace_back(fused.grad().begin(), fused.grad().end());
    std::size_t idx = 0;
    for (Tensor* t : {&sides[0], &sides[1], &sides[2], &sides[3], &sides[4], &sides[5], &fused}) {
      Tensor solo = t->clone();
      solo.set_requires_grad(true);
      backward(balanced_bce(solo, gt));
      for (std::size_t i = 0; i < solo.numel(); ++i) CHECK(solo.grad()[i] == doctest::Approx(combined[idx][i]));
      ++idx;
    }
  }
  SUBCASE("wrong map count") {
    const Tensor u(Shape{1, 6, 6}, 0.5f);
    const std::array<Tensor, 5> five{u, u, u, u, u};
    CHECK_THROWS_AS(total_loss(five, u, gt), ContractError);
  }
}
