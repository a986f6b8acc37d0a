#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "edge/loss.hpp"
#include "edge/ops.hpp"
#include "edge/racmix.hpp"
#include "gradcheck.hpp"

using namespace edge;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

constexpr double kOpTolerance = 1e-3;

// Keeps values away from the ReLU kink so central differences stay on one side.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t = random_tensor(shape, rng);
  for (float& v : t.data())
    if (std::abs(v) < 0.05f) v = v < 0 ? -0.05f - v : 0.05f + v;
  return t;
}

}  // namespace

TEST_CASE("conv2d gradients") {
  Rng rng(11);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      Tensor x = random_tensor({2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
      const auto r = gradcheck([&] { return conv2d(x, w, b, stride, pad); }, {x, w, b}, rng);
      CHECK(r.max_rel_error < kOpTolerance);
    }
  Tensor x = random_tensor({4, 4, 6}, rng), w = random_tensor({5, 4, 1, 1}, rng);
  CHECK(gradcheck([&] { return conv2d(x, w); }, {x, w}, rng).max_rel_error < kOpTolerance);
}

TEST_CASE("shift gradients") {
  Rng rng(12);
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy) {
      Tensor x = random_tensor({2, 4, 5}, rng);
      CHECK(gradcheck([&] { return shift(x, dx, dy); }, {x}, rng).max_rel_error < kOpTolerance);
      CHECK(gradcheck([&] { return shift_conv(x, dx, dy); }, {x}, rng).max_rel_error < kOpTolerance);
    }
  Tensor x = random_tensor({1, 5, 5}, rng);
  CHECK(gradcheck([&] { return shift(x, 2, -3); }, {x}, rng).max_rel_error < kOpTolerance);
}

TEST_CASE("softmax gradients") {
  Rng rng(13);
  Tensor x = random_tensor({3, 4, 5}, rng, -2, 2);
  for (int axis = 0; axis < 3; ++axis) {
    CHECK(gradcheck([&] { return softmax_axis(x, axis); }, {x}, rng).max_rel_error < kOpTolerance);
  }
}

TEST_CASE("bilinear_upsample gradients") {
  Rng rng(14);
  Tensor x = random_tensor({2, 3, 4}, rng);
  for (int s : {1, 2, 3, 4}) {
    CHECK(gradcheck([&] { return bilinear_upsample(x, s); }, {x}, rng).max_rel_error < kOpTolerance);
  }
}

TEST_CASE("pointwise gradients") {
  Rng rng(15);
  Tensor a = away_from_zero({2, 3, 3}, rng), b = random_tensor({2, 3, 3}, rng), s = random_tensor({1}, rng);
  CHECK(gradcheck([&] { return relu(a); }, {a}, rng).max_rel_error < kOpTolerance);
  CHECK(gradcheck([&] { return sigmoid(a); }, {a}, rng).max_rel_error < kOpTolerance);
  CHECK(gradcheck([&] { return add(a, b); }, {a, b}, rng).max_rel_error < kOpTolerance);
  CHECK(gradcheck([&] { return mul(a, b); }, {a, b}, rng).max_rel_error < kOpTolerance);
  CHECK(gradcheck([&] { return scale(a, -1.7f); }, {a}, rng).max_rel_error < kOpTolerance);
  CHECK(gradcheck([&] { return scale_by(a, s); }, {a, s}, rng).max_rel_error < kOpTolerance);
  CHECK(gradcheck([&] { return sum(a); }, {a}, rng).max_rel_error < kOpTolerance);
  CHECK(gradcheck(
            [&] {
              const Tensor parts[] = {a, b};
              return concat_channels(parts);
            },
            {a, b}, rng)
            .max_rel_error < kOpTolerance);
  CHECK(gradcheck([&] { return slice_channels(b, 1, 2); }, {b}, rng).max_rel_error < kOpTolerance);
}

TEST_CASE("attention gradients") {
  Rng rng(16);
  Tensor q = random_tensor({4, 5, 4}, rng), k = random_tensor({4, 5, 4}, rng), v = random_tensor({4, 5, 4}, rng);
  for (int radius : {1, 2}) {
    CHECK(gradcheck([&] { return local_attention(q, k, v, 2, radius); }, {q, k, v}, rng).max_rel_error <
          kOpTolerance);
  }
}

TEST_CASE("full racmix block gradients") {
  Rng rng(17);
  RacmixConfig cfg;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.window_radius = 1;
  RacmixBlock block = RacmixBlock::create(cfg, rng);
  Tensor x = random_tensor({4, 5, 5}, rng);
  std::vector<Tensor> leaves{x};
  for (auto& [name, t] : block.parameters("")) leaves.push_back(t);
  const auto r = gradcheck([&] { return racmix_forward(x, block); }, leaves, rng);
  CHECK(r.max_rel_error < kOpTolerance);
  // Both fusion weights receive a nonzero gradient.
  CHECK(block.alpha.has_grad());
  CHECK(block.beta.has_grad());
  CHECK(block.alpha.grad()[0] != 0.0f);
  CHECK(block.beta.grad()[0] != 0.0f);
}

TEST_CASE("balanced BCE gradients") {
  Rng rng(18);
  Tensor pred = random_tensor({1, 4, 4}, rng, 0.1, 0.9);
  Tensor gt(Shape{1, 4, 4});
  for (std::size_t i = 0; i < gt.numel(); ++i) gt.data()[i] = (i % 3 == 0) ? 1.0f : 0.0f;
  CHECK(gradcheck([&] { return balanced_bce(pred, gt); }, {pred}, rng, 1e-4).max_rel_error < kOpTolerance);
}
