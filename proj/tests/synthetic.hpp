#pragma once

// Synthetic shape images: brighter axis-aligned rectangles on a dark
// background, ground truth on the inner boundary of each rectangle.

#include <vector>

#include "edge/network.hpp"
#include "edge/rng.hpp"

namespace testutil {

inline edge::TrainItem shape_image(int size, edge::Rng& rng) {
  edge::Tensor img(edge::Shape{3, size, size}), gt(edge::Shape{1, size, size});
  std::vector<int> owner(static_cast<std::size_t>(size) * size, 0);
  float bg[3];
  for (float& c : bg) c = static_cast<float>(rng.uniform(0.05, 0.2));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) img.at(c, i, j) = bg[c];
  int placed = 0;
  for (int attempt = 0; attempt < 200 && placed < 3; ++attempt) {
    const int h = rng.uniform_int(size / 6, size / 2), w = rng.uniform_int(size / 6, size / 2);
    const int top = rng.uniform_int(2, size - h - 2), left = rng.uniform_int(2, size - w - 2);
    bool clear = true;
    // Keep a two-pixel gap between shapes.
    for (int i = top - 2; i < top + h + 2 && clear; ++i)
      for (int j = left - 2; j < left + w + 2 && clear; ++j) clear = owner[static_cast<std::size_t>(i) * size + j] == 0;
    if (!clear) continue;
    ++placed;
    float fg[3];
    for (float& c : fg) c = static_cast<float>(rng.uniform(0.55, 0.95));
    for (int i = top; i < top + h; ++i)
      for (int j = left; j < left + w; ++j) {
        owner[static_cast<std::size_t>(i) * size + j] = placed;
        for (int c = 0; c < 3; ++c) img.at(c, i, j) = fg[c];
        if (i == top || i == top + h - 1 || j == left || j == left + w - 1) gt.at(0, i, j) = 1.0f;
      }
  }
  return {img, gt};
}

inline std::vector<edge::TrainItem> shape_dataset(int count, int size, std::uint64_t seed) {
  edge::Rng rng(seed);
  std::vector<edge::TrainItem> items;
  for (int n = 0; n < count; ++n) items.push_back(shape_image(size, rng));
  return items;
}

}  // namespace testutil
