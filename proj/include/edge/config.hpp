#pragma once

#include <cstdint>
#include <string>

#include "edge/datapipe.hpp"
#include "edge/evalkit.hpp"
#include "edge/network.hpp"

namespace edge {

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 1;
  int steps = 100;
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
};

/// Everything a run needs, read from a flat `key = value` file. Unknown keys
/// are rejected.
struct RunConfig {
  NetworkConfig network;
  AugmentPlan augment;
  EvalConfig eval;
  TrainConfig train;
  std::uint64_t seed = 0;

  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string to_text() const;
  void validate() const;
};

}  // namespace edge
