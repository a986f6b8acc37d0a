#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "edge/racmix.hpp"
#include "edge/tensor.hpp"

namespace edge {

inline constexpr int kMainBlocks = 5;
inline constexpr int kSideOutputs = 6;

struct NetworkConfig {
  std::array<int, kMainBlocks> channels{16, 32, 48, 64, 80};
  std::array<int, kMainBlocks> subblocks{2, 2, 3, 3, 3};
  std::array<int, kMainBlocks> downsample{1, 2, 4, 8, 16};
  RacmixConfig racmix{};  // `channels` is overridden per block
  int side_outputs = kSideOutputs;

  void validate() const;  // throws ConfigError
  int max_downsample() const { return downsample.back(); }

  /// Flat `key = value` text, the same keys RunConfig accepts.
  std::string to_text() const;
  static NetworkConfig from_text(const std::string& text);

  bool operator==(const NetworkConfig& other) const;
};

struct Conv1x1 {
  Tensor weight;  // out×in×1×1
  Tensor bias;    // out
  int stride = 1;
};

struct SubBlock {
  RacmixBlock racmix;
  Conv1x1 mix;
};

struct MainBlock {
  // transitions[s] projects source s (0 = stem, s > 0 = main block s-1) to
  // this block's channels and resolution. The last one is the predecessor.
  std::vector<Conv1x1> transitions;
  std::vector<SubBlock> subblocks;
};

struct NetworkOutput {
  std::array<Tensor, kSideOutputs> side_logits;
  std::array<Tensor, kSideOutputs> side;  // probabilities, 1×H×W
  Tensor fused_logit;
  Tensor fused;
};

/// Dense edge network: stem, five main blocks of {Racmix + 1×1 conv}
/// sub-blocks with dense 1×1 skip projections, six upsampling heads (one on
/// the stem, one per main block) and a 1×1 fusion over the side logits.
class EdgeNetwork {
 public:
  static EdgeNetwork build(const NetworkConfig& config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  NetworkOutput forward(const Tensor& image) const;

  /// Stable, ordered list of every learnable tensor with its path.
  std::vector<NamedParam> parameters() const;
  std::size_t parameter_count() const;

  /// Parameters of side head `h` (0-based; head 0 sits on the stem).
  std::vector<NamedParam> head_parameters(int h) const;

 private:
  NetworkConfig config_;
  Conv1x1 stem_;  // 3×3, padding 1
  std::array<MainBlock, kMainBlocks> blocks_;
  std::array<Conv1x1, kSideOutputs> heads_;
  Conv1x1 fusion_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-8;
};

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(const std::vector<NamedParam>& params);
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }
  const AdamConfig& config() const { return config_; }

  struct Moments {
    std::vector<float> m, v;
  };
  std::vector<std::pair<std::string, Moments>>& state() { return state_; }
  const std::vector<std::pair<std::string, Moments>>& state() const { return state_; }

 private:
  Moments& moments_for(const std::string& name, std::size_t size);

  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<std::pair<std::string, Moments>> state_;
};

struct TrainItem {
  Tensor image;  // 3×H×W
  Tensor gt;     // 1×H×W binary
};

struct StepResult {
  double loss = 0.0;                             // batch mean, before the update
  std::array<double, kSideOutputs + 1> terms{};  // side 1..6 then fused
};

/// One Adam update on the mean total loss over the batch.
StepResult train_step(EdgeNetwork& net, const std::vector<TrainItem>& batch, Adam& optimizer);

/// Little-endian container: magic "EDGECKPT", u32 version, u32-length config
/// text, i64 step, u32 record count, then per record: u32-length path, u32
/// rank, u32 dims, raw float32 payload. Optimizer moments, when given, are
/// stored as extra records under "adam.m/" and "adam.v/".
void save_checkpoint(const std::string& path, const EdgeNetwork& net, std::int64_t step,
                     const Adam* optimizer = nullptr);

struct LoadedCheckpoint {
  EdgeNetwork net;
  std::int64_t step = 0;
  std::vector<std::pair<std::string, Adam::Moments>> moments;
};

LoadedCheckpoint load_checkpoint(const std::string& path);
/// As above, rejecting files whose config differs from `expected`.
LoadedCheckpoint load_checkpoint(const std::string& path, const NetworkConfig& expected);

}  // namespace edge
