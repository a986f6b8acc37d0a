#include "edge/network.hpp"

#include <cmath>
#include <sstream>

#include "edge/error.hpp"
#include "edge/keyvalue.hpp"
#include "edge/loss.hpp"
#include "edge/ops.hpp"

namespace edge {

void NetworkConfig::validate() const {
  if (side_outputs != kSideOutputs) {
    throw ConfigError("network must have exactly 6 side outputs, got " + std::to_string(side_outputs));
  }
  int previous = 1;
  for (int b = 0; b < kMainBlocks; ++b) {
    if (channels[b] < 1) throw ConfigError("network.channels entries must be positive");
    if (subblocks[b] < 1) throw ConfigError("network.subblocks entries must be >= 1");
    if (downsample[b] < previous || downsample[b] % previous != 0) {
      throw ConfigError("network.downsample must be non-decreasing with each factor dividing the next");
    }
    previous = downsample[b];
    RacmixConfig rc = racmix;
    rc.channels = channels[b];
    rc.validate();
  }
}

namespace {

std::string join(const std::array<int, kMainBlocks>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  return s;
}

std::array<int, kMainBlocks> five(const KeyValue& kv) {
  const std::vector<int> v = parse_int_list(kv);
  if (v.size() != kMainBlocks) {
    throw ConfigError("line " + std::to_string(kv.line) + ": " + kv.key + " needs 5 values");
  }
  std::array<int, kMainBlocks> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace

std::string NetworkConfig::to_text() const {
  std::ostringstream os;
  os << "network.channels = " << join(channels) << '\n'
     << "network.subblocks = " << join(subblocks) << '\n'
     << "network.downsample = " << join(downsample) << '\n'
     << "network.side_outputs = " << side_outputs << '\n'
     << "racmix.heads = " << racmix.heads << '\n'
     << "racmix.kernel_size = " << racmix.kernel_size << '\n'
     << "racmix.window_radius = " << racmix.window_radius << '\n';
  return os.str();
}

NetworkConfig NetworkConfig::from_text(const std::string& text) {
  NetworkConfig cfg;
  for (const KeyValue& kv : parse_key_values(text)) {
    if (kv.key == "network.channels") cfg.channels = five(kv);
    else if (kv.key == "network.subblocks") cfg.subblocks = five(kv);
    else if (kv.key == "network.downsample") cfg.downsample = five(kv);
    else if (kv.key == "network.side_outputs") cfg.side_outputs = parse_int(kv);
    else if (kv.key == "racmix.heads") cfg.racmix.heads = parse_int(kv);
    else if (kv.key == "racmix.kernel_size") cfg.racmix.kernel_size = parse_int(kv);
    else if (kv.key == "racmix.window_radius") cfg.racmix.window_radius = parse_int(kv);
    else throw ConfigError("line " + std::to_string(kv.line) + ": unknown network key '" + kv.key + "'");
  }
  return cfg;
}

bool NetworkConfig::operator==(const NetworkConfig& o) const {
  return channels == o.channels && subblocks == o.subblocks && downsample == o.downsample &&
         side_outputs == o.side_outputs && racmix.heads == o.racmix.heads &&
         racmix.kernel_size == o.racmix.kernel_size && racmix.window_radius == o.racmix.window_radius;
}

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  t.set_requires_grad(true);
  return t;
}

Conv1x1 make_conv(int out, int in, int k, double bound, Rng& rng, int stride = 1) {
  Conv1x1 c;
  c.weight = uniform({out, in, k, k}, bound, rng);
  c.bias = Tensor(Shape{out}, 0.0f).set_requires_grad(true);
  c.stride = stride;
  return c;
}

Tensor apply(const Conv1x1& c, const Tensor& x, int padding = 0) {
  return conv2d(x, c.weight, c.bias, c.stride, padding);
}

void append(std::vector<NamedParam>& out, const std::string& prefix, const Conv1x1& c) {
  out.emplace_back(prefix + "weight", c.weight);
  out.emplace_back(prefix + "bias", c.bias);
}

}  // namespace

EdgeNetwork EdgeNetwork::build(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  EdgeNetwork net;
  net.config_ = config;
  const auto& ch = config.channels;
  net.stem_ = make_conv(ch[0], 3, 3, std::sqrt(6.0 / 27.0), rng);

  std::vector<int> source_channels{ch[0]};
  for (int b = 0; b < kMainBlocks; ++b) {
    MainBlock& blk = net.blocks_[b];
    const double sources = static_cast<double>(source_channels.size());
    for (std::size_t s = 0; s < source_channels.size(); ++s) {
      const int src_factor = s == 0 ? 1 : config.downsample[s - 1];
      const double bound = std::sqrt(3.0 / (source_channels[s] * sources));
      blk.transitions.push_back(
          make_conv(ch[b], source_channels[s], 1, bound, rng, config.downsample[b] / src_factor));
    }
    RacmixConfig rc = config.racmix;
    rc.channels = ch[b];
    for (int sb = 0; sb < config.subblocks[b]; ++sb) {
      SubBlock sub;
      sub.racmix = RacmixBlock::create(rc, rng);
      sub.mix = make_conv(ch[b], ch[b], 1, 0.5 * std::sqrt(3.0 / ch[b]), rng);
      blk.subblocks.push_back(std::move(sub));
    }
    source_channels.push_back(ch[b]);
  }
  for (int h = 0; h < kSideOutputs; ++h) {
    net.heads_[h] = make_conv(1, source_channels[h], 1, 1.0 / std::sqrt(source_channels[h]), rng);
  }
  net.fusion_.weight = Tensor(Shape{1, kSideOutputs, 1, 1}, 1.0f / kSideOutputs).set_requires_grad(true);
  net.fusion_.bias = Tensor(Shape{1}, 0.0f).set_requires_grad(true);
  return net;
}

NetworkOutput EdgeNetwork::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("network input must be 3×H×W, got " + shape_str(image.shape()));
  }
  const int h = image.dim(1), w = image.dim(2);
  const int f = config_.max_downsample();
  if (h % f != 0 || w % f != 0) {
    throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by the downsample factor " + std::to_string(f));
  }

  std::vector<Tensor> sources{relu(apply(stem_, image, 1))};
  for (int b = 0; b < kMainBlocks; ++b) {
    const MainBlock& blk = blocks_[b];
    Tensor x;
    for (std::size_t s = 0; s < blk.transitions.size(); ++s) {
      Tensor projected = apply(blk.transitions[s], sources[s]);
      x = x.defined() ? add(x, projected) : projected;
    }
    for (const SubBlock& sub : blk.subblocks) {
      const Tensor mixed = racmix_forward(x, sub.racmix);
      x = relu(add(apply(sub.mix, mixed), x));
    }
    sources.push_back(x);
  }

  NetworkOutput out;
  for (int hd = 0; hd < kSideOutputs; ++hd) {
    const int factor = hd == 0 ? 1 : config_.downsample[hd - 1];
    // The 1×1 head and the bilinear resize are both linear and the resize
    // weights sum to one, so projecting first gives the same map at 1/C cost.
    out.side_logits[hd] = bilinear_upsample(apply(heads_[hd], sources[hd]), factor);
    out.side[hd] = sigmoid(out.side_logits[hd]);
  }
  out.fused_logit = apply(fusion_, concat_channels(out.side_logits));
  out.fused = sigmoid(out.fused_logit);
  return out;
}

std::vector<NamedParam> EdgeNetwork::parameters() const {
  std::vector<NamedParam> out;
  append(out, "stem.", stem_);
  for (int b = 0; b < kMainBlocks; ++b) {
    const std::string bp = "block" + std::to_string(b + 1) + ".";
    for (std::size_t s = 0; s < blocks_[b].transitions.size(); ++s) {
      append(out, bp + "transition" + std::to_string(s) + ".", blocks_[b].transitions[s]);
    }
    for (std::size_t sb = 0; sb < blocks_[b].subblocks.size(); ++sb) {
      const std::string sp = bp + "sub" + std::to_string(sb + 1) + ".";
      for (auto& p : blocks_[b].subblocks[sb].racmix.parameters(sp + "racmix.")) out.push_back(std::move(p));
      append(out, sp + "mix.", blocks_[b].subblocks[sb].mix);
    }
  }
  for (int h = 0; h < kSideOutputs; ++h) append(out, "head" + std::to_string(h + 1) + ".", heads_[h]);
  append(out, "fusion.", fusion_);
  return out;
}

std::size_t EdgeNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

std::vector<NamedParam> EdgeNetwork::head_parameters(int h) const {
  if (h < 0 || h >= kSideOutputs) throw ContractError("head index out of range");
  std::vector<NamedParam> out;
  append(out, "head" + std::to_string(h + 1) + ".", heads_[h]);
  return out;
}

StepResult train_step(EdgeNetwork& net, const std::vector<TrainItem>& batch, Adam& optimizer) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  for (const TrainItem& item : batch) {
    require_binary(item.gt);
    if (item.gt.rank() != 3 || item.gt.dim(0) != 1 || item.gt.dim(1) != item.image.dim(1) ||
        item.gt.dim(2) != item.image.dim(2)) {
      throw DataError("ground truth " + shape_str(item.gt.shape()) + " does not match image " +
                      shape_str(item.image.shape()));
    }
  }
  const auto params = net.parameters();
  for (const auto& [name, t] : params) {
    Tensor p = t;
    p.zero_grad();
  }
  StepResult result;
  const float inv = 1.0f / static_cast<float>(batch.size());
  for (const TrainItem& item : batch) {
    const NetworkOutput out = net.forward(item.image);
    std::vector<Tensor> terms;
    for (int h = 0; h < kSideOutputs; ++h) terms.push_back(balanced_bce(out.side[h], item.gt));
    terms.push_back(balanced_bce(out.fused, item.gt));
    Tensor total = terms[0];
    for (std::size_t t = 1; t < terms.size(); ++t) total = add(total, terms[t]);
    for (std::size_t t = 0; t < terms.size(); ++t) result.terms[t] += terms[t].item() * inv;
    result.loss += static_cast<double>(total.item()) * inv;
    backward(scale(total, inv));
  }
  optimizer.step(params);
  return result;
}

}  // namespace edge
