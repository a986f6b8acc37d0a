#include <cstring>
#include <fstream>
#include <map>

#include "edge/error.hpp"
#include "edge/network.hpp"

namespace edge {
namespace {

constexpr char kMagic[8] = {'E', 'D', 'G', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw CheckpointError("cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void i64(std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    bytes(b, 8);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(std::span<const float> v) {
    for (float f : v) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      u32(bits);
    }
  }
  void record(const std::string& name, const Shape& shape, std::span<const float> values) {
    str(name);
    u32(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) u32(static_cast<std::uint32_t>(d));
    floats(values);
  }
  void finish() {
    out_.flush();
    if (!out_) throw CheckpointError("write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw CheckpointError("cannot open checkpoint '" + path + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CheckpointError("checkpoint truncated");
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::int64_t i64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<std::int64_t>(v);
  }
  std::string str(std::uint32_t limit = 1u << 20) {
    const std::uint32_t n = u32();
    if (n > limit) throw CheckpointError("checkpoint string length out of range");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<float> floats(std::size_t n) {
    std::vector<float> v(n);
    for (float& f : v) {
      const std::uint32_t bits = u32();
      std::memcpy(&f, &bits, 4);
    }
    return v;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
};

}  // namespace

void save_checkpoint(const std::string& path, const EdgeNetwork& net, std::int64_t step, const Adam* optimizer) {
  const auto params = net.parameters();
  std::size_t records = params.size();
  if (optimizer != nullptr) records += 2 * optimizer->state().size();
  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.str(net.config().to_text());
  w.i64(step);
  w.u32(static_cast<std::uint32_t>(records));
  for (const auto& [name, t] : params) w.record(name, t.shape(), t.data());
  if (optimizer != nullptr) {
    for (const auto& [name, m] : optimizer->state()) {
      const Shape flat{static_cast<int>(m.m.size())};
      w.record("adam.m/" + name, flat, m.m);
      w.record("adam.v/" + name, flat, m.v);
    }
  }
  w.finish();
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  NetworkConfig config;
  try {
    config = NetworkConfig::from_text(r.str());
    config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid config echo: ") + e.what());
  }
  LoadedCheckpoint loaded{EdgeNetwork::build(config, 0), r.i64(), {}};
  std::map<std::string, Tensor> expected;
  for (auto& [name, t] : loaded.net.parameters()) expected.emplace(name, t);

  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> moments;
  std::vector<std::string> moment_order;  // file order, which is the optimizer's order
  const std::uint32_t count = r.u32();
  std::size_t seen = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("record '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
    const std::size_t n = shape_numel(shape);
    if (n > (1u << 28)) throw CheckpointError("record '" + name + "' too large");
    std::vector<float> values = r.floats(n);

    const bool is_m = name.rfind("adam.m/", 0) == 0;
    const bool is_v = name.rfind("adam.v/", 0) == 0;
    if (is_m || is_v) {
      const std::string key = name.substr(7);
      if (!moments.count(key)) moment_order.push_back(key);
      auto& slot = moments[key];
      (is_m ? slot.first : slot.second) = std::move(values);
      continue;
    }
    auto it = expected.find(name);
    if (it == expected.end()) throw CheckpointError("unexpected parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_str(shape) + ", config expects " +
                            shape_str(it->second.shape()));
    }
    std::copy(values.begin(), values.end(), it->second.data().begin());
    ++seen;
  }
  if (seen != expected.size()) throw CheckpointError("checkpoint is missing parameters");
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint records");
  for (const std::string& name : moment_order) {
    auto& mv = moments[name];
    auto it = expected.find(name);
    if (it == expected.end() || mv.first.size() != it->second.numel() || mv.second.size() != it->second.numel()) {
      throw CheckpointError("optimizer state for '" + name + "' does not match the network");
    }
    loaded.moments.emplace_back(name, Adam::Moments{std::move(mv.first), std::move(mv.second)});
  }
  return loaded;
}

LoadedCheckpoint load_checkpoint(const std::string& path, const NetworkConfig& expected) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  if (!(loaded.net.config() == expected)) {
    throw CheckpointError("checkpoint config does not match the requested network configuration");
  }
  return loaded;
}

}  // namespace edge
