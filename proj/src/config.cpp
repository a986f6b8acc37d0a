#include "edge/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "edge/error.hpp"
#include "edge/keyvalue.hpp"

namespace edge {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const KeyValue& kv, const char* expected) {
  throw ConfigError("line " + std::to_string(kv.line) + ": " + kv.key + " expects " + expected + ", got '" +
                    kv.value + "'");
}

std::vector<std::string> split_list(const KeyValue& kv) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(kv.value);
  while (std::getline(is, cur, ',')) parts.push_back(trim(cur));
  if (parts.empty() || (parts.size() == 1 && parts[0].empty())) return {};
  return parts;
}

int to_int(const KeyValue& kv, const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(kv, "an integer");
  return v;
}

double to_double(const KeyValue& kv, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) bad_value(kv, "a number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(kv, "a number");
  }
}

template <typename T>
std::string join(const T& values) {
  std::ostringstream os;
  os.precision(10);
  bool first = true;
  for (const auto& v : values) {
    os << (first ? "" : ", ") << v;
    first = false;
  }
  return os.str();
}

}  // namespace

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::set<std::string> seen;
  int number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++number;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected 'key = value', got '" + line + "'");
    }
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), number};
    if (kv.key.empty()) throw ConfigError("line " + std::to_string(number) + ": empty key");
    if (!seen.insert(kv.key).second) {
      throw ConfigError("line " + std::to_string(number) + ": duplicate key '" + kv.key + "'");
    }
    out.push_back(std::move(kv));
  }
  return out;
}

int parse_int(const KeyValue& kv) { return to_int(kv, kv.value); }

double parse_double(const KeyValue& kv) { return to_double(kv, kv.value); }

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1" || kv.value == "yes") return true;
  if (kv.value == "false" || kv.value == "0" || kv.value == "no") return false;
  bad_value(kv, "true or false");
}

std::vector<int> parse_int_list(const KeyValue& kv) {
  std::vector<int> out;
  for (const std::string& s : split_list(kv)) out.push_back(to_int(kv, s));
  return out;
}

std::vector<double> parse_double_list(const KeyValue& kv) {
  std::vector<double> out;
  for (const std::string& s : split_list(kv)) out.push_back(to_double(kv, s));
  return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::string network_text;
  for (const KeyValue& kv : parse_key_values(text)) {
    const std::string& k = kv.key;
    if (k.rfind("network.", 0) == 0 || k.rfind("racmix.", 0) == 0) {
      network_text += k + " = " + kv.value + "\n";
    } else if (k == "augment.rotations") cfg.augment.rotations = parse_int(kv);
    else if (k == "augment.crop") cfg.augment.crop_size = parse_int(kv);
    else if (k == "augment.gammas") cfg.augment.gammas = parse_double_list(kv);
    else if (k == "augment.split") cfg.augment.split = parse_bool(kv);
    else if (k == "eval.maxdist") cfg.eval.maxdist = parse_double(kv);
    else if (k == "eval.thresholds") {
      const int n = parse_int(kv);
      if (n < 1) bad_value(kv, "a positive count");
      cfg.eval.thresholds = EvalConfig::default_thresholds(n);
    } else if (k == "eval.f_beta") cfg.eval.f_beta = parse_double(kv);
    else if (k == "eval.nms") cfg.eval.apply_nms = parse_bool(kv);
    else if (k == "train.lr") cfg.train.adam.lr = parse_double(kv);
    else if (k == "train.weight_decay") cfg.train.adam.weight_decay = parse_double(kv);
    else if (k == "train.beta1") cfg.train.adam.beta1 = parse_double(kv);
    else if (k == "train.beta2") cfg.train.adam.beta2 = parse_double(kv);
    else if (k == "train.eps") cfg.train.adam.eps = parse_double(kv);
    else if (k == "train.batch_size") cfg.train.batch_size = parse_int(kv);
    else if (k == "train.steps") cfg.train.steps = parse_int(kv);
    else if (k == "train.checkpoint_every") cfg.train.checkpoint_every = parse_int(kv);
    else if (k == "seed") {
      const int s = parse_int(kv);
      if (s < 0) bad_value(kv, "a non-negative integer");
      cfg.seed = static_cast<std::uint64_t>(s);
    } else {
      throw ConfigError("line " + std::to_string(kv.line) + ": unknown key '" + k + "'");
    }
  }
  cfg.network = NetworkConfig::from_text(network_text);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << network.to_text();
  os << "augment.rotations = " << augment.rotations << '\n'
     << "augment.crop = " << augment.crop_size << '\n'
     << "augment.gammas = " << join(augment.gammas) << '\n'
     << "augment.split = " << (augment.split ? "true" : "false") << '\n'
     << "eval.maxdist = " << eval.maxdist << '\n'
     << "eval.thresholds = " << eval.thresholds.size() << '\n'
     << "eval.f_beta = " << eval.f_beta << '\n'
     << "eval.nms = " << (eval.apply_nms ? "true" : "false") << '\n'
     << "train.lr = " << train.adam.lr << '\n'
     << "train.weight_decay = " << train.adam.weight_decay << '\n'
     << "train.beta1 = " << train.adam.beta1 << '\n'
     << "train.beta2 = " << train.adam.beta2 << '\n'
     << "train.eps = " << train.adam.eps << '\n'
     << "train.batch_size = " << train.batch_size << '\n'
     << "train.steps = " << train.steps << '\n'
     << "train.checkpoint_every = " << train.checkpoint_every << '\n'
     << "seed = " << seed << '\n';
  return os.str();
}

void RunConfig::validate() const {
  network.validate();
  augment.validate();
  eval.validate();
  if (!(train.adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (train.adam.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (!(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(train.adam.eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
}

}  // namespace edge
