#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace edge {

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// anything else without '=' or with a repeated key is a ConfigError.
std::vector<KeyValue> parse_key_values(std::string_view text);

int parse_int(const KeyValue& kv);
double parse_double(const KeyValue& kv);
bool parse_bool(const KeyValue& kv);
std::vector<int> parse_int_list(const KeyValue& kv);
std::vector<double> parse_double_list(const KeyValue& kv);

}  // namespace edge
