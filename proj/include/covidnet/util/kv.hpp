#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace covidnet::util {

/// One `key = value` entry with its 1-based source line.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Parses `key = value` lines. Blank lines and text after `#` are ignored.
/// Throws std::invalid_argument on a line without `=` or with an empty key.
std::vector<KeyValue> parse_key_values(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

std::size_t parse_size(const KeyValue& kv);
double parse_double(const KeyValue& kv);
std::uint64_t parse_u64(const KeyValue& kv);
bool parse_bool(const KeyValue& kv);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace covidnet::util
