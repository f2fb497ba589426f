#include "covidnet/util/kv.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace covidnet::util {

namespace {

[[noreturn]] void bad_value(const KeyValue& kv, const char* expected) {
  throw std::invalid_argument("line " + std::to_string(kv.line) + ": value '" + kv.value +
                              "' for key '" + kv.key + "' is not " + expected);
}

}  // namespace

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  parts.push_back(current);
  return parts;
}

std::vector<KeyValue> parse_key_values(const std::string& text) {
  std::vector<KeyValue> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("line " + std::to_string(number) + ": expected 'key = value'");
    }
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), number};
    if (kv.key.empty()) throw std::invalid_argument("line " + std::to_string(number) + ": empty key");
    entries.push_back(std::move(kv));
  }
  return entries;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::size_t parse_size(const KeyValue& kv) {
  if (kv.value.empty() || kv.value.find_first_not_of("0123456789") != std::string::npos) {
    bad_value(kv, "a non-negative integer");
  }
  errno = 0;
  const unsigned long long v = std::strtoull(kv.value.c_str(), nullptr, 10);
  if (errno == ERANGE) bad_value(kv, "in range");
  return static_cast<std::size_t>(v);
}

std::uint64_t parse_u64(const KeyValue& kv) { return static_cast<std::uint64_t>(parse_size(kv)); }

double parse_double(const KeyValue& kv) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(kv.value.c_str(), &end);
  if (kv.value.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    bad_value(kv, "a finite number");
  }
  return v;
}

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1" || kv.value == "yes") return true;
  if (kv.value == "false" || kv.value == "0" || kv.value == "no") return false;
  bad_value(kv, "a boolean");
}

std::string format_double(double value) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, result.ptr);
}

}  // namespace covidnet::util
