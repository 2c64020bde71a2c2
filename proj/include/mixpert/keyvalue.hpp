// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// "key = value" text used by manifests and config files. Blank lines and
// lines starting with '#' are ignored.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mixpert {

class KeyValues {
 public:
  static KeyValues parse(std::string_view text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  void set(const std::string& key, std::string value);
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Shortest round-trip decimal representation.
std::string format_double(double v);
std::string join(const std::vector<std::string>& items, std::string_view sep);
std::vector<std::string> split_list(std::string_view text, char sep = ',');

}  // namespace mixpert
