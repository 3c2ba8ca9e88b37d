#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nearfield {

/// Fixed-format float for reports: 17 significant digits, locale-free, so
/// identical runs produce byte-identical files.
std::string format_double(double v);

/// Minimal streaming JSON writer with deterministic output. Non-finite
/// numbers are emitted as null.
class JsonWriter {
 public:
  JsonWriter& begin_object();
  JsonWriter& end_object();
  JsonWriter& begin_array();
  JsonWriter& end_array();
  JsonWriter& key(const std::string& k);
  JsonWriter& value(double v);
  JsonWriter& value(int v);
  JsonWriter& value(long v);
  JsonWriter& value(bool v);
  JsonWriter& value(const std::string& v);
  JsonWriter& value(const char* v);
  JsonWriter& null_value();
  /// key + scalar in one call.
  template <typename T>
  JsonWriter& field(const std::string& k, const T& v) {
    key(k);
    return value(v);
  }
  JsonWriter& field_array(const std::string& k, const std::vector<double>& vs);

  std::string str() const { return out_; }

 private:
  void separator();
  void newline();
  std::string out_;
  std::vector<char> stack_;  // '{' or '['
  std::vector<bool> first_;
  bool pending_key_ = false;
};

/// FNV-1a 64-bit hash of a byte string (scene fingerprints in reports).
std::uint64_t fnv1a(const std::string& bytes);
std::string hash_hex(std::uint64_t h);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace nearfield
