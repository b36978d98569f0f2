#pragma once

// Reads known keys out of a JSON object and records every key that is not
// recognized or has the wrong type, so config errors can be reported together.

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace cinegen {

class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::vector<std::string>& problems, std::string prefix)
      : j_(j), problems_(problems), prefix_(std::move(prefix)) {
    if (!j_.is_object() && !j_.is_null()) problems_.push_back(prefix_ + " (expected an object)");
  }
  FieldReader(const FieldReader&) = delete;
  FieldReader& operator=(const FieldReader&) = delete;

  ~FieldReader() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.contains(key)) problems_.push_back(prefix_ + key + " (unknown key)");
  }

  template <typename V>
  bool read(const std::string& key, V& dst) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return false;
    try {
      dst = j_.at(key).template get<V>();
      return true;
    } catch (const nlohmann::json::exception&) {
      problems_.push_back(prefix_ + key + " (wrong type)");
      return false;
    }
  }

  /// Marks a key as handled by the caller.
  const nlohmann::json* take(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void problem(const std::string& key, const std::string& why) {
    problems_.push_back(prefix_ + key + " (" + why + ")");
  }

 private:
  const nlohmann::json& j_;
  std::vector<std::string>& problems_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace cinegen
