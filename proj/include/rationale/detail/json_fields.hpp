#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "rationale/errors.hpp"

namespace rationale::detail {

// Reads optional named fields from a JSON object and rejects any key that
// was never asked for.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& object, std::string context)
      : object_(object), context_(std::move(context)) {
    if (!object_.is_object()) throw ConfigError(context_ + ": expected an object");
  }

  template <class T>
  bool read(const char* key, T& out) {
    known_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
    return true;
  }

  bool has(const char* key) {
    known_.insert(key);
    return object_.contains(key);
  }

  const nlohmann::json& at(const char* key) {
    known_.insert(key);
    return object_.at(key);
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it)
      if (!known_.count(it.key())) throw ConfigError(context_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const nlohmann::json& object_;
  std::string context_;
  std::set<std::string> known_;
};

}  // namespace rationale::detail
