#include "cli/schema.hpp"

#include <cmath>
#include <map>

#include "scalerl/error.hpp"

namespace scalerl::cli {
namespace {

const std::map<std::string, nlohmann::json>& parsed() {
  static const auto all = [] {
    std::map<std::string, nlohmann::json> m;
    for (const auto& [name, body] : embedded_schemas()) m.emplace(name, nlohmann::json::parse(body));
    return m;
  }();
  return all;
}

std::string where(const std::string& at) { return at.empty() ? "/" : at; }

bool has_type(const nlohmann::json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()));
  if (t == "number") return v.is_number();
  return false;
}

void check(const nlohmann::json& v, const nlohmann::json& s, const std::string& at, std::vector<std::string>& errs) {
  if (s.contains("$ref")) {
    check(v, schema(s["$ref"].get<std::string>()), at, errs);
    return;
  }
  if (s.contains("type")) {
    const auto& t = s["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = has_type(v, t.get<std::string>());
    } else {
      for (const auto& one : t) ok = ok || has_type(v, one.get<std::string>());
    }
    if (!ok) {
      errs.push_back(where(at) + ": expected type " + t.dump() + ", found " + v.type_name());
      return;
    }
  }
  if (s.contains("enum")) {
    bool ok = false;
    for (const auto& e : s["enum"]) ok = ok || e == v;
    if (!ok) errs.push_back(where(at) + ": " + v.dump() + " is not one of " + s["enum"].dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) errs.push_back(where(at) + ": below minimum " + s["minimum"].dump());
    if (s.contains("maximum") && x > s["maximum"].get<double>()) errs.push_back(where(at) + ": above maximum " + s["maximum"].dump());
  }
  if (v.is_object()) {
    if (s.contains("required")) {
      for (const auto& key : s["required"]) {
        if (!v.contains(key.get<std::string>())) errs.push_back(where(at) + ": missing required key '" + key.get<std::string>() + "'");
      }
    }
    const nlohmann::json none = nlohmann::json::object();
    const auto& props = s.contains("properties") ? s["properties"] : none;
    for (const auto& [key, child] : v.items()) {
      const std::string here = at + "/" + key;
      if (props.contains(key)) {
        check(child, props[key], here, errs);
      } else if (s.contains("additionalProperties")) {
        const auto& extra = s["additionalProperties"];
        if (extra.is_boolean()) {
          if (!extra.get<bool>()) errs.push_back(here + ": unexpected key");
        } else {
          check(child, extra, here, errs);
        }
      }
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
      errs.push_back(where(at) + ": fewer than " + s["minItems"].dump() + " items");
    }
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
      errs.push_back(where(at) + ": more than " + s["maxItems"].dump() + " items");
    }
    if (s.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], at + "/" + std::to_string(i), errs);
    }
  }
}

}  // namespace

std::vector<std::string> schema_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : parsed()) out.push_back(name);
  return out;
}

const nlohmann::json& schema(const std::string& name) {
  const auto& all = parsed();
  const auto it = all.find(name);
  if (it == all.end()) throw InputError("unknown schema '" + name + "'");
  return it->second;
}

std::vector<std::string> check_schema(const nlohmann::json& doc, const std::string& name) {
  std::vector<std::string> errs;
  check(doc, schema(name), "", errs);
  return errs;
}

}  // namespace scalerl::cli
