#pragma once

#include <set>
#include <string>

#include "json.hpp"

#include "taskgraph/error.hpp"

namespace taskgraph {

/// Reads fields from a JSON object and rejects keys that were never asked for.
class ObjectReader {
public:
    ObjectReader(const nlohmann::json& doc, std::string context) : doc_(doc), context_(std::move(context)) {
        if (!doc_.is_object()) throw ValidationError(context_ + ": expected a JSON object");
    }

    /// Leaves `out` untouched when the key is absent.
    template <class T>
    void optional(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = doc_.find(key);
        if (it == doc_.end()) return;
        out = convert<T>(*it, key);
    }

    template <class T>
    T required(const std::string& key) {
        seen_.insert(key);
        auto it = doc_.find(key);
        if (it == doc_.end()) throw ValidationError(context_ + ": missing key '" + key + "'");
        return convert<T>(*it, key);
    }

    bool has(const std::string& key) const { return doc_.contains(key); }

    const nlohmann::json& child(const std::string& key) {
        seen_.insert(key);
        auto it = doc_.find(key);
        if (it == doc_.end()) throw ValidationError(context_ + ": missing key '" + key + "'");
        return *it;
    }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            if (!seen_.count(key)) throw ValidationError(context_ + ": unknown key '" + key + "'");
        }
    }

private:
    template <class T>
    T convert(const nlohmann::json& v, const std::string& key) const {
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ValidationError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ValidationError("");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                        throw ValidationError("");
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ValidationError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ValidationError("");
            }
            return v.get<T>();
        } catch (const std::exception&) {
            throw ValidationError(context_ + ": key '" + key + "' has the wrong type");
        }
    }

    const nlohmann::json& doc_;
    std::string context_;
    std::set<std::string> seen_;
};

}  // namespace taskgraph
