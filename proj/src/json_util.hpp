// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

// Strict JSON field access: unknown keys and wrong types are rejected with a
// message naming the offending field.

#pragma once

#include "occfield/errors.hpp"
#include "occfield/geometry.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string>

namespace occ::jsonutil {

using nlohmann::json;

inline void require_object(const json& j, const std::string& context) {
    if (!j.is_object()) {
        throw ConfigError(context + ": expected a JSON object");
    }
}

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& context) {
    require_object(j, context);
    const std::set<std::string> known(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError(context + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
T get_or(const json& j, const char* key, const T& fallback, const std::string& context) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(context + "." + key + ": " + e.what());
    }
}

template <typename T>
T get_required(const json& j, const char* key, const std::string& context) {
    if (!j.contains(key)) {
        throw ConfigError(context + ": missing required key '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(context + "." + key + ": " + e.what());
    }
}

inline Vec3 vec3_from(const json& j, const std::string& context) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError(context + ": expected an array of 3 numbers");
    }
    try {
        return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
    } catch (const json::exception& e) {
        throw ConfigError(context + ": " + e.what());
    }
}

inline json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json roi_to(const RoiBox& roi) { return json{{"min", vec3_to(roi.min())}, {"max", vec3_to(roi.max())}}; }

inline RoiBox roi_from(const json& j, const std::string& context) {
    reject_unknown_keys(j, {"min", "max"}, context);
    try {
        return RoiBox(vec3_from(j.at("min"), context + ".min"), vec3_from(j.at("max"), context + ".max"));
    } catch (const json::exception& e) {
        throw ConfigError(context + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ConfigError(context + ": " + e.what());
    }
}

inline json load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline void save_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("write failed on '" + path.string() + "'");
    }
}

} // namespace occ::jsonutil
