// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace occ::cli {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "OCCFIELD_OUT_DIR";

/// Record written next to the outputs of every command, including failed ones.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    /// Effective configuration after defaults and flag overrides.
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    int threads = 1;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    /// Stage name -> wall-clock seconds.
    std::map<std::string, double> timings;
    nlohmann::json summary = nlohmann::json::object();
    int exit_code = 0;
    std::string error;

    nlohmann::json to_json() const;
};

/// "fnv1a64:<hex>" of the canonical (sorted-key, compact) dump; independent of
/// the key order the config was written in.
std::string config_hash(const nlohmann::json& config);

/// Runs one command line. Exit codes: 0 success, 1 invalid input or config,
/// 2 runtime failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace occ::cli
