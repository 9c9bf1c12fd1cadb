#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dcl {

inline constexpr const char* kToolVersion = "0.1.0";

/// Provenance record written next to every command's outputs.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;  // full argument list, program name excluded
    std::string effective_config;   // TOML dump of every option after precedence
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;   // path -> sha256
    std::map<std::string, std::string> outputs;  // file name (relative to out dir) -> sha256
    std::string scorer_digest;
    std::string tool_version = kToolVersion;
    std::string started_at;
    std::string finished_at;
};

void save_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);

/// Recomputes every input digest; returns the paths that differ or vanished.
std::vector<std::string> stale_inputs(const RunManifest& m);

std::string utc_timestamp();

}  // namespace dcl
