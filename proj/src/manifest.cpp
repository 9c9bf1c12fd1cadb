#include "dcl/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <json.hpp>

#include "dcl/digest.hpp"
#include "dcl/error.hpp"

namespace dcl {

using json = nlohmann::json;

void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
    json j{{"format", "dcl-manifest"},
           {"version", 1},
           {"command", m.command},
           {"argv", m.argv},
           {"effective_config", m.effective_config},
           {"seed", m.seed},
           {"inputs", m.inputs},
           {"outputs", m.outputs},
           {"scorer_digest", m.scorer_digest},
           {"tool_version", m.tool_version},
           {"started_at", m.started_at},
           {"finished_at", m.finished_at}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open manifest " + path.string());
    try {
        json j;
        in >> j;
        if (j.value("format", "") != "dcl-manifest") throw InputError(path.string() + ": not a run manifest");
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.effective_config = j.at("effective_config").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.scorer_digest = j.at("scorer_digest").get<std::string>();
        m.tool_version = j.at("tool_version").get<std::string>();
        m.started_at = j.at("started_at").get<std::string>();
        m.finished_at = j.at("finished_at").get<std::string>();
        return m;
    } catch (const json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::vector<std::string> stale_inputs(const RunManifest& m) {
    std::vector<std::string> stale;
    for (const auto& [path, digest] : m.inputs) {
        std::error_code ec;
        if (!std::filesystem::exists(path, ec) || sha256_file(path) != digest) stale.push_back(path);
    }
    return stale;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace dcl
