#include "fskin/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fskin {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                     ": expected key=value, got '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty()) {
            throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                     ": empty key");
        }
        out[key] = trim(stripped.substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string content_hash(std::span<const std::string> paths) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const char* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(data[i]);
            h *= 0x100000001b3ull;
        }
    };
    for (const std::string& path : paths) {
        mix(path.data(), path.size());
        mix("\0", 1);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot hash missing input: " + path);
        char chunk[65536];
        while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
            mix(chunk, static_cast<std::size_t>(in.gcount()));
        }
        mix("\0", 1);
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

void RunManifest::add_phase(const std::string& name, double seconds) {
    if (seconds < 0.0) throw std::invalid_argument("manifest phase time must be >= 0");
    phase_seconds.emplace_back(name, seconds);
}

double RunManifest::total_seconds() const {
    double total = 0.0;
    for (const auto& [name, s] : phase_seconds) total += s;
    return total;
}

void RunManifest::write(const std::string& path) const {
    nlohmann::ordered_json doc;
    doc["command"] = command;
    doc["seed"] = seed;
    doc["input_hash"] = input_hash;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config) cfg[k] = v;
    doc["config"] = std::move(cfg);
    nlohmann::ordered_json phases = nlohmann::ordered_json::object();
    for (const auto& [name, s] : phase_seconds) phases[name] = s;
    doc["phase_seconds"] = std::move(phases);
    doc["total_seconds"] = total_seconds();

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("short write to manifest: " + path);
}

}  // namespace fskin
