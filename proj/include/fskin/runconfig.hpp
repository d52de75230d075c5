#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fskin {

/// key = value run configuration, one binding per line. '#' starts a
/// comment, blank lines are ignored, whitespace around key and value is
/// trimmed. Duplicate keys keep the last binding. Lines without '=' raise
/// errors naming file and line.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin);
std::map<std::string, std::string> parse_config_file(const std::string& path);

/// 64-bit FNV-1a over each file's name and bytes in argument order,
/// hex-encoded. Content-addressed: renames change it, timestamps do not.
std::string content_hash(std::span<const std::string> paths);

/// Per-run provenance record written next to every command's outputs.
struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;  // resolved snapshot, post-override
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, double>> phase_seconds;  // in insertion order
    std::string input_hash;

    void add_phase(const std::string& name, double seconds);
    double total_seconds() const;

    /// JSON document with the fields above; phases keep insertion order.
    void write(const std::string& path) const;
};

/// Monotonic stopwatch for manifest phases.
class PhaseTimer {
public:
    PhaseTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    }
    void restart() { start_ = std::chrono::steady_clock::now(); }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace fskin
